"""Deterministic, platform-independent randomness.

Counter-mode SHA-256 over a 256-bit key yields the raw bit stream; labeled
key derivation gives every (authority, relay, purpose) tuple its own
independent stream. All distributions are built from integer and Fraction
arithmetic only, so draws are bit-identical on any platform: no libm calls,
no process-wide RNG state.
"""

from __future__ import annotations

import hashlib
from fractions import Fraction
from typing import Union

from .model import round_half_up

SEED_BYTES = 32
_U64_LIMIT = 1 << 64
_UNIT_DEN = 1 << 53

Label = Union[str, int, bytes]


def seed_from_text(text: str) -> bytes:
    """Turn a CLI seed string into 32 bytes.

    Exactly 64 hex digits are used verbatim; anything else is hashed, so
    human-friendly seeds like "lab-1" work too.
    """
    stripped = text.strip()
    if len(stripped) == 64:
        try:
            return bytes.fromhex(stripped)
        except ValueError:
            pass
    return hashlib.sha256(stripped.encode("utf-8")).digest()


def _encode_label(part: Label) -> bytes:
    if isinstance(part, bytes):
        raw = b"b" + part
    elif isinstance(part, str):
        raw = b"s" + part.encode("utf-8")
    elif isinstance(part, bool):
        raise ValueError("bool is not a valid stream label")
    elif isinstance(part, int):
        raw = b"i" + str(part).encode("ascii")
    else:
        raise ValueError(f"cannot use {part!r} as a stream label")
    return len(raw).to_bytes(4, "big") + raw


def derive_key(key: bytes, *labels: Label) -> bytes:
    """Derive a child key; the length-prefixed encoding keeps it injective."""
    if len(key) != SEED_BYTES:
        raise ValueError(f"key must be {SEED_BYTES} bytes, got {len(key)}")
    h = hashlib.sha256()
    h.update(b"flashflow-lab.derive")
    h.update(key)
    for part in labels:
        h.update(_encode_label(part))
    return h.digest()


class Stream:
    """One independent pseudorandom stream (SHA-256 in counter mode)."""

    __slots__ = ("_key", "_counter", "_pending")

    def __init__(self, key: bytes):
        if len(key) != SEED_BYTES:
            raise ValueError(f"key must be {SEED_BYTES} bytes, got {len(key)}")
        self._key = key
        self._counter = 0
        self._pending: list[int] = []

    def child(self, *labels: Label) -> "Stream":
        return Stream(derive_key(self._key, *labels))

    def u64(self) -> int:
        if not self._pending:
            block = hashlib.sha256(
                self._key + self._counter.to_bytes(8, "big")
            ).digest()
            self._counter += 1
            self._pending = [
                int.from_bytes(block[i : i + 8], "big") for i in (24, 16, 8, 0)
            ]
        return self._pending.pop()

    def below(self, n: int) -> int:
        """Uniform integer in [0, n), unbiased via rejection."""
        if n <= 0:
            raise ValueError(f"below() needs n >= 1, got {n}")
        limit = _U64_LIMIT - (_U64_LIMIT % n)
        while True:
            u = self.u64()
            if u < limit:
                return u % n

    def unit(self) -> Fraction:
        """Uniform dyadic rational in [0, 1) with 53 random bits."""
        return Fraction(self.u64() >> 11, _UNIT_DEN)

    def bernoulli(self, p: Fraction) -> bool:
        """True with exact probability p (a rational in [0, 1])."""
        if not 0 <= p <= 1:
            raise ValueError(f"bernoulli probability out of range: {p}")
        if p == 0:
            return False
        if p == 1:
            return True
        return self.below(p.denominator) < p.numerator

    def normal(self) -> Fraction:
        """Standard-normal surrogate: Irwin-Hall sum of 12 uniforms, centered.

        Mean 0, variance exactly 1, support [-6, 6]; an exact dyadic
        rational, which is what keeps the noise model platform-independent.
        """
        total = 0
        for _ in range(12):
            total += self.u64() >> 11
        return Fraction(total - 6 * _UNIT_DEN, _UNIT_DEN)

    def lognormal_ppm(self, sigma: Fraction) -> int:
        """Mean-one multiplicative noise factor, in parts per million.

        eta = exp(sigma*Z - sigma^2/2) clipped to [1-3*sigma, 1+3*sigma],
        rounded half-up to the 1e-6 grid. sigma = 0 short-circuits to
        exactly 1.0 (1_000_000 ppm).
        """
        if sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {sigma}")
        if sigma == 0:
            return 1_000_000
        exponent = sigma * self.normal() - sigma * sigma / 2
        eta = exp_fraction(exponent)
        lo = max(1 - 3 * sigma, Fraction(0))
        hi = 1 + 3 * sigma
        eta = min(max(eta, lo), hi)
        return round_half_up(eta * 1_000_000)


def exp_fraction(x: Fraction, tol: Fraction = Fraction(1, 10**12)) -> Fraction:
    """Taylor-series exp over exact rationals, truncated below `tol`.

    Deterministic by construction; only meant for the small exponents the
    noise model produces (|x| is validated against a loose sanity bound).
    """
    if abs(x) > 64:
        raise ValueError(f"exp_fraction exponent out of supported range: {x}")
    total = Fraction(1)
    term = Fraction(1)
    k = 1
    while True:
        term *= x / k
        total += term
        if abs(term) < tol and k >= abs(x):
            return total
        k += 1
