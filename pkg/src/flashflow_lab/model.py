"""Core value types and exact-arithmetic helpers shared by every module.

Bandwidths are plain non-negative integers in bits per second (capped at
2**62 so sums of realistic fleets never overflow fixed-width consumers).
Dimensionless quantities (ratios, probabilities, error metrics) are
`fractions.Fraction` end to end; floating point appears only at external
boundaries (CSV emission, figure rendering).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence, Union

MAX_BANDWIDTH = 2**62

# Fixed-point grid for the deterministic rational square root used by the
# dispersion metric: floor to multiples of 1e-12 keeps results exact
# rationals, reproducible bit-for-bit across platforms.
SQRT_SCALE = 10**12


def check_bandwidth(value: int, what: str = "bandwidth") -> int:
    """Validate a bits-per-second integer and return it."""
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValueError(f"{what} must be an int in bits/s, got {value!r}")
    if value < 0:
        raise ValueError(f"{what} must be non-negative, got {value}")
    if value > MAX_BANDWIDTH:
        raise ValueError(f"{what} exceeds 2**62: {value}")
    return value


def as_fraction(value: Union[int, float, str, Fraction, Sequence[int]]) -> Fraction:
    """Coerce a config-file value to an exact Fraction.

    Floats go through their shortest decimal repr, so 0.2 becomes exactly
    1/5 rather than the nearest binary double.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise ValueError(f"cannot interpret {value!r} as a number")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        return Fraction(str(value))
    if isinstance(value, str):
        return Fraction(value)
    if isinstance(value, (list, tuple)) and len(value) == 2:
        return Fraction(int(value[0]), int(value[1]))
    raise ValueError(f"cannot interpret {value!r} as a number")


def floor_fraction(value: Fraction) -> int:
    return value.numerator // value.denominator


def ceil_fraction(value: Fraction) -> int:
    return -((-value.numerator) // value.denominator)


def round_half_up(value: Fraction) -> int:
    """Round to the nearest integer, halves toward +infinity."""
    return floor_fraction(value + Fraction(1, 2))


def lower_median(values: Sequence) -> object:
    """Median that returns the lower of the two middle elements for even counts."""
    if not values:
        raise ValueError("lower_median of an empty sequence")
    ordered = sorted(values)
    return ordered[(len(ordered) - 1) // 2]


def sqrt_fixed(value: Fraction) -> Fraction:
    """Deterministic square root of a non-negative rational, floored to 1e-12.

    Exact whenever the true root lies on the grid (so perfect squares come
    out exact); uses only integer arithmetic, no libm.
    """
    if value < 0:
        raise ValueError("sqrt_fixed of a negative value")
    scaled = value * SQRT_SCALE * SQRT_SCALE
    root = math.isqrt(scaled.numerator // scaled.denominator)
    return Fraction(root, SQRT_SCALE)


def decimal_str(value: Union[int, Fraction]) -> str:
    """Shortest decimal form that round-trips through float, for CSV cells."""
    if isinstance(value, int):
        return str(value)
    return repr(float(value))


@dataclass(frozen=True)
class PlainMedian:
    """Lower median of all per-second throughput sums."""

    def label(self) -> str:
        return "plain-median"


@dataclass(frozen=True)
class SkipLead:
    """Drop the first `skip` seconds (ramp-up), then take the lower median."""

    skip: int

    def __post_init__(self) -> None:
        if self.skip < 0:
            raise ValueError(f"skip-lead count must be >= 0, got {self.skip}")

    def label(self) -> str:
        return f"skip-lead:{self.skip}"


@dataclass(frozen=True)
class DynamicWindow:
    """Stop once consecutive window medians agree within a relative factor.

    Windows are consecutive, non-overlapping runs of `window` samples; the
    estimate is the last examined window's lower median, flagged
    inconclusive when no pair of neighbours ever agreed.
    """

    window: int
    rel_factor: Fraction

    def __post_init__(self) -> None:
        if self.window < 1:
            raise ValueError(f"window must be >= 1, got {self.window}")
        if self.rel_factor <= 0:
            raise ValueError(f"rel_factor must be > 0, got {self.rel_factor}")

    def label(self) -> str:
        return f"dynamic-window:{self.window}:{self.rel_factor}"


Aggregation = Union[PlainMedian, SkipLead, DynamicWindow]


def parse_aggregation(text: str) -> Aggregation:
    """Parse an aggregation label like `plain-median` or `skip-lead:2`."""
    parts = text.strip().split(":")
    kind = parts[0]
    if kind == "plain-median" and len(parts) == 1:
        return PlainMedian()
    if kind == "skip-lead" and len(parts) == 2:
        return SkipLead(skip=int(parts[1]))
    if kind == "dynamic-window" and len(parts) == 3:
        return DynamicWindow(window=int(parts[1]), rel_factor=as_fraction(parts[2]))
    raise ValueError(f"unrecognized aggregation strategy: {text!r}")


@dataclass(frozen=True)
class MeasurementParams:
    """Protocol-wide tunables; defaults mirror the deployed configuration."""

    sockets: int = 160
    multiplier: Fraction = Fraction(9, 4)
    eps1: Fraction = Fraction(1, 5)
    eps2: Fraction = Fraction(1, 20)
    echo_fraction: Fraction = Fraction(1, 4)
    check_prob: Fraction = Fraction(1, 100000)
    slot_seconds: int = 30
    period_seconds: int = 86400
    aggregation: Aggregation = PlainMedian()

    def __post_init__(self) -> None:
        if self.sockets < 1:
            raise ValueError(f"sockets must be >= 1, got {self.sockets}")
        if self.multiplier < 1:
            raise ValueError(f"multiplier must be >= 1, got {self.multiplier}")
        if not 0 < self.eps1 < 1:
            raise ValueError(f"eps1 must lie in (0,1), got {self.eps1}")
        if self.eps2 < 0:
            raise ValueError(f"eps2 must be >= 0, got {self.eps2}")
        if not 0 < self.echo_fraction < 1:
            raise ValueError(
                f"echo_fraction must lie in (0,1), got {self.echo_fraction}"
            )
        if not 0 < self.check_prob <= 1:
            raise ValueError(f"check_prob must lie in (0,1], got {self.check_prob}")
        if self.slot_seconds < 1:
            raise ValueError(f"slot_seconds must be >= 1, got {self.slot_seconds}")
        if self.period_seconds < self.slot_seconds:
            raise ValueError("period_seconds must be >= slot_seconds")
        if self.period_seconds % self.slot_seconds != 0:
            raise ValueError("period_seconds must be a multiple of slot_seconds")

    @property
    def slot_count(self) -> int:
        return self.period_seconds // self.slot_seconds


def excess_factor(params: MeasurementParams) -> Fraction:
    """Over-allocation factor f = m(1+eps2)/(1-eps1) applied to estimates.

    With default parameters this is exactly 189/64 = 2.953125.
    """
    return params.multiplier * (1 + params.eps2) / (1 - params.eps1)


@dataclass(frozen=True)
class MeasurerSpec:
    """One measurement host: stable id, link capacity, usable cores."""

    measurer_id: str
    capacity_bps: int
    cpu_cores: int = 4

    def __post_init__(self) -> None:
        if not self.measurer_id:
            raise ValueError("measurer_id must be non-empty")
        check_bandwidth(self.capacity_bps, "measurer capacity")
        if self.capacity_bps < 1:
            raise ValueError("measurer capacity must be >= 1 bit/s")
        if self.cpu_cores < 1:
            raise ValueError(f"cpu_cores must be >= 1, got {self.cpu_cores}")


@dataclass(frozen=True)
class Team:
    """The set of measurers one authority can draw on."""

    measurers: tuple[MeasurerSpec, ...]

    def __post_init__(self) -> None:
        if not self.measurers:
            raise ValueError("a team needs at least one measurer")
        ids = [m.measurer_id for m in self.measurers]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate measurer ids in team: {ids}")

    @property
    def capacity_bps(self) -> int:
        return sum(m.capacity_bps for m in self.measurers)


@dataclass(frozen=True)
class RelaySnapshot:
    """One relay's row in one archived consensus."""

    timestamp: int
    relay_id: str
    advertised_bw_bps: int
    consensus_weight: Fraction

    def __post_init__(self) -> None:
        if self.timestamp < 0:
            raise ValueError(f"timestamp must be >= 0, got {self.timestamp}")
        if not self.relay_id:
            raise ValueError("relay_id must be non-empty")
        check_bandwidth(self.advertised_bw_bps, "advertised bandwidth")
        if self.consensus_weight < 0:
            raise ValueError(f"consensus_weight must be >= 0, got {self.consensus_weight}")
