"""Single-measurement mechanics: clamping, aggregation, content checks.

A measurement is `slot_seconds` one-second samples. Each second the relay
reports bytes echoed back to measurers (y) on top of the measurement
traffic it relayed (x); the echo claim is clamped so that echoed traffic
can never exceed the fraction r of total throughput the protocol grants
it. The per-second totals are then folded into one estimate by a
pluggable aggregation strategy.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .model import (
    Aggregation,
    DynamicWindow,
    MeasurementParams,
    PlainMedian,
    SkipLead,
    ceil_fraction,
    check_bandwidth,
    lower_median,
    round_half_up,
)
from .randomness import Stream, derive_key

CELL_BYTES = 514
CELL_BITS = CELL_BYTES * 8


def clamp_echo(sent_bps: int, echo_bps: int, echo_fraction: Fraction) -> int:
    """Cap the claimed echo rate at floor(x * r / (1-r)).

    At the cap, echoed traffic is exactly the fraction r of the second's
    total x + ybar, so a relay cannot inflate its total by overclaiming
    echo traffic it never carried.
    """
    check_bandwidth(sent_bps, "sent_bps")
    check_bandwidth(echo_bps, "echo_bps")
    cap = (sent_bps * echo_fraction.numerator) // (
        echo_fraction.denominator - echo_fraction.numerator
    )
    return min(echo_bps, cap)


@dataclass(frozen=True)
class PerSecondSample:
    """One second of a measurement, after clamping."""

    second: int
    sent_bps: int
    echo_bps: int
    clamped_echo_bps: int
    total_bps: int


@dataclass(frozen=True)
class AggregationResult:
    samples: tuple[PerSecondSample, ...]
    estimate_bps: int
    conclusive: bool


def aggregate(
    raw_samples: Sequence[tuple[int, int]], params: MeasurementParams
) -> AggregationResult:
    """Clamp each (sent, echo) second and reduce totals to one estimate."""
    if not raw_samples:
        raise ValueError("no samples to aggregate")
    samples = []
    for j, (sent, echo) in enumerate(raw_samples, start=1):
        clamped = clamp_echo(sent, echo, params.echo_fraction)
        samples.append(
            PerSecondSample(
                second=j,
                sent_bps=sent,
                echo_bps=echo,
                clamped_echo_bps=clamped,
                total_bps=sent + clamped,
            )
        )
    totals = [s.total_bps for s in samples]
    estimate, conclusive = _reduce(totals, params.aggregation)
    return AggregationResult(
        samples=tuple(samples), estimate_bps=estimate, conclusive=conclusive
    )


def _reduce(totals: list[int], strategy: Aggregation) -> tuple[int, bool]:
    if isinstance(strategy, PlainMedian):
        return lower_median(totals), True
    if isinstance(strategy, SkipLead):
        if strategy.skip >= len(totals):
            raise ValueError(
                f"skip-exceeds-samples: skip-lead:{strategy.skip} needs more "
                f"than {strategy.skip} samples, got {len(totals)}"
            )
        return lower_median(totals[strategy.skip :]), True
    if isinstance(strategy, DynamicWindow):
        return _reduce_dynamic(totals, strategy)
    raise ValueError(f"unknown aggregation strategy: {strategy!r}")


def _reduce_dynamic(totals: list[int], strategy: DynamicWindow) -> tuple[int, bool]:
    w = strategy.window
    medians = [
        lower_median(totals[i : i + w]) for i in range(0, len(totals) - w + 1, w)
    ]
    if not medians:
        # too few samples for even one full window: best effort, inconclusive
        return lower_median(totals), False
    for k in range(1, len(medians)):
        prev, cur = medians[k - 1], medians[k]
        if cur == prev:
            return cur, True
        if prev > 0 and Fraction(abs(cur - prev), prev) < strategy.rel_factor:
            return cur, True
    return medians[-1], False


@dataclass(frozen=True)
class MeasurementRecord:
    """Everything one authority level keeps about one measurement attempt."""

    relay_id: str
    authority_id: str
    slot_index: int
    round: int
    strategy: str
    samples: tuple[PerSecondSample, ...]
    estimate_bps: int
    conclusive: bool
    failure: Optional[str] = None

    def to_json_dict(self) -> dict:
        return {
            "relay_id": self.relay_id,
            "authority_id": self.authority_id,
            "slot_index": self.slot_index,
            "round": self.round,
            "strategy": self.strategy,
            "estimate_bps": self.estimate_bps,
            "conclusive": self.conclusive,
            "failure": self.failure,
            "samples": [
                {
                    "second": s.second,
                    "sent_bps": s.sent_bps,
                    "echo_bps": s.echo_bps,
                    "clamped_echo_bps": s.clamped_echo_bps,
                    "total_bps": s.total_bps,
                }
                for s in self.samples
            ],
        }


def record_from_json_dict(data: dict) -> MeasurementRecord:
    samples = tuple(
        PerSecondSample(
            second=s["second"],
            sent_bps=s["sent_bps"],
            echo_bps=s["echo_bps"],
            clamped_echo_bps=s["clamped_echo_bps"],
            total_bps=s["total_bps"],
        )
        for s in data["samples"]
    )
    return MeasurementRecord(
        relay_id=data["relay_id"],
        authority_id=data["authority_id"],
        slot_index=data["slot_index"],
        round=data["round"],
        strategy=data["strategy"],
        samples=samples,
        estimate_bps=data["estimate_bps"],
        conclusive=data["conclusive"],
        failure=data.get("failure"),
    )


def cells_for_bits(bits: int) -> int:
    """Cell count covering a bit volume (514-byte cells, rounded up)."""
    if bits < 0:
        raise ValueError(f"bit volume must be >= 0, got {bits}")
    return -(-bits // CELL_BITS)


def forged_cell_count(cells_sent: int, forged_fraction: Fraction) -> int:
    if cells_sent < 0:
        raise ValueError(f"cells_sent must be >= 0, got {cells_sent}")
    if forged_fraction < 0:
        raise ValueError(f"forged_fraction must be >= 0, got {forged_fraction}")
    return round_half_up(Fraction(cells_sent) * forged_fraction)


def evade_probability(forged_cells: int, check_prob: Fraction) -> Fraction:
    """Probability that none of `forged_cells` independent checks fire: (1-p)^k."""
    if forged_cells < 0:
        raise ValueError(f"forged_cells must be >= 0, got {forged_cells}")
    if not 0 <= check_prob <= 1:
        raise ValueError(f"check_prob out of range: {check_prob}")
    return (1 - check_prob) ** forged_cells


def detection_probability(forged_cells: int, check_prob: Fraction) -> Fraction:
    return 1 - evade_probability(forged_cells, check_prob)


def simulate_forgery_detection(
    cells_sent: int,
    forged_fraction: Fraction,
    check_prob: Fraction,
    stream: Stream,
) -> bool:
    """One trial of per-cell spot checks; True when any forged cell is caught."""
    forged = forged_cell_count(cells_sent, forged_fraction)
    for _ in range(forged):
        if stream.bernoulli(check_prob):
            return True
    return False


def forgery_detection_rate(
    cells_sent: int,
    forged_fraction: Fraction,
    check_prob: Fraction,
    trials: int,
    seed: bytes,
) -> Fraction:
    """Monte-Carlo detection rate over many independent measurements.

    Simulates every forged cell's check individually (vectorized), so the
    estimate is a genuine simulation of the per-cell process rather than a
    restatement of the closed form.
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    forged = forged_cell_count(cells_sent, forged_fraction)
    if forged == 0:
        return Fraction(0)
    rng = np.random.default_rng(
        int.from_bytes(derive_key(seed, "forgery-mc", cells_sent, forged), "big")
    )
    p = float(check_prob)
    detected = 0
    chunk_rows = max(1, (1 << 22) // forged)
    remaining = trials
    while remaining > 0:
        rows = min(chunk_rows, remaining)
        hits = rng.random((rows, forged)) < p
        detected += int(hits.any(axis=1).sum())
        remaining -= rows
    return Fraction(detected, trials)
