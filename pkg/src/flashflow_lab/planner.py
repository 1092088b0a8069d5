"""Per-relay measurement planning: sizing, allocation, accept/retry loop.

A measurement must offer the relay more traffic than it can possibly
carry, or the estimate is bounded by the offer rather than the relay. The
planner sizes each attempt at f = m(1+eps2)/(1-eps1) times the current
prior z0, splits that requirement greedily across the team, and accepts
the observed estimate only when it is small enough (z < total*(1-eps1)/m)
to prove the offer was not the bottleneck. Rejected estimates feed back
into a doubled prior.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Optional, Sequence

from .ingest import MeasuredCapacityLog, NoDataError, percentile_capacity
from .model import (
    MeasurementParams,
    Team,
    ceil_fraction,
    check_bandwidth,
    excess_factor,
    lower_median,
)
from .protocol import MeasurementRecord

STALENESS_HORIZON_S = 31 * 86400
NEW_RELAY_FLOOR_BPS = 10_000_000
MAX_ROUNDS = 64


@dataclass(frozen=True)
class Assignment:
    """One measurer's share of a plan."""

    measurer_id: str
    rate_bps: int
    sockets: int
    processes: int
    per_process_rate_bps: int


@dataclass(frozen=True)
class AllocationPlan:
    """A fully sized measurement: who sends how much, over what sockets."""

    relay_id: str
    required_bps: int
    total_bps: int
    saturated: bool
    assignments: tuple[Assignment, ...]


def greedy_allocate(
    team: Team, required_bps: int, params: MeasurementParams, relay_id: str = ""
) -> AllocationPlan:
    """Assign the requirement to measurers, largest residual capacity first.

    Ties break toward the lexicographically smallest measurer_id. At most
    the last-picked measurer carries a partial load; the plan totals
    min(required, team capacity) and is flagged saturated when the team
    cannot cover the requirement.
    """
    check_bandwidth(required_bps, "required_bps")
    team_capacity = team.capacity_bps
    saturated = team_capacity < required_bps
    remaining = min(required_bps, team_capacity)

    residual = {m.measurer_id: m.capacity_bps for m in team.measurers}
    picked: list[tuple[str, int]] = []
    while remaining > 0:
        best_id = min(residual, key=lambda mid: (-residual[mid], mid))
        take = min(residual[best_id], remaining)
        picked.append((best_id, take))
        del residual[best_id]
        remaining -= take

    if len(picked) > params.sockets:
        raise ValueError(
            f"{len(picked)} participating measurers cannot split "
            f"{params.sockets} sockets"
        )
    assignments = []
    if picked:
        base, extra = divmod(params.sockets, len(picked))
        by_core = {m.measurer_id: m.cpu_cores for m in team.measurers}
        for idx, (mid, rate) in enumerate(picked):
            share = base + (1 if idx < extra else 0)
            processes = min(by_core[mid], share)
            assignments.append(
                Assignment(
                    measurer_id=mid,
                    rate_bps=rate,
                    sockets=share,
                    processes=processes,
                    per_process_rate_bps=rate // processes,
                )
            )
    return AllocationPlan(
        relay_id=relay_id,
        required_bps=required_bps,
        total_bps=sum(a.rate_bps for a in assignments),
        saturated=saturated,
        assignments=tuple(assignments),
    )


def required_rate(z0: int, params: MeasurementParams) -> int:
    """ceil(f * z0): the offered traffic that makes prior z0 testable."""
    check_bandwidth(z0, "prior estimate")
    return ceil_fraction(excess_factor(params) * z0)


def accept_estimate(z: int, plan: AllocationPlan, params: MeasurementParams) -> bool:
    """True when z is provably relay-limited: z < total * (1-eps1) / m, strict."""
    return Fraction(z) < Fraction(plan.total_bps) * (1 - params.eps1) / params.multiplier


def retry_update(z0: int, z: int) -> int:
    """Next prior after a rejected round: max(observed, doubled prior)."""
    return max(z, 2 * z0)


@dataclass(frozen=True)
class RelayStatus:
    """What the authority already knows about a relay, if anything."""

    relay_id: str
    last_estimate_bps: Optional[int] = None
    last_measured_at: Optional[int] = None


def initial_guess(
    status: Optional[RelayStatus],
    log: MeasuredCapacityLog,
    t: int,
    lookback_s: int = 30 * 86400,
    q: Fraction = Fraction(3, 4),
) -> tuple[int, str]:
    """Starting prior for a relay, and where it came from.

    A previous estimate measured within the staleness horizon is reused
    verbatim. Otherwise new (or long-unseen) relays start at the q-th
    percentile of recently measured capacities, or at a fixed floor when
    the log has nothing to offer.
    """
    if (
        status is not None
        and status.last_estimate_bps is not None
        and status.last_measured_at is not None
        and t - STALENESS_HORIZON_S <= status.last_measured_at < t
    ):
        return status.last_estimate_bps, "prior-estimate"
    try:
        return percentile_capacity(log, t, lookback_s, q), "percentile"
    except NoDataError:
        return NEW_RELAY_FLOOR_BPS, "floor"


Executor = Callable[[AllocationPlan, int], MeasurementRecord]


@dataclass(frozen=True)
class MeasurementOutcome:
    """Result of the full accept/retry loop for one relay."""

    relay_id: str
    estimate_bps: int
    rounds: int
    conclusive: bool
    records: tuple[MeasurementRecord, ...]
    failure: Optional[str] = None


def measure_relay(
    relay_id: str,
    z0: int,
    team: Team,
    params: MeasurementParams,
    executor: Executor,
    max_rounds: int = MAX_ROUNDS,
) -> MeasurementOutcome:
    """Run rounds until an estimate is accepted or the team gives out.

    Executor failures (e.g. a detected forgery) end the loop with a zero
    estimate. Two consecutive saturated-and-rejected rounds end it with the
    last observation, flagged inconclusive: offering more is impossible, so
    retrying cannot change the answer.
    """
    if z0 < 1:
        raise ValueError(f"prior estimate must be >= 1 bit/s, got {z0}")
    records: list[MeasurementRecord] = []
    prior = z0
    previous_saturated = False
    z = 0
    for round_no in range(1, max_rounds + 1):
        plan = greedy_allocate(team, required_rate(prior, params), params, relay_id)
        record = executor(plan, round_no)
        records.append(record)
        if record.failure is not None:
            return MeasurementOutcome(
                relay_id=relay_id,
                estimate_bps=0,
                rounds=round_no,
                conclusive=False,
                records=tuple(records),
                failure=record.failure,
            )
        z = record.estimate_bps
        if accept_estimate(z, plan, params):
            return MeasurementOutcome(
                relay_id=relay_id,
                estimate_bps=z,
                rounds=round_no,
                conclusive=True,
                records=tuple(records),
            )
        if plan.saturated:
            if previous_saturated:
                return MeasurementOutcome(
                    relay_id=relay_id,
                    estimate_bps=z,
                    rounds=round_no,
                    conclusive=False,
                    records=tuple(records),
                    failure="team-saturated",
                )
            previous_saturated = True
        else:
            previous_saturated = False
        prior = retry_update(prior, z)
    return MeasurementOutcome(
        relay_id=relay_id,
        estimate_bps=z,
        rounds=max_rounds,
        conclusive=False,
        records=tuple(records),
        failure="round-limit",
    )


def estimate_measurer_capacity(samples: Sequence[tuple[int, int]]) -> int:
    """Calibrate one measurer from 60 per-second (sent, received) pairs.

    Each second contributes min(sent, received); the estimate is the lower
    median, so a minute of warts cannot drag the figure off a sustained
    plateau.
    """
    if len(samples) != 60:
        raise ValueError(f"expected exactly 60 samples, got {len(samples)}")
    floors = []
    for sent, received in samples:
        check_bandwidth(sent, "sent_bps")
        check_bandwidth(received, "received_bps")
        floors.append(min(sent, received))
    return lower_median(floors)
