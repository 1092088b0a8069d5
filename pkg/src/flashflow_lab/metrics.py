"""Error metrics comparing self-reported archives against capacity ground truth.

Conventions shared by every metric here:

  * A(r,t)   advertised bandwidth in the snapshot at exactly t
  * C(r,t,p) observed capacity: max advertised value over the window [t-p, t)
  * W(r,t)   consensus weight at t, normalized over relays present at t
  * Cbar     C normalized over relays with non-empty windows at (t,p)

All arithmetic is exact (`Fraction`); undefined cases raise MetricUndefined
subclasses so callers can skip and count them rather than silently zero-fill.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Callable, Mapping, Sequence, Union

from .ingest import Archive
from .model import sqrt_fixed

Number = Union[int, Fraction]


class MetricUndefined(Exception):
    """The metric has no value at this point; safe to skip and count."""


class EmptyWindow(MetricUndefined):
    pass


class MissingSnapshot(MetricUndefined):
    pass


class ZeroDenominator(MetricUndefined):
    pass


class NoQualifyingRelays(MetricUndefined):
    pass


def true_capacity(archive: Archive, relay_id: str, t: int, p: int) -> int:
    """C(r,t,p): the largest advertised value in the relay's [t-p, t) window."""
    values = archive.window_adv_bw(relay_id, t, p)
    if not values:
        raise EmptyWindow(f"empty-window: relay {relay_id!r} at t={t}, p={p}")
    return max(values)


def _advertised_at(archive: Archive, relay_id: str, t: int) -> int:
    snap = archive.snapshot_at(relay_id, t)
    if snap is None:
        raise MissingSnapshot(f"missing-snapshot: relay {relay_id!r} at t={t}")
    return snap.advertised_bw_bps


def relay_capacity_error(archive: Archive, relay_id: str, t: int, p: int) -> Fraction:
    """1 - A(r,t)/C(r,t,p): how far below capacity the relay advertises."""
    advertised = _advertised_at(archive, relay_id, t)
    capacity = true_capacity(archive, relay_id, t, p)
    if capacity == 0:
        raise ZeroDenominator(f"zero-capacity: relay {relay_id!r} at t={t}")
    return 1 - Fraction(advertised, capacity)


def network_capacity_error(archive: Archive, t: int, p: int) -> Fraction:
    """1 - sum(A)/sum(C) over relays where both terms are defined at (t,p)."""
    sum_a = 0
    sum_c = 0
    qualified = False
    for relay_id in archive.relays_at(t):
        values = archive.window_adv_bw(relay_id, t, p)
        if not values:
            continue
        qualified = True
        sum_a += _advertised_at(archive, relay_id, t)
        sum_c += max(values)
    if not qualified:
        raise NoQualifyingRelays(f"no-relay: no qualifying relays at t={t}")
    if sum_c == 0:
        raise ZeroDenominator(f"zero-total: total capacity is 0 at t={t}")
    return 1 - Fraction(sum_a, sum_c)


def normalized_capacity(archive: Archive, relay_id: str, t: int, p: int) -> Fraction:
    """Cbar(r,t,p): this relay's capacity share among relays with windows."""
    own = true_capacity(archive, relay_id, t, p)
    total = 0
    for other in archive.relay_ids:
        values = archive.window_adv_bw(other, t, p)
        if values:
            total += max(values)
    if total == 0:
        raise ZeroDenominator(f"zero-total: total capacity is 0 at t={t}")
    return Fraction(own, total)


def normalized_weight(archive: Archive, relay_id: str, t: int) -> Fraction:
    """W(r,t): consensus-weight share among relays present at t."""
    snap = archive.snapshot_at(relay_id, t)
    if snap is None:
        raise MissingSnapshot(f"missing-snapshot: relay {relay_id!r} at t={t}")
    total = archive.weight_total_at(t)
    if total == 0:
        raise ZeroDenominator(f"zero-total: total weight is 0 at t={t}")
    return snap.consensus_weight / total

def relay_weight_error(archive: Archive, relay_id: str, t: int, p: int) -> Fraction:
    """W(r,t) / Cbar(r,t,p): >1 means the relay is weighted above its share."""
    weight_share = normalized_weight(archive, relay_id, t)
    capacity_share = normalized_capacity(archive, relay_id, t, p)
    if capacity_share == 0:
        raise ZeroDenominator(f"zero-capacity: relay {relay_id!r} at t={t}")
    return weight_share / capacity_share


def network_weight_error(
    weights: Mapping[str, Number], caps: Mapping[str, Number]
) -> Fraction:
    """Total-variation distance between two allocations over the same relays.

    Both maps are normalized exactly to sum 1 first; keys missing on one
    side count as 0 there. Identical distributions give 0, disjoint ones 1.
    """
    total_w = sum(Fraction(v) for v in weights.values())
    total_c = sum(Fraction(v) for v in caps.values())
    if total_w <= 0:
        raise ZeroDenominator("zero-total: weight map sums to 0")
    if total_c <= 0:
        raise ZeroDenominator("zero-total: capacity map sums to 0")
    distance = Fraction(0)
    for key in set(weights) | set(caps):
        w = Fraction(weights.get(key, 0)) / total_w
        c = Fraction(caps.get(key, 0)) / total_c
        distance += abs(w - c)
    return distance / 2


def network_weight_error_at(archive: Archive, t: int, p: int) -> Fraction:
    """Weight-vs-capacity divergence at time t over window p."""
    weights: dict[str, Fraction] = {}
    for relay_id in archive.relays_at(t):
        snap = archive.snapshot_at(relay_id, t)
        weights[relay_id] = snap.consensus_weight
    caps: dict[str, int] = {}
    for relay_id in archive.relay_ids:
        values = archive.window_adv_bw(relay_id, t, p)
        if values:
            caps[relay_id] = max(values)
    if not weights:
        raise NoQualifyingRelays(f"no-relay: no relays present at t={t}")
    if not caps:
        raise NoQualifyingRelays(f"no-relay: no relay has a window at t={t}")
    return network_weight_error(weights, caps)


def relative_std_dev(values: Sequence[Number]) -> Fraction:
    """Population standard deviation over mean, as an exact grid rational."""
    if not values:
        raise NoQualifyingRelays("no-relay: empty value sequence")
    exact = [Fraction(v) for v in values]
    n = len(exact)
    mean = sum(exact) / n
    if mean == 0:
        raise ZeroDenominator("zero-mean: cannot normalize dispersion")
    variance = sum(v * v for v in exact) / n - mean * mean
    if variance < 0:
        variance = Fraction(0)
    return sqrt_fixed(variance) / mean


def rsd_adv_bw(archive: Archive, relay_id: str, t: int, p: int) -> Fraction:
    """Dispersion of one relay's advertised values over the window."""
    values = archive.window_adv_bw(relay_id, t, p)
    if not values:
        raise EmptyWindow(f"empty-window: relay {relay_id!r} at t={t}, p={p}")
    return relative_std_dev(values)


def rsd_weight(archive: Archive, relay_id: str, t: int, p: int) -> Fraction:
    """Dispersion of one relay's normalized weight over the window."""
    shares = []
    for snap in archive.window(relay_id, t, p):
        total = archive.weight_total_at(snap.timestamp)
        if total > 0:
            shares.append(snap.consensus_weight / total)
    if not shares:
        raise EmptyWindow(f"empty-window: relay {relay_id!r} at t={t}, p={p}")
    return relative_std_dev(shares)


RelayMetric = Callable[[Archive, str, int, int], Fraction]

HOUR_S = 3600


def mean_over_hours(
    metric: RelayMetric,
    archive: Archive,
    relay_id: str,
    start: int,
    end: int,
    p: int,
) -> tuple[Fraction, int]:
    """Mean of a relay metric over hourly instants in [start, end).

    Hours where the metric is undefined are skipped; returns (mean, skipped).
    Raises MetricUndefined when no hour in the range has a value.
    """
    if start >= end:
        raise ValueError(f"need start < end, got {start} >= {end}")
    if start % HOUR_S or end % HOUR_S:
        raise ValueError("start and end must be hour-aligned timestamps")
    total = Fraction(0)
    defined = 0
    skipped = 0
    for t in range(start, end, HOUR_S):
        try:
            total += metric(archive, relay_id, t, p)
            defined += 1
        except MetricUndefined:
            skipped += 1
    if defined == 0:
        raise NoQualifyingRelays(
            f"no-defined-hours: relay {relay_id!r} over [{start}, {end})"
        )
    return total / defined, skipped
