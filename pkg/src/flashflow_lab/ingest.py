"""Consensus-archive and measured-capacity CSV ingestion.

Two row shapes, both strict about headers and value ranges:

  snapshots:   timestamp,relay_id,advertised_bw_bps,consensus_weight
  measurements: timestamp,relay_id,measured_bps

All time windows in this package are half-open [a, b): a snapshot at the
left edge is in, one at the right edge is out.
"""

from __future__ import annotations

import csv
from bisect import bisect_left
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

from .model import (
    RelaySnapshot,
    as_fraction,
    ceil_fraction,
    check_bandwidth,
    decimal_str,
)

SNAPSHOT_HEADER = ["timestamp", "relay_id", "advertised_bw_bps", "consensus_weight"]
MEASUREMENT_HEADER = ["timestamp", "relay_id", "measured_bps"]
CAPACITY_HEADER = ["relay_id", "capacity_bps"]

DEFAULT_LOOKBACK_S = 30 * 86400


class ParseError(ValueError):
    """Malformed CSV input; carries the offending line number."""

    def __init__(self, path: str, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line


class NoDataError(LookupError):
    """A query found nothing in the requested window."""


@dataclass(frozen=True)
class MeasuredSample:
    timestamp: int
    relay_id: str
    measured_bps: int

    def __post_init__(self) -> None:
        if self.timestamp < 0:
            raise ValueError(f"timestamp must be >= 0, got {self.timestamp}")
        if not self.relay_id:
            raise ValueError("relay_id must be non-empty")
        check_bandwidth(self.measured_bps, "measured capacity")


class Archive:
    """Immutable index over consensus snapshots.

    Per relay: timestamps sorted ascending (duplicates rejected). Per
    timestamp: the set of relays present, for normalizing weights.
    """

    def __init__(self, snapshots: Iterable[RelaySnapshot]):
        by_relay: dict[str, list[RelaySnapshot]] = {}
        by_time: dict[int, dict[str, RelaySnapshot]] = {}
        count = 0
        for snap in snapshots:
            count += 1
            at_time = by_time.setdefault(snap.timestamp, {})
            if snap.relay_id in at_time:
                raise ValueError(
                    f"duplicate snapshot for relay {snap.relay_id!r} "
                    f"at t={snap.timestamp}"
                )
            at_time[snap.relay_id] = snap
            by_relay.setdefault(snap.relay_id, []).append(snap)
        for rows in by_relay.values():
            rows.sort(key=lambda s: s.timestamp)
        self._by_relay = by_relay
        self._by_time = by_time
        self._times_by_relay = {
            rid: [s.timestamp for s in rows] for rid, rows in by_relay.items()
        }
        self._weight_totals: dict[int, Fraction] = {}
        self._count = count

    def __len__(self) -> int:
        return self._count

    @property
    def relay_ids(self) -> list[str]:
        return sorted(self._by_relay)

    @property
    def timestamps(self) -> list[int]:
        return sorted(self._by_time)

    def snapshots_for(self, relay_id: str) -> Sequence[RelaySnapshot]:
        return tuple(self._by_relay.get(relay_id, ()))

    def snapshot_at(self, relay_id: str, t: int) -> RelaySnapshot | None:
        return self._by_time.get(t, {}).get(relay_id)

    def relays_at(self, t: int) -> list[str]:
        return sorted(self._by_time.get(t, {}))

    def weight_total_at(self, t: int) -> Fraction:
        """Sum of consensus weights over relays present at t (cached)."""
        if t not in self._weight_totals:
            at_time = self._by_time.get(t, {})
            self._weight_totals[t] = sum(
                (s.consensus_weight for s in at_time.values()), Fraction(0)
            )
        return self._weight_totals[t]

    def window(self, relay_id: str, t: int, p: int) -> list[RelaySnapshot]:
        """Snapshots for one relay with timestamp in [t-p, t)."""
        if p <= 0:
            raise ValueError(f"window length must be > 0, got {p}")
        rows = self._by_relay.get(relay_id, [])
        times = self._times_by_relay.get(relay_id, [])
        lo = bisect_left(times, t - p)
        hi = bisect_left(times, t)
        return rows[lo:hi]

    def window_adv_bw(self, relay_id: str, t: int, p: int) -> list[int]:
        """Advertised-bandwidth multiset over the [t-p, t) window."""
        return [s.advertised_bw_bps for s in self.window(relay_id, t, p)]


class MeasuredCapacityLog:
    """Append-only record of conclusive capacity measurements."""

    def __init__(self, samples: Iterable[MeasuredSample] = ()):
        self._samples: list[MeasuredSample] = sorted(
            samples, key=lambda s: (s.timestamp, s.relay_id)
        )

    def __len__(self) -> int:
        return len(self._samples)

    @property
    def samples(self) -> tuple[MeasuredSample, ...]:
        return tuple(self._samples)

    def add(self, sample: MeasuredSample) -> None:
        self._samples.append(sample)
        # keep the stable (timestamp, relay) order that writers rely on
        if len(self._samples) > 1 and (
            (sample.timestamp, sample.relay_id)
            < (self._samples[-2].timestamp, self._samples[-2].relay_id)
        ):
            self._samples.sort(key=lambda s: (s.timestamp, s.relay_id))

    def most_recent_per_relay(self, t: int, lookback_s: int) -> dict[str, MeasuredSample]:
        """Latest sample per relay with timestamp in [t-lookback, t)."""
        if lookback_s <= 0:
            raise ValueError(f"lookback must be > 0, got {lookback_s}")
        latest: dict[str, MeasuredSample] = {}
        for sample in self._samples:
            if t - lookback_s <= sample.timestamp < t:
                latest[sample.relay_id] = sample
        return latest


def percentile_capacity(
    log: MeasuredCapacityLog,
    t: int,
    lookback_s: int = DEFAULT_LOOKBACK_S,
    q: Fraction = Fraction(3, 4),
) -> int:
    """Nearest-rank percentile of most-recent-per-relay measured capacities.

    rank = ceil(q*N) over the N distinct relays seen in the lookback window
    (clamped to >= 1, so q=0 returns the minimum). Raises NoDataError when
    the window is empty.
    """
    if not 0 <= q <= 1:
        raise ValueError(f"percentile q must lie in [0,1], got {q}")
    latest = log.most_recent_per_relay(t, lookback_s)
    if not latest:
        raise NoDataError(f"no measurements in [{t - lookback_s}, {t})")
    values = sorted(s.measured_bps for s in latest.values())
    rank = max(1, ceil_fraction(q * len(values)))
    return values[rank - 1]


def _read_rows(path: str, expected_header: list[str]) -> Iterable[tuple[int, list[str]]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(path, 1, "empty file") from None
        if header != expected_header:
            raise ParseError(
                path, 1, f"expected header {','.join(expected_header)!r}, got {header!r}"
            )
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(expected_header):
                raise ParseError(
                    path, line_no, f"expected {len(expected_header)} fields, got {len(row)}"
                )
            yield line_no, row


def _parse_int(path: str, line: int, text: str, what: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ParseError(path, line, f"{what} must be an integer, got {text!r}") from None


def load_archive(path: str) -> Archive:
    """Read a snapshot CSV; raises ParseError with a line number on bad rows."""
    snapshots = []
    for line_no, row in _read_rows(path, SNAPSHOT_HEADER):
        timestamp = _parse_int(path, line_no, row[0], "timestamp")
        try:
            weight = as_fraction(row[3])
            snapshots.append(
                RelaySnapshot(
                    timestamp=timestamp,
                    relay_id=row[1],
                    advertised_bw_bps=_parse_int(
                        path, line_no, row[2], "advertised_bw_bps"
                    ),
                    consensus_weight=weight,
                )
            )
        except (ValueError, ZeroDivisionError) as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(path, line_no, str(exc)) from None
    try:
        return Archive(snapshots)
    except ValueError as exc:
        raise ParseError(path, 1, str(exc)) from None


def save_archive(path: str, snapshots: Iterable[RelaySnapshot]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SNAPSHOT_HEADER)
        for snap in sorted(snapshots, key=lambda s: (s.timestamp, s.relay_id)):
            writer.writerow(
                [
                    snap.timestamp,
                    snap.relay_id,
                    snap.advertised_bw_bps,
                    decimal_str(snap.consensus_weight),
                ]
            )


def load_measured_log(path: str) -> MeasuredCapacityLog:
    samples = []
    for line_no, row in _read_rows(path, MEASUREMENT_HEADER):
        try:
            samples.append(
                MeasuredSample(
                    timestamp=_parse_int(path, line_no, row[0], "timestamp"),
                    relay_id=row[1],
                    measured_bps=_parse_int(path, line_no, row[2], "measured_bps"),
                )
            )
        except ValueError as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(path, line_no, str(exc)) from None
    return MeasuredCapacityLog(samples)


def save_measured_log(path: str, log: MeasuredCapacityLog) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MEASUREMENT_HEADER)
        for sample in log.samples:
            writer.writerow([sample.timestamp, sample.relay_id, sample.measured_bps])


def load_capacity_csv(path: str) -> list[tuple[str, int]]:
    """Read (relay_id, capacity_bps) rows for scheduling commands."""
    relays = []
    seen = set()
    for line_no, row in _read_rows(path, CAPACITY_HEADER):
        relay_id = row[0]
        if not relay_id:
            raise ParseError(path, line_no, "relay_id must be non-empty")
        if relay_id in seen:
            raise ParseError(path, line_no, f"duplicate relay_id {relay_id!r}")
        seen.add(relay_id)
        capacity = _parse_int(path, line_no, row[1], "capacity_bps")
        try:
            check_bandwidth(capacity, "capacity_bps")
        except ValueError as exc:
            raise ParseError(path, line_no, str(exc)) from None
        relays.append((relay_id, capacity))
    return relays


def save_capacity_csv(path: str, relays: Sequence[tuple[str, int]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CAPACITY_HEADER)
        for relay_id, capacity in relays:
            writer.writerow([relay_id, capacity])
