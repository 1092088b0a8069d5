"""Period scheduling: who gets measured in which slot, decided by shared seed.

A period is `period_seconds / slot_seconds` slots; one slot holds the
measurements running concurrently, so the per-slot requirement sum may
never exceed team capacity. Old relays land in slots drawn uniformly from
the currently feasible ones, keyed by (seed, authority_id, relay_id), so
every authority can recompute everyone's placement but a relay cannot
predict its own slot without the seed. New relays go FIFO into the
earliest feasible slot after they arrive.

Slots are stored sparsely: an absent index is an empty slot.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .model import MeasurementParams, Team, check_bandwidth
from .planner import required_rate
from .randomness import Stream, derive_key

REJECTION_ATTEMPTS = 64


class NoFeasibleSlot(RuntimeError):
    """No slot in the remaining period can hold this measurement."""

    def __init__(self, relay_id: str):
        super().__init__(f"no-feasible-slot-this-period: relay {relay_id!r}")
        self.relay_id = relay_id


@dataclass(frozen=True)
class SlotEntry:
    relay_id: str
    required_bps: int


@dataclass(frozen=True)
class Placement:
    """Where a late arrival ended up, and how long it had to wait."""

    relay_id: str
    slot_index: int
    arrival_s: int
    completion_s: int

    @property
    def latency_s(self) -> int:
        return self.completion_s - self.arrival_s


class Schedule:
    """Sparse slot table plus the capacity bookkeeping to extend it safely."""

    def __init__(
        self,
        period_start: int,
        slot_seconds: int,
        slot_count: int,
        team_capacity_bps: int,
        seed_hex: str,
        authority_id: str,
    ):
        if slot_seconds < 1:
            raise ValueError(f"slot_seconds must be >= 1, got {slot_seconds}")
        if slot_count < 1:
            raise ValueError(f"slot_count must be >= 1, got {slot_count}")
        check_bandwidth(team_capacity_bps, "team capacity")
        self.period_start = period_start
        self.slot_seconds = slot_seconds
        self.slot_count = slot_count
        self.team_capacity_bps = team_capacity_bps
        self.seed_hex = seed_hex
        self.authority_id = authority_id
        self._entries: dict[int, list[SlotEntry]] = {}
        self._allocated: dict[int, int] = {}
        self._slots_by_relay: dict[str, list[int]] = {}

    def allocated_bps(self, index: int) -> int:
        return self._allocated.get(index, 0)

    def residual_bps(self, index: int) -> int:
        return self.team_capacity_bps - self.allocated_bps(index)

    def entries(self, index: int) -> tuple[SlotEntry, ...]:
        return tuple(self._entries.get(index, ()))

    def occupied_slots(self) -> list[int]:
        return sorted(self._entries)

    def slots_for(self, relay_id: str) -> tuple[int, ...]:
        return tuple(self._slots_by_relay.get(relay_id, ()))

    def slot_start(self, index: int) -> int:
        return self.period_start + index * self.slot_seconds

    @property
    def total_allocated_bps(self) -> int:
        return sum(self._allocated.values())

    @property
    def relay_count(self) -> int:
        return len(self._slots_by_relay)

    def add(
        self, index: int, relay_id: str, required_bps: int, allow_repeat: bool = False
    ) -> None:
        if not 0 <= index < self.slot_count:
            raise ValueError(f"slot index {index} outside [0, {self.slot_count})")
        check_bandwidth(required_bps, "required_bps")
        if required_bps > self.residual_bps(index):
            raise ValueError(
                f"slot {index} cannot hold {required_bps} more bits/s "
                f"(residual {self.residual_bps(index)})"
            )
        if not allow_repeat and relay_id in self._slots_by_relay:
            raise ValueError(f"relay {relay_id!r} is already scheduled")
        self._entries.setdefault(index, []).append(SlotEntry(relay_id, required_bps))
        self._allocated[index] = self.allocated_bps(index) + required_bps
        self._slots_by_relay.setdefault(relay_id, []).append(index)

    def to_json_dict(self) -> dict:
        return {
            "period_start": self.period_start,
            "slot_seconds": self.slot_seconds,
            "slot_count": self.slot_count,
            "team_capacity_bps": self.team_capacity_bps,
            "seed_hex": self.seed_hex,
            "authority_id": self.authority_id,
            "slots": [
                {
                    "index": index,
                    "entries": [
                        {"relay_id": e.relay_id, "required_bps": e.required_bps}
                        for e in self._entries[index]
                    ],
                }
                for index in self.occupied_slots()
            ],
        }


def schedule_from_json_dict(data: dict) -> Schedule:
    schedule = Schedule(
        period_start=data["period_start"],
        slot_seconds=data["slot_seconds"],
        slot_count=data["slot_count"],
        team_capacity_bps=data["team_capacity_bps"],
        seed_hex=data["seed_hex"],
        authority_id=data["authority_id"],
    )
    for slot in data["slots"]:
        for entry in slot["entries"]:
            schedule.add(
                slot["index"],
                entry["relay_id"],
                entry["required_bps"],
                allow_repeat=True,
            )
    return schedule


def save_schedule(path: str, schedule: Schedule) -> None:
    with open(path, "w") as fh:
        json.dump(schedule.to_json_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_schedule(path: str) -> Schedule:
    with open(path) as fh:
        return schedule_from_json_dict(json.load(fh))


def _draw_slot(
    schedule: Schedule, required_bps: int, stream: Stream, attempts: int
) -> Optional[int]:
    """Uniform feasible-slot draw: rejection first, enumeration fallback."""
    for _ in range(attempts):
        index = stream.below(schedule.slot_count)
        if schedule.residual_bps(index) >= required_bps:
            return index
    feasible = [
        index
        for index in range(schedule.slot_count)
        if schedule.residual_bps(index) >= required_bps
    ]
    if not feasible:
        return None
    return feasible[stream.below(len(feasible))]


def build_period_schedule(
    old_relays: Sequence[tuple[str, int]],
    team: Team,
    params: MeasurementParams,
    seed: bytes,
    authority_id: str,
    period_start: int = 0,
) -> tuple[Schedule, tuple[str, ...]]:
    """Place every known relay once, descending requirement, seeded draws.

    old_relays are (relay_id, prior_estimate_bps) pairs. Returns the
    schedule plus the relays that fit nowhere (each retried once on a
    fresh derived stream before being reported).
    """
    ids = [rid for rid, _ in old_relays]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate relay ids in old_relays")
    schedule = Schedule(
        period_start=period_start,
        slot_seconds=params.slot_seconds,
        slot_count=params.slot_count,
        team_capacity_bps=team.capacity_bps,
        seed_hex=seed.hex(),
        authority_id=authority_id,
    )
    # a relay the team cannot fully provision still gets a slot, at the
    # whole-team rate: its plan will run saturated rather than not at all
    requirements = sorted(
        (
            (min(required_rate(z0, params), team.capacity_bps), rid)
            for rid, z0 in old_relays
        ),
        key=lambda pair: (-pair[0], pair[1]),
    )
    infeasible: list[str] = []
    for required_bps, relay_id in requirements:
        stream = Stream(derive_key(seed, "slot", authority_id, relay_id))
        index = _draw_slot(schedule, required_bps, stream, REJECTION_ATTEMPTS)
        if index is None:
            retry = Stream(derive_key(seed, "slot-retry", authority_id, relay_id))
            index = _draw_slot(schedule, required_bps, retry, REJECTION_ATTEMPTS)
        if index is None:
            infeasible.append(relay_id)
            continue
        schedule.add(index, relay_id, required_bps)
    return schedule, tuple(infeasible)


def insert_new_relay(
    schedule: Schedule,
    relay_id: str,
    guess_bps: int,
    params: MeasurementParams,
    arrival_s: int = 0,
) -> Placement:
    """Place a newly appeared relay in the earliest feasible slot.

    arrival_s is relative to period start. A slot starting exactly at the
    arrival instant is eligible; mid-slot arrivals wait for the next
    boundary. Inserting arrivals in order gives FIFO service. Raises
    NoFeasibleSlot when the rest of the period is too full.
    """
    if arrival_s < 0:
        raise ValueError(f"arrival_s must be >= 0, got {arrival_s}")
    required_bps = min(required_rate(guess_bps, params), schedule.team_capacity_bps)
    first = -(-arrival_s // schedule.slot_seconds)
    for index in range(first, schedule.slot_count):
        if schedule.residual_bps(index) >= required_bps:
            schedule.add(index, relay_id, required_bps)
            return Placement(
                relay_id=relay_id,
                slot_index=index,
                arrival_s=arrival_s,
                completion_s=(index + 1) * schedule.slot_seconds,
            )
    raise NoFeasibleSlot(relay_id)


def greedy_min_schedule(
    relays: Sequence[tuple[str, int]],
    team: Team,
    params: MeasurementParams,
    authority_id: str = "greedy",
) -> Schedule:
    """Pack all relays into as few slots as a largest-first greedy manages.

    relays are (relay_id, capacity_bps) pairs; each needs f * capacity.
    Slots fill in order, always taking the largest remaining requirement
    that still fits (ties toward the smallest relay_id).
    """
    ids = [rid for rid, _ in relays]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate relay ids")
    if not relays:
        raise ValueError("nothing to schedule")
    team_capacity = team.capacity_bps
    items = sorted(
        ((required_rate(cap, params), rid) for rid, cap in relays),
        key=lambda pair: (-pair[0], pair[1]),
    )
    for required_bps, relay_id in items:
        if required_bps > team_capacity:
            raise ValueError(
                f"unschedulable-relay: {relay_id!r} needs {required_bps} bits/s, "
                f"team capacity is {team_capacity}"
            )

    placements: list[tuple[int, int, str]] = []  # (slot, required, relay)
    taken = [False] * len(items)
    head, tail = 0, len(items) - 1
    remaining = len(items)
    slot_index = 0
    while remaining:
        residual = team_capacity
        i = head
        while i <= tail:
            if not taken[i] and items[i][0] <= residual:
                taken[i] = True
                residual -= items[i][0]
                remaining -= 1
                placements.append((slot_index, items[i][0], items[i][1]))
                if not remaining:
                    break
                while taken[tail]:
                    tail -= 1
                if residual < items[tail][0]:
                    break
            i += 1
        while head <= tail and taken[head]:
            head += 1
        slot_index += 1
    used_slots = slot_index

    schedule = Schedule(
        period_start=0,
        slot_seconds=params.slot_seconds,
        slot_count=used_slots,
        team_capacity_bps=team_capacity,
        seed_hex="0" * 64,
        authority_id=authority_id,
    )
    for slot, required_bps, relay_id in placements:
        schedule.add(slot, relay_id, required_bps)
    return schedule
