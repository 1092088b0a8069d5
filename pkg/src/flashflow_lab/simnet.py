"""Simulated network: relay behavior models, noisy channels, full periods.

The supply side is exact: each second the measurers offer A_j =
floor(plan.total * eta_j), where eta_j is mean-one multiplicative noise
drawn from a deterministic stream (sigma = 0 means eta = 1 exactly). What
the relay does with that offer depends on its behavior profile:

  honest   carries as much measurement traffic as capacity allows after
           reserving its real background demand on the echo channel
  liar     relays honestly but claims a fixed echo figure, counting on the
           clamp being generous
  forger   answers with up to (1+phi) times the offer by fabricating
           cells, each of which risks an independent content check
  burster  honest at full capacity inside burst slots, at a low capacity
           outside them; per-slot burst state is keyed to the relay (and
           the scenario seed), not to the observing authority

Detected forgeries abort the measurement; that authority records a zero
estimate for the relay (it earned none), and the cross-authority consensus
is the lower median over all authorities, zeros included. Relays that
could not be scheduled at all by some authority likewise count as zero for
that authority.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from fractions import Fraction
from math import comb
from typing import Optional, Sequence, Union

from .model import (
    MeasurementParams,
    MeasurerSpec,
    Team,
    as_fraction,
    check_bandwidth,
    decimal_str,
    lower_median,
    parse_aggregation,
)
from .planner import (
    AllocationPlan,
    accept_estimate,
    greedy_allocate,
    required_rate,
    retry_update,
)
from .protocol import (
    MeasurementRecord,
    aggregate,
    cells_for_bits,
)
from .randomness import Stream, derive_key
from .scheduler import Schedule, build_period_schedule

# ---------------------------------------------------------------------------
# behavior profiles


@dataclass(frozen=True)
class Honest:
    def to_json_dict(self) -> dict:
        return {"kind": "honest"}


@dataclass(frozen=True)
class NormalTrafficLiar:
    """Claims `reported_bps` of echo traffic every second, regardless."""

    reported_bps: int

    def __post_init__(self) -> None:
        check_bandwidth(self.reported_bps, "reported echo")

    def to_json_dict(self) -> dict:
        return {"kind": "liar", "reported_bps": self.reported_bps}


@dataclass(frozen=True)
class Forger:
    """Fabricates cells to answer with (1+phi) times the offered traffic."""

    phi: Fraction

    def __post_init__(self) -> None:
        if self.phi < 0:
            raise ValueError(f"phi must be >= 0, got {self.phi}")

    def to_json_dict(self) -> dict:
        return {"kind": "forger", "phi": str(self.phi)}


@dataclass(frozen=True)
class Burster:
    """Runs at low capacity except in slots it guesses to burst through."""

    burst_prob: Fraction
    low_bps: int

    def __post_init__(self) -> None:
        if not 0 <= self.burst_prob <= 1:
            raise ValueError(f"burst_prob must lie in [0,1], got {self.burst_prob}")
        check_bandwidth(self.low_bps, "low capacity")

    def to_json_dict(self) -> dict:
        return {"kind": "burster", "q": str(self.burst_prob), "low_bps": self.low_bps}


Profile = Union[Honest, NormalTrafficLiar, Forger, Burster]


def profile_from_json_dict(data: dict) -> Profile:
    kind = data.get("kind")
    if kind == "honest":
        return Honest()
    if kind == "liar":
        return NormalTrafficLiar(reported_bps=int(data["reported_bps"]))
    if kind == "forger":
        return Forger(phi=as_fraction(data["phi"]))
    if kind == "burster":
        return Burster(burst_prob=as_fraction(data["q"]), low_bps=int(data["low_bps"]))
    raise ValueError(f"unknown profile kind: {kind!r}")


@dataclass(frozen=True)
class SimRelay:
    """One relay under test: true capacity, background demand, behavior."""

    relay_id: str
    capacity_bps: int
    background_bps: Union[int, tuple[int, ...]] = 0
    profile: Profile = Honest()
    initial_estimate_bps: Optional[int] = None

    def __post_init__(self) -> None:
        if not self.relay_id:
            raise ValueError("relay_id must be non-empty")
        check_bandwidth(self.capacity_bps, "relay capacity")
        if self.capacity_bps < 1:
            raise ValueError("relay capacity must be >= 1 bit/s")
        if isinstance(self.background_bps, tuple):
            if not self.background_bps:
                raise ValueError("background series must be non-empty")
            for value in self.background_bps:
                check_bandwidth(value, "background demand")
        else:
            check_bandwidth(self.background_bps, "background demand")
        if self.initial_estimate_bps is not None:
            check_bandwidth(self.initial_estimate_bps, "initial estimate")
            if self.initial_estimate_bps < 1:
                raise ValueError("initial estimate must be >= 1 bit/s")

    def background_at(self, second: int) -> int:
        if isinstance(self.background_bps, tuple):
            return self.background_bps[(second - 1) % len(self.background_bps)]
        return self.background_bps

    @property
    def prior_bps(self) -> int:
        if self.initial_estimate_bps is not None:
            return self.initial_estimate_bps
        return self.capacity_bps


@dataclass(frozen=True)
class SimChannel:
    """Mean-one lognormal supply noise; sigma = 0 is the exact channel."""

    sigma: Fraction = Fraction(0)

    def __post_init__(self) -> None:
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")


@dataclass(frozen=True)
class AuthoritySpec:
    authority_id: str
    team: Team
    seed: Optional[bytes] = None

    def __post_init__(self) -> None:
        if not self.authority_id:
            raise ValueError("authority_id must be non-empty")


@dataclass(frozen=True)
class AuthorityEnsemble:
    authorities: tuple[AuthoritySpec, ...]

    def __post_init__(self) -> None:
        if not self.authorities:
            raise ValueError("an ensemble needs at least one authority")
        ids = [a.authority_id for a in self.authorities]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate authority ids: {ids}")

    def consensus(self, estimates: Sequence[int]) -> int:
        """Lower median across authorities; robust to a minority of outliers."""
        if len(estimates) != len(self.authorities):
            raise ValueError(
                f"need one estimate per authority "
                f"({len(self.authorities)}), got {len(estimates)}"
            )
        return lower_median(estimates)


@dataclass(frozen=True)
class Scenario:
    params: MeasurementParams
    ensemble: AuthorityEnsemble
    relays: tuple[SimRelay, ...]
    channel: SimChannel = SimChannel()
    period_start: int = 0

    def __post_init__(self) -> None:
        ids = [r.relay_id for r in self.relays]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate relay ids: {ids}")
        if not self.relays:
            raise ValueError("a scenario needs at least one relay")

    def relay(self, relay_id: str) -> SimRelay:
        for r in self.relays:
            if r.relay_id == relay_id:
                return r
        raise KeyError(relay_id)


# ---------------------------------------------------------------------------
# one measurement


def _floor_frac_mul(value: int, frac: Fraction) -> int:
    return (value * frac.numerator) // frac.denominator


def _honest_second(
    capacity: int, background: int, offered: int, r: Fraction
) -> tuple[int, int]:
    """(relayed, claimed-echo) for a relay that plays by the rules.

    The relay first reserves its real background demand on the echo
    channel (at most the protocol share r of capacity), fills the rest
    with measurement traffic, then claims only as much echo as the clamp
    and its remaining capacity allow.
    """
    echo_target = min(background, _floor_frac_mul(capacity, r))
    relayed = min(offered, capacity - echo_target)
    echo_cap = (relayed * r.numerator) // (r.denominator - r.numerator)
    claimed = min(echo_target, echo_cap, capacity - relayed)
    return relayed, claimed


def run_measurement(
    relay: SimRelay,
    plan: AllocationPlan,
    channel: SimChannel,
    params: MeasurementParams,
    stream: Stream,
    round_no: int = 1,
    slot_index: int = 0,
    authority_id: str = "auth0",
    burst_active: bool = True,
) -> MeasurementRecord:
    """Simulate one slot's worth of per-second samples for one relay.

    Stream consumption order per second: one noise draw (skipped entirely
    when sigma is 0), then one check draw per forged cell. A failed check
    aborts the measurement at that second with a zero, inconclusive
    estimate.
    """
    capacity = relay.capacity_bps
    if isinstance(relay.profile, Burster) and not burst_active:
        capacity = relay.profile.low_bps
    raw: list[tuple[int, int]] = []
    failure = None
    for second in range(1, params.slot_seconds + 1):
        ppm = stream.lognormal_ppm(channel.sigma)
        offered = (plan.total_bps * ppm) // 1_000_000
        profile = relay.profile
        if isinstance(profile, NormalTrafficLiar):
            raw.append((min(offered, capacity), profile.reported_bps))
            continue
        if isinstance(profile, Forger):
            real = min(offered, capacity)
            target = min(
                _floor_frac_mul(offered, 1 + profile.phi), plan.total_bps
            )
            forged_bits = max(0, target - real)
            caught = False
            for _ in range(cells_for_bits(forged_bits)):
                if stream.bernoulli(params.check_prob):
                    caught = True
                    break
            if caught:
                failure = "forgery-detected"
                break
            raw.append((target, 0))
            continue
        raw.append(
            _honest_second(
                capacity, relay.background_at(second), offered, params.echo_fraction
            )
        )
    if failure is not None:
        return MeasurementRecord(
            relay_id=relay.relay_id,
            authority_id=authority_id,
            slot_index=slot_index,
            round=round_no,
            strategy=params.aggregation.label(),
            samples=(),
            estimate_bps=0,
            conclusive=False,
            failure=failure,
        )
    result = aggregate(raw, params)
    return MeasurementRecord(
        relay_id=relay.relay_id,
        authority_id=authority_id,
        slot_index=slot_index,
        round=round_no,
        strategy=params.aggregation.label(),
        samples=result.samples,
        estimate_bps=result.estimate_bps,
        conclusive=result.conclusive,
        failure=None,
    )


# ---------------------------------------------------------------------------
# a full period across the ensemble


@dataclass(frozen=True)
class AuthorityMeasurement:
    """One authority's final word on one relay for the period."""

    relay_id: str
    authority_id: str
    estimate_bps: int
    rounds: int
    conclusive: bool
    failure: Optional[str] = None
    records: tuple[MeasurementRecord, ...] = ()


@dataclass(frozen=True)
class PeriodResult:
    consensus: dict[str, int]
    per_authority: dict[str, dict[str, AuthorityMeasurement]]
    schedules: dict[str, Schedule]
    infeasible: dict[str, tuple[str, ...]]

    def max_rounds(self, relay_id: str) -> int:
        return max(
            by_relay[relay_id].rounds
            for by_relay in self.per_authority.values()
            if relay_id in by_relay
        )


def _burst_active(master_seed: bytes, relay: SimRelay, slot_index: int) -> bool:
    profile = relay.profile
    if not isinstance(profile, Burster):
        return True
    stream = Stream(derive_key(master_seed, "burst", relay.relay_id, slot_index))
    return stream.bernoulli(profile.burst_prob)


@dataclass
class _RelayProgress:
    relay: SimRelay
    prior: int
    rounds: int = 0
    previous_saturated: bool = False
    last_estimate: int = 0
    records: list[MeasurementRecord] = field(default_factory=list)
    final: Optional[AuthorityMeasurement] = None

    def finish(
        self, authority_id: str, estimate: int, conclusive: bool, failure=None
    ) -> None:
        self.final = AuthorityMeasurement(
            relay_id=self.relay.relay_id,
            authority_id=authority_id,
            estimate_bps=estimate,
            rounds=self.rounds,
            conclusive=conclusive,
            failure=failure,
            records=tuple(self.records),
        )


def _run_authority_period(
    spec: AuthoritySpec,
    scenario: Scenario,
    master_seed: bytes,
    auth_seed: bytes,
) -> tuple[dict[str, AuthorityMeasurement], Schedule, tuple[str, ...]]:
    params = scenario.params
    team_capacity = spec.team.capacity_bps
    schedule, infeasible = build_period_schedule(
        [(r.relay_id, r.prior_bps) for r in scenario.relays],
        spec.team,
        params,
        auth_seed,
        spec.authority_id,
        period_start=scenario.period_start,
    )
    progress = {
        r.relay_id: _RelayProgress(relay=r, prior=r.prior_bps)
        for r in scenario.relays
    }
    for rid in infeasible:
        progress[rid].finish(spec.authority_id, 0, False, failure="not-scheduled")

    pending: dict[int, list[str]] = {}
    for index in schedule.occupied_slots():
        for entry in schedule.entries(index):
            pending.setdefault(index, []).append(entry.relay_id)
    heap = sorted(pending)

    while heap:
        index = heapq.heappop(heap)
        for relay_id in pending.pop(index, ()):
            state = progress[relay_id]
            if state.final is not None:
                continue
            relay = state.relay
            plan = greedy_allocate(
                spec.team, required_rate(state.prior, params), params, relay_id
            )
            state.rounds += 1
            stream = Stream(
                derive_key(auth_seed, "measure", relay_id, state.rounds)
            )
            record = run_measurement(
                relay,
                plan,
                scenario.channel,
                params,
                stream,
                round_no=state.rounds,
                slot_index=index,
                authority_id=spec.authority_id,
                burst_active=_burst_active(master_seed, relay, index),
            )
            state.records.append(record)
            if record.failure is not None:
                state.finish(spec.authority_id, 0, False, failure=record.failure)
                continue
            z = record.estimate_bps
            state.last_estimate = z
            if accept_estimate(z, plan, params):
                state.finish(spec.authority_id, z, True)
                continue
            if plan.saturated:
                if state.previous_saturated:
                    state.finish(
                        spec.authority_id, z, False, failure="team-saturated"
                    )
                    continue
                state.previous_saturated = True
            else:
                state.previous_saturated = False
            state.prior = retry_update(state.prior, z)
            retry_req = min(required_rate(state.prior, params), team_capacity)
            placed = False
            for later in range(index + 1, schedule.slot_count):
                if schedule.residual_bps(later) >= retry_req:
                    schedule.add(later, relay_id, retry_req, allow_repeat=True)
                    if later not in pending:
                        heapq.heappush(heap, later)
                    pending.setdefault(later, []).append(relay_id)
                    placed = True
                    break
            if not placed:
                state.finish(
                    spec.authority_id, z, False, failure="period-exhausted"
                )

    results = {}
    for relay_id, state in progress.items():
        if state.final is None:
            state.finish(
                spec.authority_id, state.last_estimate, False,
                failure="period-exhausted",
            )
        results[relay_id] = state.final
    return results, schedule, infeasible


def run_period(scenario: Scenario, master_seed: bytes) -> PeriodResult:
    """Run one full measurement period for every authority, then reconcile."""
    per_authority: dict[str, dict[str, AuthorityMeasurement]] = {}
    schedules: dict[str, Schedule] = {}
    infeasible: dict[str, tuple[str, ...]] = {}
    for spec in scenario.ensemble.authorities:
        auth_seed = spec.seed or derive_key(
            master_seed, "authority", spec.authority_id
        )
        results, schedule, missing = _run_authority_period(
            spec, scenario, master_seed, auth_seed
        )
        per_authority[spec.authority_id] = results
        schedules[spec.authority_id] = schedule
        infeasible[spec.authority_id] = missing
    consensus = {}
    for relay in scenario.relays:
        estimates = [
            per_authority[spec.authority_id][relay.relay_id].estimate_bps
            for spec in scenario.ensemble.authorities
        ]
        consensus[relay.relay_id] = scenario.ensemble.consensus(estimates)
    return PeriodResult(
        consensus=consensus,
        per_authority=per_authority,
        schedules=schedules,
        infeasible=infeasible,
    )


def inflation_ratio(
    scenario: Scenario, relay_id: str, master_seed: bytes
) -> Fraction:
    """consensus estimate / true capacity for one relay in one period."""
    result = run_period(scenario, master_seed)
    relay = scenario.relay(relay_id)
    return Fraction(result.consensus[relay_id], relay.capacity_bps)


def weights_from_estimates(estimates: dict[str, int]) -> dict[str, Fraction]:
    """Normalize consensus estimates into routing-weight shares."""
    total = sum(estimates.values())
    if total <= 0:
        raise ValueError("zero-total: no positive estimates to weight")
    return {rid: Fraction(value, total) for rid, value in estimates.items()}


# ---------------------------------------------------------------------------
# burst-attack arithmetic


def burst_attack_failure_probability(n: int, q: Fraction) -> Fraction:
    """Chance a burster is caught low by at least half of n authorities.

    The attack fails when ceil(n/2) or more of the n independently
    scheduled measurements land outside burst slots; each does so with
    probability 1-q. Only odd ensembles are supported: an even split has
    no tie-break and the lower-median consensus would privilege the
    attacker.
    """
    if n < 1 or n % 2 == 0:
        raise ValueError(f"ensemble size must be odd and >= 1, got {n}")
    if not 0 <= q <= 1:
        raise ValueError(f"q must lie in [0,1], got {q}")
    miss = 1 - q
    total = Fraction(0)
    for k in range(-(-n // 2), n + 1):
        total += comb(n, k) * miss**k * q ** (n - k)
    return total


# ---------------------------------------------------------------------------
# reference scenarios for attack evaluation


def liar_reference_scenario(
    r: Fraction,
    capacity_bps: int = 250_000_000,
    n_authorities: int = 3,
) -> Scenario:
    """One echo-overclaiming relay against a comfortable ensemble, no noise."""
    params = MeasurementParams(echo_fraction=r)
    team = Team(
        measurers=(
            MeasurerSpec("m0", 2_000_000_000, cpu_cores=8),
            MeasurerSpec("m1", 2_000_000_000, cpu_cores=8),
        )
    )
    ensemble = AuthorityEnsemble(
        authorities=tuple(
            AuthoritySpec(authority_id=f"auth{i}", team=team)
            for i in range(n_authorities)
        )
    )
    relay = SimRelay(
        relay_id="liar0",
        capacity_bps=capacity_bps,
        profile=NormalTrafficLiar(reported_bps=capacity_bps * 10),
    )
    return Scenario(params=params, ensemble=ensemble, relays=(relay,))


def burster_reference_scenario(
    n: int,
    q: Fraction,
    capacity_bps: int = 500_000_000,
    low_bps: int = 50_000_000,
) -> Scenario:
    """One burst-guessing relay; short slots keep Monte-Carlo runs cheap."""
    params = MeasurementParams(slot_seconds=10, period_seconds=28_800)
    team = Team(measurers=(MeasurerSpec("m0", 2_000_000_000, cpu_cores=8),))
    ensemble = AuthorityEnsemble(
        authorities=tuple(
            AuthoritySpec(authority_id=f"auth{i}", team=team) for i in range(n)
        )
    )
    relay = SimRelay(
        relay_id="burst0",
        capacity_bps=capacity_bps,
        profile=Burster(burst_prob=q, low_bps=low_bps),
    )
    return Scenario(params=params, ensemble=ensemble, relays=(relay,))


def burst_attack_mc(
    n: int, q: Fraction, trials: int, master_seed: bytes
) -> Fraction:
    """Observed failure rate of the burst attack over full simulated periods.

    A trial fails (for the attacker) when the consensus lands below the
    relay's burst capacity. Each trial reruns the whole pipeline: seeded
    schedules, per-slot burst states, measurements, lower-median consensus.
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    scenario = burster_reference_scenario(n, q)
    relay = scenario.relays[0]
    failures = 0
    for i in range(trials):
        result = run_period(scenario, derive_key(master_seed, "trial", i))
        if result.consensus[relay.relay_id] < relay.capacity_bps:
            failures += 1
    return Fraction(failures, trials)


# ---------------------------------------------------------------------------
# scenario (de)serialization


def _team_from_json(data: list) -> Team:
    return Team(
        measurers=tuple(
            MeasurerSpec(
                measurer_id=m["id"],
                capacity_bps=int(m["capacity_bps"]),
                cpu_cores=int(m.get("cpu_cores", 4)),
            )
            for m in data
        )
    )


def _team_to_json(team: Team) -> list:
    return [
        {
            "id": m.measurer_id,
            "capacity_bps": m.capacity_bps,
            "cpu_cores": m.cpu_cores,
        }
        for m in team.measurers
    ]


def params_from_json_dict(
    data: dict, base: Optional[MeasurementParams] = None
) -> MeasurementParams:
    """Build params from a JSON override map; omitted keys keep `base` values."""
    defaults = base if base is not None else MeasurementParams()
    kwargs = {}
    for key in ("sockets", "slot_seconds", "period_seconds"):
        if key in data:
            kwargs[key] = int(data[key])
    for key, attr in (
        ("multiplier", "multiplier"),
        ("eps1", "eps1"),
        ("eps2", "eps2"),
        ("echo_fraction", "echo_fraction"),
        ("check_prob", "check_prob"),
    ):
        if key in data:
            kwargs[attr] = as_fraction(data[key])
    if "aggregation" in data:
        kwargs["aggregation"] = parse_aggregation(data["aggregation"])
    unknown = set(data) - {
        "sockets", "slot_seconds", "period_seconds", "multiplier",
        "eps1", "eps2", "echo_fraction", "check_prob", "aggregation",
    }
    if unknown:
        raise ValueError(f"unknown parameter keys: {sorted(unknown)}")
    merged = {**defaults.__dict__, **kwargs}
    return MeasurementParams(**merged)


def params_to_json_dict(params: MeasurementParams) -> dict:
    return {
        "sockets": params.sockets,
        "multiplier": str(params.multiplier),
        "eps1": str(params.eps1),
        "eps2": str(params.eps2),
        "echo_fraction": str(params.echo_fraction),
        "check_prob": str(params.check_prob),
        "slot_seconds": params.slot_seconds,
        "period_seconds": params.period_seconds,
        "aggregation": params.aggregation.label(),
    }


def scenario_from_json_dict(data: dict) -> Scenario:
    params = params_from_json_dict(data.get("params", {}))
    channel = SimChannel(sigma=as_fraction(data.get("sigma", 0)))
    if "authorities" in data:
        authority_specs = []
        for auth in data["authorities"]:
            seed = bytes.fromhex(auth["seed_hex"]) if "seed_hex" in auth else None
            authority_specs.append(
                AuthoritySpec(
                    authority_id=auth["id"],
                    team=_team_from_json(auth["team"]),
                    seed=seed,
                )
            )
    elif "team" in data:
        n = int(data.get("n_authorities", 1))
        team = _team_from_json(data["team"])
        authority_specs = [
            AuthoritySpec(authority_id=f"auth{i}", team=team) for i in range(n)
        ]
    else:
        raise ValueError("scenario needs either 'authorities' or 'team'")
    relays = []
    for entry in data["relays"]:
        background = entry.get("background_bps", 0)
        if isinstance(background, list):
            background = tuple(int(v) for v in background)
        else:
            background = int(background)
        initial = entry.get("initial_estimate_bps")
        relays.append(
            SimRelay(
                relay_id=entry["id"],
                capacity_bps=int(entry["capacity_bps"]),
                background_bps=background,
                profile=profile_from_json_dict(entry.get("profile", {"kind": "honest"})),
                initial_estimate_bps=None if initial is None else int(initial),
            )
        )
    return Scenario(
        params=params,
        ensemble=AuthorityEnsemble(authorities=tuple(authority_specs)),
        relays=tuple(relays),
        channel=channel,
        period_start=int(data.get("period_start", 0)),
    )


def scenario_to_json_dict(scenario: Scenario) -> dict:
    data = {
        "params": params_to_json_dict(scenario.params),
        "sigma": decimal_str(scenario.channel.sigma),
        "period_start": scenario.period_start,
        "authorities": [
            {
                "id": spec.authority_id,
                "team": _team_to_json(spec.team),
                **({"seed_hex": spec.seed.hex()} if spec.seed else {}),
            }
            for spec in scenario.ensemble.authorities
        ],
        "relays": [
            {
                "id": r.relay_id,
                "capacity_bps": r.capacity_bps,
                "background_bps": (
                    list(r.background_bps)
                    if isinstance(r.background_bps, tuple)
                    else r.background_bps
                ),
                "profile": r.profile.to_json_dict(),
                **(
                    {"initial_estimate_bps": r.initial_estimate_bps}
                    if r.initial_estimate_bps is not None
                    else {}
                ),
            }
            for r in scenario.relays
        ],
    }
    return data


def load_scenario(path: str) -> Scenario:
    with open(path) as fh:
        return scenario_from_json_dict(json.load(fh))


def save_scenario(path: str, scenario: Scenario) -> None:
    with open(path, "w") as fh:
        json.dump(scenario_to_json_dict(scenario), fh, indent=2, sort_keys=True)
        fh.write("\n")
