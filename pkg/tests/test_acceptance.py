"""Acceptance gate: one test per headline criterion.

Each test exercises one end-to-end claim at its stated tolerance and time
budget, and prints a single pass/fail line (visible with `pytest -s`, and
in the captured output on failure).
"""

from __future__ import annotations

import json
import math
import time
from fractions import Fraction

import oracles
from capfixture import CAP_BPS, RELAY_COUNT, TOTAL_BPS, capacity_population
from flashflow_lab import cli
from flashflow_lab import metrics
from flashflow_lab.ingest import save_archive, save_capacity_csv
from flashflow_lab.metrics import MetricUndefined
from flashflow_lab.model import MeasurementParams, MeasurerSpec, RelaySnapshot, Team
from flashflow_lab.protocol import (
    detection_probability,
    forged_cell_count,
    forgery_detection_rate,
)
from flashflow_lab.randomness import Stream, seed_from_text
from flashflow_lab.scheduler import Schedule, greedy_min_schedule, insert_new_relay
from flashflow_lab.simnet import (
    AuthorityEnsemble,
    AuthoritySpec,
    Scenario,
    SimChannel,
    SimRelay,
    burst_attack_failure_probability,
    burst_attack_mc,
    inflation_ratio,
    liar_reference_scenario,
    run_period,
)

MBIT = 10**6
GBIT = 10**9
H = 3600


def report(criterion: int, ok: bool, detail: str) -> None:
    line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'} - {detail}"
    print(line)
    assert ok, line


def test_criterion_1_liar_inflation_ratio():
    t0 = time.perf_counter()
    scenario = liar_reference_scenario(Fraction(1, 4))
    ratio = inflation_ratio(scenario, "liar0", seed_from_text("acceptance-c1"))
    elapsed = time.perf_counter() - t0
    err = abs(ratio - Fraction(4, 3))
    ok = err <= Fraction(1, 10**6) and elapsed < 1.0
    report(
        1,
        ok,
        f"liar r=0.25 sigma=0 inflates by {float(ratio):.9f} vs closed form 4/3, "
        f"|diff|={float(err):.3g} <= 1e-6 ({elapsed:.2f}s < 1s)",
    )


def test_criterion_2_greedy_packs_large_population():
    t0 = time.perf_counter()
    population = capacity_population()
    team = Team(
        measurers=tuple(
            MeasurerSpec(f"m{i}", GBIT, cpu_cores=8) for i in range(3)
        )
    )
    schedule = greedy_min_schedule(population, team, MeasurementParams())
    elapsed = time.perf_counter() - t0
    slots = schedule.slot_count
    fixture_ok = (
        len(population) == RELAY_COUNT == 6419
        and sum(c for _, c in population) == TOTAL_BPS == 608 * GBIT
        and max(c for _, c in population) == CAP_BPS == 998 * MBIT
    )
    ok = fixture_ok and abs(slots - 599) <= 0.02 * 599 and elapsed < 10.0
    report(
        2,
        ok,
        f"6419 relays (608 Gbit/s total, 998 Mbit/s max) need {slots} slots "
        f"on a 3 Gbit/s team, within 2% of 599 ({elapsed:.2f}s < 10s)",
    )


def test_criterion_3_new_relay_latency():
    t0 = time.perf_counter()
    params = MeasurementParams()
    schedule = Schedule(
        period_start=0,
        slot_seconds=30,
        slot_count=20,
        team_capacity_bps=3 * GBIT,
        seed_hex="",
        authority_id="accept",
    )
    for i in range(schedule.slot_count):
        schedule.add(i, f"bg{i:02d}", 2_700_000_000)  # 90% of team capacity
    placements = [
        insert_new_relay(schedule, f"new{k}", 51 * MBIT, params, arrival_s=a)
        for k, a in enumerate([120, 240, 330])
    ]
    latencies = sorted(p.latency_s for p in placements)
    median = latencies[(len(latencies) - 1) // 2]
    elapsed = time.perf_counter() - t0
    ok = median == 30 and elapsed < 5.0
    report(
        3,
        ok,
        f"3 relays at 51 Mbit/s joined a 90%-loaded schedule with latencies "
        f"{latencies}, median {median}s == 30s ({elapsed:.2f}s < 5s)",
    )


def test_criterion_4_burst_attack_failure():
    t0 = time.perf_counter()
    closed = burst_attack_failure_probability(3, Fraction(2, 5))
    trials = 100_000
    mc = burst_attack_mc(3, Fraction(2, 5), trials, seed_from_text("acceptance-c4"))
    p = float(closed)
    se = math.sqrt(p * (1 - p) / trials)
    majority_guard = all(
        burst_attack_failure_probability(3, q) > Fraction(1, 2)
        for q in (Fraction(1, 10), Fraction(3, 10), Fraction(49, 100))
    )
    elapsed = time.perf_counter() - t0
    ok = (
        closed == Fraction(81, 125)
        and abs(float(mc) - p) <= 3 * se
        and majority_guard
        and elapsed < 120.0
    )
    report(
        4,
        ok,
        f"burst n=3 q=0.4 fails with closed form 81/125={p}, "
        f"MC({trials})={float(mc):.4f} within 3SE={3 * se:.4f}; "
        f"failure > 1/2 for q in {{0.1, 0.3, 0.49}} ({elapsed:.1f}s < 120s)",
    )


def test_criterion_5_forgery_detection_mc():
    t0 = time.perf_counter()
    cells, phi, check_prob, trials = 100_000, Fraction(1, 100), Fraction(1, 1000), 100_000
    forged = forged_cell_count(cells, phi)
    closed = detection_probability(forged, check_prob)
    rate = forgery_detection_rate(
        cells, phi, check_prob, trials, seed_from_text("acceptance-c5")
    )
    elapsed = time.perf_counter() - t0
    diff = abs(float(rate) - float(closed))
    ok = forged == 1000 and diff <= 0.02 and elapsed < 60.0
    report(
        5,
        ok,
        f"forging 1% of 1e5 cells at check probability 1e-3 is caught in "
        f"MC({trials})={float(rate):.4f} vs closed {float(closed):.4f}, "
        f"|diff|={diff:.4f} <= 0.02 ({elapsed:.1f}s < 60s)",
    )


def test_criterion_6_honest_estimation_accuracy():
    t0 = time.perf_counter()
    stream = Stream(seed_from_text("acceptance-c6"))
    relays = []
    for i in range(50):
        cap = (20 + stream.below(781)) * MBIT
        prior = [cap, cap // 2, cap * 10][i % 3]
        relays.append(
            SimRelay(
                relay_id=f"h{i:02d}",
                capacity_bps=cap,
                initial_estimate_bps=prior,
            )
        )
    team = Team(
        measurers=tuple(
            MeasurerSpec(f"m{i}", 4 * GBIT, cpu_cores=8) for i in range(3)
        )
    )
    scenario = Scenario(
        params=MeasurementParams(),
        ensemble=AuthorityEnsemble(
            authorities=tuple(
                AuthoritySpec(authority_id=f"auth{i}", team=team) for i in range(3)
            )
        ),
        relays=tuple(relays),
        channel=SimChannel(sigma=Fraction(1, 20)),
    )
    result = run_period(scenario, seed_from_text("acceptance-c6-run"))
    ratios = [
        Fraction(result.consensus[r.relay_id], r.capacity_bps) for r in relays
    ]
    elapsed = time.perf_counter() - t0
    lo, hi = min(ratios), max(ratios)
    in_band = all(Fraction(4, 5) <= rho <= Fraction(21, 20) for rho in ratios)
    tight = sum(1 for rho in ratios if abs(rho - 1) <= Fraction(11, 100))
    ok = in_band and tight >= math.ceil(0.95 * len(ratios)) and elapsed < 30.0
    report(
        6,
        ok,
        f"50 honest relays, sigma=0.05, 3 authorities: consensus/truth in "
        f"[{float(lo):.3f}, {float(hi):.3f}] (all within [0.80, 1.05]), "
        f"{tight}/50 within 11% (>= 48) ({elapsed:.1f}s < 30s)",
    )


def test_criterion_7_one_round_convergence():
    t0 = time.perf_counter()
    caps_mbit = [10, 250, 500, 750, 890]
    relays = tuple(
        SimRelay(
            relay_id=f"c{m}",
            capacity_bps=m * MBIT,
            initial_estimate_bps=m * MBIT,
        )
        for m in caps_mbit
    )
    team = Team(
        measurers=(
            MeasurerSpec("m0", 2 * GBIT, cpu_cores=8),
            MeasurerSpec("m1", 2 * GBIT, cpu_cores=8),
        )
    )
    scenario = Scenario(
        params=MeasurementParams(),
        ensemble=AuthorityEnsemble(
            authorities=(AuthoritySpec(authority_id="auth0", team=team),)
        ),
        relays=relays,
    )
    result = run_period(scenario, seed_from_text("acceptance-c7"))
    elapsed = time.perf_counter() - t0
    exact = all(
        result.consensus[r.relay_id] == r.capacity_bps for r in relays
    )
    one_round = all(result.max_rounds(r.relay_id) == 1 for r in relays)
    ok = exact and one_round and elapsed < 1.0
    report(
        7,
        ok,
        f"priors equal to truth at {caps_mbit} Mbit/s, sigma=0: every relay "
        f"converged in one round to its exact capacity ({elapsed:.2f}s < 1s)",
    )


def test_criterion_8_metrics_match_naive_oracle(fixture_archive, fixture_snapshots):
    t0 = time.perf_counter()
    archive = fixture_archive
    snaps = fixture_snapshots
    hours = archive.timestamps
    assert len(hours) == 72 and len(archive.relay_ids) == 10
    day = 24 * H
    checks = 0
    mismatches: list[str] = []

    def compare(name, got, want, where):
        nonlocal checks
        checks += 1
        if got != want:
            mismatches.append(f"{name}@{where}: package {got!r} != oracle {want!r}")

    def package_value(fn, *args):
        try:
            return fn(*args)
        except MetricUndefined:
            return None

    for t in hours:
        for rid in archive.relay_ids:
            compare(
                "true_capacity",
                package_value(metrics.true_capacity, archive, rid, t, day),
                oracles.true_capacity(snaps, rid, t, day),
                (rid, t),
            )
            compare(
                "relay_capacity_error",
                package_value(metrics.relay_capacity_error, archive, rid, t, day),
                oracles.relay_capacity_error(snaps, rid, t, day),
                (rid, t),
            )
        compare(
            "network_capacity_error",
            package_value(metrics.network_capacity_error, archive, t, day),
            oracles.network_capacity_error(snaps, t, day),
            t,
        )
        compare(
            "network_weight_error_at",
            package_value(metrics.network_weight_error_at, archive, t, day),
            oracles.network_weight_error_at(snaps, t, day),
            t,
        )
    for t in hours[::4]:  # quadratic in relay count, sample every 4th hour
        for rid in archive.relay_ids:
            compare(
                "normalized_capacity",
                package_value(metrics.normalized_capacity, archive, rid, t, day),
                oracles.normalized_capacity(snaps, rid, t, day),
                (rid, t),
            )
            compare(
                "relay_weight_error",
                package_value(metrics.relay_weight_error, archive, rid, t, day),
                oracles.relay_weight_error(snaps, rid, t, day),
                (rid, t),
            )
    for t in hours[12::24]:  # windowed spreads at a few points
        for rid in archive.relay_ids:
            compare(
                "rsd_adv_bw",
                package_value(metrics.rsd_adv_bw, archive, rid, t, 6 * H),
                oracles.rsd_adv_bw(snaps, rid, t, 6 * H),
                (rid, t),
            )
            compare(
                "rsd_weight",
                package_value(metrics.rsd_weight, archive, rid, t, 6 * H),
                oracles.rsd_weight(snaps, rid, t, 6 * H),
                (rid, t),
            )
    start, end = hours[0], hours[-1] + H
    for rid in archive.relay_ids:
        want_mean, want_skipped = oracles.mean_over_hours(
            oracles.relay_capacity_error, snaps, rid, start, end, day
        )
        try:
            got_mean, got_skipped = metrics.mean_over_hours(
                metrics.relay_capacity_error, archive, rid, start, end, day
            )
        except MetricUndefined:
            got_mean, got_skipped = None, want_skipped
        compare("mean_over_hours", got_mean, want_mean, rid)
        compare("mean_over_hours.skipped", got_skipped, want_skipped, rid)

    identical = metrics.network_weight_error({"a": 3, "b": 1}, {"a": 30, "b": 10})
    disjoint = metrics.network_weight_error({"a": 1, "b": 0}, {"a": 0, "b": 7})
    elapsed = time.perf_counter() - t0
    ok = not mismatches and identical == 0 and disjoint == 1 and elapsed < 5.0
    report(
        8,
        ok,
        f"{checks} metric evaluations on the 10-relay x 72-hour fixture match "
        f"the naive oracle exactly ({len(mismatches)} mismatches); "
        f"weight error is 0 for identical and 1 for disjoint distributions "
        f"({elapsed:.1f}s < 5s)"
        + (f"; first mismatch: {mismatches[0]}" if mismatches else ""),
    )


def test_criterion_9_cli_rerun_byte_identical(tmp_path):
    t0 = time.perf_counter()
    archive_path = tmp_path / "archive.csv"
    save_archive(
        str(archive_path),
        [
            RelaySnapshot(h * H, rid, bw * MBIT, Fraction(w))
            for h in range(4)
            for rid, bw, w in [("a", 100, 500), ("b", 40 + 10 * h, 100)]
        ],
    )
    relays_path = tmp_path / "relays.csv"
    save_capacity_csv(
        str(relays_path),
        [("r0", 500 * MBIT), ("r1", 120 * MBIT), ("r2", 80 * MBIT)],
    )
    scenario_path = tmp_path / "scenario.json"
    scenario_path.write_text(
        json.dumps(
            {
                "team": [{"id": "m0", "capacity_bps": 4 * GBIT, "cpu_cores": 8}],
                "n_authorities": 2,
                "sigma": "0",
                "relays": [
                    {
                        "id": rid,
                        "capacity_bps": cap,
                        "initial_estimate_bps": cap,
                    }
                    for rid, cap in [("ra", 100 * MBIT), ("rb", 500 * MBIT)]
                ],
            }
        )
    )
    seed = "acceptance-c9"
    commands = {
        "analyze": ["analyze", "--archive", str(archive_path), "--metric", "nce"],
        "schedule": [
            "schedule", "--relays", str(relays_path), "--team", str(GBIT),
            "--mode", "random", "--seed", seed,
        ],
        "simulate": ["simulate", "--scenario", str(scenario_path), "--seed", seed],
        "attack": [
            "attack", "--kind", "burster", "--n", "3", "--q", "0.4",
            "--trials", "50", "--seed", seed,
        ],
    }
    failures = []
    for name, argv in commands.items():
        out = tmp_path / f"{name}-out"
        if cli.main(argv + ["--out-dir", str(out)]) != 0:
            failures.append(f"{name}: initial run failed")
            continue
        code = cli.main(
            [
                "rerun",
                "--manifest", str(out / "manifest.json"),
                "--out-dir", str(tmp_path / f"{name}-redo"),
            ]
        )
        if code != 0:
            failures.append(f"{name}: rerun diverged")
    elapsed = time.perf_counter() - t0
    ok = not failures
    report(
        9,
        ok,
        f"analyze, schedule, simulate, and attack each reran byte-identically "
        f"from their manifests, plots included ({elapsed:.1f}s)"
        + (f"; failures: {failures}" if failures else ""),
    )
