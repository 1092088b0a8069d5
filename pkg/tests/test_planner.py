"""Allocation sizing, accept/retry loop, initial guesses, calibration."""

from __future__ import annotations

import itertools
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flashflow_lab.ingest import MeasuredCapacityLog, MeasuredSample
from flashflow_lab.model import (
    MeasurementParams,
    MeasurerSpec,
    Team,
    excess_factor,
)
from flashflow_lab.planner import (
    NEW_RELAY_FLOOR_BPS,
    RelayStatus,
    accept_estimate,
    estimate_measurer_capacity,
    greedy_allocate,
    initial_guess,
    measure_relay,
    required_rate,
    retry_update,
)
from flashflow_lab.protocol import MeasurementRecord

PARAMS = MeasurementParams()


def team_of(*rates, cores=4):
    return Team(
        measurers=tuple(
            MeasurerSpec(f"m{i}", r, cpu_cores=cores) for i, r in enumerate(rates)
        )
    )


class TestRequiredRate:
    def test_default_factor(self):
        assert required_rate(250_000_000, PARAMS) == 738_281_250

    def test_ceil_applied(self):
        assert required_rate(64, PARAMS) == 189
        assert required_rate(65, PARAMS) == 192  # 189*65/64 = 191.95...

    def test_zero_prior_rejected(self):
        with pytest.raises(ValueError):
            required_rate(-1, PARAMS)


class TestGreedyAllocate:
    def test_single_measurer_partial(self):
        plan = greedy_allocate(team_of(10**9), 400, PARAMS)
        assert plan.total_bps == 400
        assert not plan.saturated
        assert plan.assignments[0].sockets == PARAMS.sockets

    def test_splits_largest_first(self):
        plan = greedy_allocate(team_of(100, 300, 200), 450, PARAMS)
        rates = {a.measurer_id: a.rate_bps for a in plan.assignments}
        assert rates == {"m1": 300, "m2": 150}

    def test_tie_breaks_by_id(self):
        plan = greedy_allocate(team_of(100, 100), 50, PARAMS)
        assert plan.assignments[0].measurer_id == "m0"

    def test_saturated_flag(self):
        plan = greedy_allocate(team_of(100, 100), 500, PARAMS)
        assert plan.saturated
        assert plan.total_bps == 200

    def test_sockets_split_evenly(self):
        plan = greedy_allocate(team_of(300, 300, 300), 900, PARAMS)
        shares = [a.sockets for a in plan.assignments]
        assert sum(shares) == PARAMS.sockets
        assert max(shares) - min(shares) <= 1

    def test_processes_capped_by_cores(self):
        plan = greedy_allocate(team_of(10**9, cores=2), 10**8, PARAMS)
        assert plan.assignments[0].processes == 2
        assert plan.assignments[0].per_process_rate_bps == 10**8 // 2

    def test_more_measurers_than_sockets_rejected(self):
        tiny = MeasurementParams(sockets=2)
        with pytest.raises(ValueError):
            greedy_allocate(team_of(100, 100, 100), 300, tiny, "r")

    @given(
        st.lists(st.integers(1, 10**9), min_size=1, max_size=4),
        st.integers(0, 4 * 10**9),
    )
    @settings(max_examples=80)
    def test_greedy_matches_exhaustive_minimum(self, rates, required):
        """Greedy uses as few measurers as any split that covers the load."""
        team = team_of(*rates)
        plan = greedy_allocate(team, required, PARAMS)
        target = min(required, team.capacity_bps)
        assert plan.total_bps == target
        used = len(plan.assignments)
        best = None
        for k in range(0, len(rates) + 1):
            for combo in itertools.combinations(rates, k):
                if sum(combo) >= target:
                    best = k
                    break
            if best is not None:
                break
        if target == 0:
            assert used == 0
        else:
            assert used == best

    @given(st.lists(st.integers(1, 10**9), min_size=1, max_size=6))
    @settings(max_examples=40)
    def test_no_measurer_overcommitted(self, rates):
        team = team_of(*rates)
        plan = greedy_allocate(team, team.capacity_bps, PARAMS)
        caps = {m.measurer_id: m.capacity_bps for m in team.measurers}
        for a in plan.assignments:
            assert a.rate_bps <= caps[a.measurer_id]


class TestAcceptRetry:
    def test_accept_threshold_strict(self):
        plan = greedy_allocate(team_of(10**9), 738_281_250, PARAMS)
        # threshold = total * (1-eps1)/m = 738281250 * 16/45 = 262500000
        assert accept_estimate(262_499_999, plan, PARAMS)
        assert not accept_estimate(262_500_000, plan, PARAMS)

    def test_retry_doubles_or_jumps(self):
        assert retry_update(100, 150) == 200
        assert retry_update(100, 900) == 900

    def test_honest_relay_one_round_when_prior_is_truth(self):
        capacity = 500_000_000
        team = team_of(2 * 10**9)

        def executor(plan, round_no):
            return MeasurementRecord(
                relay_id="r",
                authority_id="a",
                slot_index=0,
                round=round_no,
                strategy="plain-median",
                samples=(),
                estimate_bps=min(capacity, plan.total_bps),
                conclusive=True,
            )

        outcome = measure_relay("r", capacity, team, PARAMS, executor)
        assert outcome.rounds == 1
        assert outcome.estimate_bps == capacity
        assert outcome.conclusive

    def test_low_prior_walks_up(self):
        capacity = 800_000_000
        team = team_of(4 * 10**9)

        def executor(plan, round_no):
            return MeasurementRecord(
                relay_id="r",
                authority_id="a",
                slot_index=0,
                round=round_no,
                strategy="plain-median",
                samples=(),
                estimate_bps=min(capacity, plan.total_bps),
                conclusive=True,
            )

        outcome = measure_relay("r", 50_000_000, team, PARAMS, executor)
        assert outcome.conclusive
        assert outcome.estimate_bps == capacity
        assert outcome.rounds > 1

    def test_failure_zeroes_estimate(self):
        def executor(plan, round_no):
            return MeasurementRecord(
                relay_id="r",
                authority_id="a",
                slot_index=0,
                round=round_no,
                strategy="plain-median",
                samples=(),
                estimate_bps=123,
                conclusive=False,
                failure="forgery-detected",
            )

        outcome = measure_relay("r", 100, team_of(10**6), PARAMS, executor)
        assert outcome.estimate_bps == 0
        assert outcome.failure == "forgery-detected"
        assert not outcome.conclusive

    def test_saturated_twice_gives_best_effort(self):
        team = team_of(1000)  # tiny team, huge relay

        def executor(plan, round_no):
            return MeasurementRecord(
                relay_id="r",
                authority_id="a",
                slot_index=0,
                round=round_no,
                strategy="plain-median",
                samples=(),
                estimate_bps=plan.total_bps,  # relay swallows the whole offer
                conclusive=True,
            )

        outcome = measure_relay("r", 10_000, team, PARAMS, executor)
        assert outcome.failure == "team-saturated"
        assert not outcome.conclusive
        assert outcome.estimate_bps == 1000
        assert outcome.rounds == 2

    def test_round_limit(self):
        team = team_of(4 * 10**9)

        def executor(plan, round_no):
            # always report exactly at the acceptance threshold: never accepted
            return MeasurementRecord(
                relay_id="r",
                authority_id="a",
                slot_index=0,
                round=round_no,
                strategy="plain-median",
                samples=(),
                estimate_bps=plan.total_bps,
                conclusive=True,
            )

        outcome = measure_relay("r", 100, team, PARAMS, executor, max_rounds=3)
        assert outcome.failure in ("round-limit", "team-saturated")
        assert not outcome.conclusive


class TestInitialGuess:
    def _log(self):
        return MeasuredCapacityLog(
            [
                MeasuredSample(1000, "a", 10),
                MeasuredSample(1000, "b", 20),
                MeasuredSample(1000, "c", 30),
                MeasuredSample(1000, "d", 40),
            ]
        )

    def test_fresh_estimate_reused(self):
        status = RelayStatus("r", last_estimate_bps=777, last_measured_at=2000)
        got, source = initial_guess(status, self._log(), t=3000)
        assert (got, source) == (777, "prior-estimate")

    def test_stale_estimate_falls_back_to_percentile(self):
        status = RelayStatus("r", last_estimate_bps=777, last_measured_at=0)
        t = 32 * 86400
        log = MeasuredCapacityLog([MeasuredSample(t - 5, "x", 50)])
        got, source = initial_guess(status, log, t=t)
        assert (got, source) == (50, "percentile")

    def test_percentile_is_three_quarters(self):
        got, source = initial_guess(None, self._log(), t=2000)
        assert (got, source) == (30, "percentile")

    def test_empty_log_floor(self):
        got, source = initial_guess(None, MeasuredCapacityLog(), t=2000)
        assert (got, source) == (NEW_RELAY_FLOOR_BPS, "floor")

    def test_future_measurement_not_trusted(self):
        status = RelayStatus("r", last_estimate_bps=777, last_measured_at=5000)
        got, source = initial_guess(status, self._log(), t=2000)
        assert source == "percentile"


class TestMeasurerCalibration:
    def test_lower_median_of_minimums(self):
        samples = [(100, 90)] * 30 + [(100, 110)] * 30
        assert estimate_measurer_capacity(samples) == 90

    def test_requires_sixty_samples(self):
        with pytest.raises(ValueError):
            estimate_measurer_capacity([(1, 1)] * 59)

    def test_warts_do_not_drag(self):
        samples = [(1000, 1000)] * 59 + [(1000, 1)]
        assert estimate_measurer_capacity(samples) == 1000
