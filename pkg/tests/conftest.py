"""Shared fixtures: a 10-relay x 72-hour archive with varied histories."""

from __future__ import annotations

from fractions import Fraction

import pytest

from flashflow_lab.model import MeasurementParams, MeasurerSpec, RelaySnapshot, Team
from flashflow_lab.ingest import Archive
from flashflow_lab.randomness import Stream, seed_from_text

BASE_T = 472223 * 3600  # hour-aligned
HOURS = 72
HOUR = 3600
MBIT = 1_000_000


def _fixture_snapshots() -> list[RelaySnapshot]:
    stream = Stream(seed_from_text("archive-fixture"))
    snaps = []
    for h in range(HOURS):
        t = BASE_T + h * HOUR

        def row(rid: str, bw: int, weight) -> None:
            snaps.append(
                RelaySnapshot(
                    timestamp=t,
                    relay_id=rid,
                    advertised_bw_bps=bw,
                    consensus_weight=Fraction(weight),
                )
            )

        row("r00", 100 * MBIT, 500)
        row("r01", (10 + h) * MBIT, 100 + h)
        row("r02", (40 + 15 * (h % 7)) * MBIT, 350)
        if h % 3 != 2:
            row("r03", 75 * MBIT, 200)
        if h >= HOURS // 2:
            row("r04", 220 * MBIT, 900)
        if h < HOURS // 2:
            row("r05", 180 * MBIT, 700)
        row("r06", 0, 50)
        row("r07", (50 + stream.below(100)) * MBIT, 10 + stream.below(500))
        row("r08", 10_000 * MBIT, 0)
        if h == 40:
            row("r09", 1 * MBIT, 5)
    return snaps


@pytest.fixture(scope="session")
def fixture_snapshots() -> list[RelaySnapshot]:
    return _fixture_snapshots()


@pytest.fixture(scope="session")
def fixture_archive(fixture_snapshots) -> Archive:
    return Archive(tuple(fixture_snapshots))


@pytest.fixture()
def default_params() -> MeasurementParams:
    return MeasurementParams()


@pytest.fixture()
def small_team() -> Team:
    return Team(
        measurers=(
            MeasurerSpec("m0", 2_000_000_000, cpu_cores=8),
            MeasurerSpec("m1", 2_000_000_000, cpu_cores=8),
        )
    )
