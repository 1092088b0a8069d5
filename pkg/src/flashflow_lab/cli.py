"""Command-line front end: archive analysis, scheduling, simulation, attacks.

Every command writes machine-readable CSV/JSON into --out-dir, renders a
companion PNG figure (disable with --no-plot), and finishes by writing
manifest.json: the command, canonical arguments, seed, and SHA-256
digests of all inputs and outputs. `rerun` re-executes a manifest into a
fresh directory and fails loudly unless every output is byte-identical.

Exit codes: 0 success, 1 runtime failure (bad data, infeasible request,
digest mismatch), 2 usage errors.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Callable, Optional, Sequence

from . import __version__
from .ingest import ParseError, load_archive, load_capacity_csv
from .manifest import (
    MANIFEST_NAME,
    TOOL_NAME,
    RunManifest,
    diff_outputs,
    load_manifest,
    save_manifest,
    sha256_file,
    verify_inputs,
)
from .metrics import (
    MetricUndefined,
    mean_over_hours,
    network_capacity_error,
    network_weight_error,
    network_weight_error_at,
    relay_capacity_error,
    relay_weight_error,
    rsd_adv_bw,
    rsd_weight,
)
from .model import (
    MeasurementParams,
    MeasurerSpec,
    Team,
    as_fraction,
    decimal_str,
)
from .protocol import (
    detection_probability,
    forged_cell_count,
    forgery_detection_rate,
)
from .randomness import derive_key, seed_from_text
from .scheduler import build_period_schedule, greedy_min_schedule, save_schedule
from .simnet import (
    burst_attack_failure_probability,
    burst_attack_mc,
    burster_reference_scenario,
    inflation_ratio,
    liar_reference_scenario,
    load_scenario,
    params_from_json_dict,
    run_period,
    scenario_to_json_dict,
    weights_from_estimates,
)
from . import plots

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

HOUR_S = 3600

_WINDOW_UNITS = {
    "s": 1,
    "h": 3600,
    "d": 86400,
    "w": 7 * 86400,
    "m": 30 * 86400,
    "y": 365 * 86400,
}

NETWORK_METRICS = {
    "nce": network_capacity_error,
    "nwe": network_weight_error_at,
}
RELAY_METRICS = {
    "rce": relay_capacity_error,
    "rwe": relay_weight_error,
    "cap-rsd": rsd_adv_bw,
    "weight-rsd": rsd_weight,
}
ALL_METRICS = [*NETWORK_METRICS, *RELAY_METRICS]


class CommandError(RuntimeError):
    """Fatal but well-formed failure; maps to exit code 1."""


def parse_window(label: str) -> int:
    """'1d', '2w', '90m', or raw seconds, to an integer second count."""
    text = label.strip().lower()
    if not text:
        raise CommandError("empty window label")
    if text[-1] in _WINDOW_UNITS and text[:-1].isdigit():
        return int(text[:-1]) * _WINDOW_UNITS[text[-1]]
    if text.isdigit():
        return int(text)
    raise CommandError(
        f"cannot parse window {label!r} (want e.g. 1d, 2w, 3600, or 12h)"
    )


def parse_team_spec(spec: str) -> tuple[Team, Optional[str]]:
    """A team is either a JSON file of measurers or comma-joined bit rates."""
    if os.path.isfile(spec):
        with open(spec) as fh:
            data = json.load(fh)
        measurers = tuple(
            MeasurerSpec(
                measurer_id=m["id"],
                capacity_bps=int(m["capacity_bps"]),
                cpu_cores=int(m.get("cpu_cores", 4)),
            )
            for m in data
        )
        return Team(measurers=measurers), os.path.abspath(spec)
    try:
        rates = [int(tok) for tok in spec.split(",") if tok.strip()]
    except ValueError:
        raise CommandError(
            f"team spec {spec!r} is neither a file nor comma-joined bit rates"
        ) from None
    if not rates:
        raise CommandError("team spec lists no measurers")
    measurers = tuple(
        MeasurerSpec(measurer_id=f"m{i}", capacity_bps=rate)
        for i, rate in enumerate(rates)
    )
    return Team(measurers=measurers), None


def _load_params(path: Optional[str], base: Optional[MeasurementParams] = None):
    if path is None:
        return base if base is not None else MeasurementParams()
    with open(path) as fh:
        data = json.load(fh)
    return params_from_json_dict(data, base=base)


def write_csv(path: str, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _write_json(path: str, data) -> None:
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _log10_or_blank(value: Fraction) -> str:
    if value <= 0:
        return ""
    return repr(math.log10(float(value)))


@dataclass
class CommandResult:
    inputs: list[str]
    notes: list[str]


# ---------------------------------------------------------------------------
# analyze


def cmd_analyze(args: dict, out_dir: str) -> CommandResult:
    archive_path = args["archive"]
    try:
        archive = load_archive(archive_path)
    except ParseError as exc:
        raise CommandError(str(exc)) from None
    if len(archive) == 0:
        raise CommandError(f"archive {archive_path} holds no snapshots")
    timestamps = archive.timestamps
    if args.get("start") is None:
        args["start"] = -(-timestamps[0] // HOUR_S) * HOUR_S
    if args.get("end") is None:
        args["end"] = (timestamps[-1] // HOUR_S + 1) * HOUR_S
    start, end = args["start"], args["end"]
    if start % HOUR_S or end % HOUR_S or start > end:
        raise CommandError(
            f"start/end must be hour-aligned with start <= end, got {start}, {end}"
        )
    metrics_wanted = args["metrics"]
    unknown = [m for m in metrics_wanted if m not in ALL_METRICS]
    if unknown:
        raise CommandError(f"unknown metrics: {unknown} (have {ALL_METRICS})")
    windows = {label: parse_window(label) for label in args["windows"]}

    summary: dict = {"start": start, "end": end, "metrics": {}}
    notes = []
    if start == end:
        notes.append("warning: start == end, series are empty")
    for name in metrics_wanted:
        summary["metrics"][name] = {}
        if name in NETWORK_METRICS:
            fn = NETWORK_METRICS[name]
            chart_series = {}
            for label, p in windows.items():
                rows = []
                points = []
                skipped = 0
                for t in range(start, end, HOUR_S):
                    try:
                        value = fn(archive, t, p)
                    except MetricUndefined:
                        skipped += 1
                        continue
                    rows.append([t, decimal_str(value)])
                    points.append((t, float(value)))
                write_csv(
                    os.path.join(out_dir, f"{name}_p{label}.csv"),
                    ["t", "value"],
                    rows,
                )
                chart_series[f"p={label}"] = points
                summary["metrics"][name][label] = {
                    "defined_hours": len(rows),
                    "skipped_hours": skipped,
                }
            if args["plots"]:
                plots.line_chart(
                    os.path.join(out_dir, f"{name}.png"),
                    f"{name} over time",
                    "t (unix seconds)",
                    name,
                    chart_series,
                )
        else:
            fn = RELAY_METRICS[name]
            chart_series = {}
            for label, p in windows.items():
                rows = []
                points = []
                relays_skipped = 0
                hour_skips = 0
                for relay_id in archive.relay_ids if start < end else ():
                    try:
                        mean, skipped = mean_over_hours(
                            fn, archive, relay_id, start, end, p
                        )
                    except MetricUndefined:
                        relays_skipped += 1
                        continue
                    hour_skips += skipped
                    rows.append(
                        [relay_id, decimal_str(mean), _log10_or_blank(mean)]
                    )
                write_csv(
                    os.path.join(out_dir, f"{name}_p{label}.csv"),
                    ["relay_id", "mean_value", "log10_mean"],
                    rows,
                )
                ordered = sorted((float(r[1]) for r in rows), reverse=True)
                points = list(enumerate(ordered))
                chart_series[f"p={label}"] = points
                summary["metrics"][name][label] = {
                    "relays": len(rows),
                    "relays_skipped": relays_skipped,
                    "hour_skips_total": hour_skips,
                }
            if args["plots"]:
                plots.line_chart(
                    os.path.join(out_dir, f"{name}.png"),
                    f"per-relay mean {name} (sorted)",
                    "relay rank",
                    name,
                    chart_series,
                )
        notes.append(f"{name}: {json.dumps(summary['metrics'][name], sort_keys=True)}")
    _write_json(os.path.join(out_dir, "summary.json"), summary)
    return CommandResult(inputs=[archive_path], notes=notes)


# ---------------------------------------------------------------------------
# schedule


def cmd_schedule(args: dict, out_dir: str) -> CommandResult:
    relays_path = args["relays"]
    try:
        relays = load_capacity_csv(relays_path)
    except ParseError as exc:
        raise CommandError(str(exc)) from None
    if not relays:
        raise CommandError(f"{relays_path} lists no relays")
    team, team_file = parse_team_spec(args["team"])
    params = _load_params(args.get("params"))
    if args.get("period") is not None:
        params = replace(params, period_seconds=args["period"])
    inputs = [relays_path]
    if team_file:
        inputs.append(team_file)
    if args.get("params"):
        inputs.append(args["params"])

    mode = args["mode"]
    if mode == "random":
        if not args.get("seed"):
            raise CommandError("mode=random needs --seed (or FLASHFLOW_LAB_SEED)")
        seed = seed_from_text(args["seed"])
        schedule, infeasible = build_period_schedule(
            relays, team, params, seed, args["authority"]
        )
        duration_s = params.period_seconds
        if infeasible:
            write_csv(
                os.path.join(out_dir, "infeasible.csv"),
                ["relay_id"],
                [[rid] for rid in infeasible],
            )
    elif mode == "greedy":
        try:
            schedule = greedy_min_schedule(relays, team, params, args["authority"])
        except ValueError as exc:
            raise CommandError(str(exc)) from None
        infeasible = ()
        duration_s = schedule.slot_count * params.slot_seconds
    else:
        raise CommandError(f"unknown mode {mode!r} (want random or greedy)")

    save_schedule(os.path.join(out_dir, "schedule.json"), schedule)
    occupied = schedule.occupied_slots()
    write_csv(
        os.path.join(out_dir, "summary.csv"),
        [
            "mode",
            "relay_count",
            "slot_count",
            "occupied_slots",
            "total_allocated_bps",
            "team_capacity_bps",
            "duration_s",
        ],
        [
            [
                mode,
                len(relays),
                schedule.slot_count,
                len(occupied),
                schedule.total_allocated_bps,
                team.capacity_bps,
                duration_s,
            ]
        ],
    )
    if args["plots"]:
        plots.occupancy_chart(
            os.path.join(out_dir, "schedule.png"),
            f"slot occupancy ({mode})",
            [(i, schedule.allocated_bps(i) / 1e6) for i in occupied],
            team.capacity_bps / 1e6,
        )
    notes = [
        f"mode={mode} relays={len(relays)} slots={schedule.slot_count} "
        f"occupied={len(occupied)} duration_s={duration_s} "
        f"allocated_bps={schedule.total_allocated_bps} "
        f"team_bps={team.capacity_bps}"
    ]
    if infeasible:
        notes.append(f"infeasible relays: {len(infeasible)} (see infeasible.csv)")
    return CommandResult(inputs=inputs, notes=notes)


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args: dict, out_dir: str) -> CommandResult:
    scenario_path = args["scenario"]
    try:
        scenario = load_scenario(scenario_path)
    except (ValueError, KeyError) as exc:
        raise CommandError(f"{scenario_path}: {exc}") from None
    if args.get("params"):
        params = _load_params(args["params"], base=scenario.params)
        scenario = replace(scenario, params=params)
    if not args.get("seed"):
        raise CommandError("simulate needs --seed (or FLASHFLOW_LAB_SEED)")
    master = seed_from_text(args["seed"])
    result = run_period(scenario, master)

    rows = []
    points = []
    for relay in scenario.relays:
        consensus = result.consensus[relay.relay_id]
        ratio = Fraction(consensus, relay.capacity_bps)
        rows.append(
            [
                relay.relay_id,
                relay.capacity_bps,
                consensus,
                result.max_rounds(relay.relay_id),
                decimal_str(ratio),
            ]
        )
        points.append((relay.capacity_bps / 1e6, consensus / 1e6))
    write_csv(
        os.path.join(out_dir, "results.csv"),
        ["relay_id", "true_bps", "consensus_bps", "rounds", "ratio"],
        rows,
    )

    total_consensus = sum(result.consensus.values())
    if total_consensus > 0:
        weights = weights_from_estimates(result.consensus)
        write_csv(
            os.path.join(out_dir, "weights.csv"),
            ["relay_id", "weight"],
            [
                [relay.relay_id, decimal_str(weights[relay.relay_id])]
                for relay in scenario.relays
            ],
        )
        true_caps = {r.relay_id: r.capacity_bps for r in scenario.relays}
        nwe = network_weight_error(result.consensus, true_caps)
    else:
        write_csv(os.path.join(out_dir, "weights.csv"), ["relay_id", "weight"], [])
        nwe = None

    records = {"scenario": scenario_to_json_dict(scenario), "authorities": {}}
    for auth_id, by_relay in sorted(result.per_authority.items()):
        records["authorities"][auth_id] = {
            "infeasible": list(result.infeasible[auth_id]),
            "relays": {
                rid: {
                    "estimate_bps": m.estimate_bps,
                    "rounds": m.rounds,
                    "conclusive": m.conclusive,
                    "failure": m.failure,
                    "records": [rec.to_json_dict() for rec in m.records],
                }
                for rid, m in sorted(by_relay.items())
            },
        }
    _write_json(os.path.join(out_dir, "records.json"), records)
    for auth_id, schedule in sorted(result.schedules.items()):
        save_schedule(os.path.join(out_dir, f"schedule_{auth_id}.json"), schedule)

    summary = {
        "relays": len(scenario.relays),
        "authorities": len(scenario.ensemble.authorities),
        "nwe_consensus_vs_true": None if nwe is None else decimal_str(nwe),
        "zero_estimates": sum(1 for v in result.consensus.values() if v == 0),
    }
    _write_json(os.path.join(out_dir, "summary.json"), summary)
    if args["plots"]:
        plots.scatter_chart(
            os.path.join(out_dir, "results.png"),
            "consensus vs true capacity",
            "true (Mbit/s)",
            "consensus (Mbit/s)",
            points,
        )
    notes = [
        f"relays={summary['relays']} authorities={summary['authorities']} "
        f"nwe={summary['nwe_consensus_vs_true']}"
    ]
    inputs = [scenario_path]
    if args.get("params"):
        inputs.append(args["params"])
    return CommandResult(inputs=inputs, notes=notes)


# ---------------------------------------------------------------------------
# attack


def _attack_liar(args: dict, out_dir: str, master: bytes) -> tuple[list, dict]:
    rows = []
    series_closed = []
    series_sim = []
    for r_text in args["r"]:
        r = as_fraction(r_text)
        if not 0 < r < 1:
            raise CommandError(f"echo fraction must lie in (0,1), got {r_text}")
        closed = 1 / (1 - r)
        scenario = liar_reference_scenario(r)
        simulated = inflation_ratio(
            scenario, scenario.relays[0].relay_id, derive_key(master, "liar", r_text)
        )
        rows.append(
            [
                decimal_str(r),
                decimal_str(closed),
                decimal_str(simulated),
                decimal_str(abs(simulated - closed)),
            ]
        )
        series_closed.append((float(r), float(closed)))
        series_sim.append((float(r), float(simulated)))
    header = ["r", "closed_form_ratio", "simulated_ratio", "abs_diff"]
    chart = {"closed form": series_closed, "simulated": series_sim}
    return rows, {"header": header, "chart": chart, "xlabel": "r", "ylabel": "inflation"}


def _attack_forger(args: dict, out_dir: str, master: bytes) -> tuple[list, dict]:
    cells = args["cells"]
    check_prob = as_fraction(args["check_prob"])
    trials = args["trials"]
    rows = []
    series_closed = []
    series_mc = []
    for phi_text in args["phi"]:
        phi = as_fraction(phi_text)
        forged = forged_cell_count(cells, phi)
        closed = detection_probability(forged, check_prob)
        mc = forgery_detection_rate(
            cells, phi, check_prob, trials, derive_key(master, "forger", phi_text)
        )
        rows.append(
            [
                decimal_str(phi),
                cells,
                forged,
                decimal_str(check_prob),
                decimal_str(closed),
                decimal_str(mc),
                trials,
                decimal_str(abs(mc - closed)),
                decimal_str(1 + phi),
            ]
        )
        series_closed.append((float(phi), float(closed)))
        series_mc.append((float(phi), float(mc)))
    header = [
        "phi",
        "cells",
        "forged_cells",
        "check_prob",
        "closed_form_detection",
        "mc_detection",
        "trials",
        "abs_diff",
        "offer_multiplier",
    ]
    chart = {"closed form": series_closed, "monte carlo": series_mc}
    return rows, {
        "header": header,
        "chart": chart,
        "xlabel": "phi",
        "ylabel": "detection probability",
    }


def _attack_burster(args: dict, out_dir: str, master: bytes) -> tuple[list, dict]:
    trials = args["trials"]
    rows = []
    chart: dict[str, list] = {}
    for n in args["n"]:
        closed_points = []
        mc_points = []
        for q_text in args["q"]:
            q = as_fraction(q_text)
            try:
                closed = burst_attack_failure_probability(n, q)
            except ValueError as exc:
                raise CommandError(str(exc)) from None
            mc = burst_attack_mc(
                n, q, trials, derive_key(master, "burster", n, q_text)
            )
            rows.append(
                [
                    n,
                    decimal_str(q),
                    decimal_str(closed),
                    decimal_str(mc),
                    trials,
                    decimal_str(abs(mc - closed)),
                ]
            )
            closed_points.append((float(q), float(closed)))
            mc_points.append((float(q), float(mc)))
        chart[f"closed form n={n}"] = closed_points
        chart[f"monte carlo n={n}"] = mc_points
    header = ["n", "q", "closed_form_failure", "mc_failure", "trials", "abs_diff"]
    return rows, {
        "header": header,
        "chart": chart,
        "xlabel": "q",
        "ylabel": "attack failure probability",
    }


_ATTACKS: dict[str, Callable] = {
    "liar": _attack_liar,
    "forger": _attack_forger,
    "burster": _attack_burster,
}


def cmd_attack(args: dict, out_dir: str) -> CommandResult:
    kind = args["kind"]
    if kind not in _ATTACKS:
        raise CommandError(f"unknown attack kind {kind!r} (have {sorted(_ATTACKS)})")
    if not args.get("seed"):
        raise CommandError("attack needs --seed (or FLASHFLOW_LAB_SEED)")
    master = seed_from_text(args["seed"])
    rows, info = _ATTACKS[kind](args, out_dir, master)
    csv_path = os.path.join(out_dir, f"attack_{kind}.csv")
    write_csv(csv_path, info["header"], rows)
    if args["plots"]:
        plots.line_chart(
            os.path.join(out_dir, f"attack_{kind}.png"),
            f"{kind} attack: closed form vs simulation",
            info["xlabel"],
            info["ylabel"],
            info["chart"],
        )
    return CommandResult(
        inputs=[], notes=[f"attack={kind} rows={len(rows)} -> {csv_path}"]
    )


# ---------------------------------------------------------------------------
# execution plumbing


COMMANDS: dict[str, Callable[[dict, str], CommandResult]] = {
    "analyze": cmd_analyze,
    "schedule": cmd_schedule,
    "simulate": cmd_simulate,
    "attack": cmd_attack,
}


def _prepare_out_dir(out_dir: str) -> None:
    if os.path.exists(out_dir):
        if not os.path.isdir(out_dir):
            raise CommandError(f"--out-dir {out_dir} exists and is not a directory")
        if os.listdir(out_dir):
            raise CommandError(f"--out-dir {out_dir} is not empty")
    else:
        os.makedirs(out_dir)


def execute(command: str, args: dict, out_dir: str) -> RunManifest:
    _prepare_out_dir(out_dir)
    result = COMMANDS[command](args, out_dir)
    inputs = {path: sha256_file(path) for path in sorted(set(result.inputs))}
    outputs = {}
    for name in sorted(os.listdir(out_dir)):
        path = os.path.join(out_dir, name)
        if name != MANIFEST_NAME and os.path.isfile(path):
            outputs[name] = sha256_file(path)
    manifest = RunManifest(
        tool=TOOL_NAME,
        version=__version__,
        command=command,
        args=args,
        seed=args.get("seed"),
        inputs=inputs,
        outputs=outputs,
    )
    save_manifest(os.path.join(out_dir, MANIFEST_NAME), manifest)
    for note in result.notes:
        print(note)
    return manifest


def cmd_rerun(manifest_path: str, out_dir: str) -> int:
    manifest = load_manifest(manifest_path)
    if manifest.command not in COMMANDS:
        raise CommandError(f"manifest command {manifest.command!r} is not runnable")
    problems = verify_inputs(manifest)
    if problems:
        for line in problems:
            print(f"error: {line}", file=sys.stderr)
        return EXIT_FAILURE
    fresh = execute(manifest.command, dict(manifest.args), out_dir)
    problems = diff_outputs(manifest, fresh)
    if problems:
        for line in problems:
            print(f"error: {line}", file=sys.stderr)
        return EXIT_FAILURE
    print(f"rerun ok: {len(fresh.outputs)} outputs byte-identical")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _csv_list(text: str) -> list[str]:
    return [tok.strip() for tok in text.split(",") if tok.strip()]


def _add_common(
    sub: argparse.ArgumentParser, seed: bool = True, params: bool = False
) -> None:
    sub.add_argument("--out-dir", required=True, help="new or empty output directory")
    sub.add_argument("--no-plot", action="store_true", help="skip PNG rendering")
    if params:
        sub.add_argument("--params", help="JSON file of parameter overrides")
    if seed:
        sub.add_argument(
            "--seed",
            default=os.environ.get("FLASHFLOW_LAB_SEED"),
            help="seed string (64 hex digits used raw, anything else hashed); "
            "defaults to $FLASHFLOW_LAB_SEED",
        )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=TOOL_NAME,
        description="relay capacity measurement lab bench",
    )
    parser.add_argument(
        "--version", action="version", version=f"{TOOL_NAME} {__version__}"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="error metrics over a consensus archive")
    p.add_argument("--archive", required=True, help="snapshot CSV")
    p.add_argument(
        "--metric",
        default=",".join(ALL_METRICS),
        help=f"comma list from {ALL_METRICS} (default: all)",
    )
    p.add_argument(
        "--p",
        default="1d",
        help="comma list of window lengths (1d, 1w, 30d, 3600, ...)",
    )
    p.add_argument("--start", type=int, help="first hour (unix s, aligned)")
    p.add_argument("--end", type=int, help="end hour, exclusive (unix s, aligned)")
    _add_common(p, seed=False)

    p = sub.add_parser("schedule", help="build a measurement period schedule")
    p.add_argument("--relays", required=True, help="relay capacity CSV")
    p.add_argument(
        "--team", required=True, help="measurer JSON file or comma bit rates"
    )
    p.add_argument("--mode", choices=["random", "greedy"], default="random")
    p.add_argument("--period", type=int, help="period length override (seconds)")
    p.add_argument("--authority", default="auth0", help="authority id for the output")
    _add_common(p, params=True)

    p = sub.add_parser("simulate", help="run one period over a scenario file")
    p.add_argument("--scenario", required=True, help="scenario JSON")
    _add_common(p, params=True)

    p = sub.add_parser("attack", help="closed form vs simulation for one attack")
    p.add_argument(
        "--kind", required=True, choices=sorted(_ATTACKS), help="attack family"
    )
    p.add_argument("--r", default="0.1,0.25,0.5", help="liar: echo fractions")
    p.add_argument("--phi", default="0,0.01,0.1", help="forger: phantom fractions")
    p.add_argument("--cells", type=int, default=100_000, help="forger: cells sent")
    p.add_argument(
        "--check-p", default="0.001", dest="check_prob", help="forger: check probability"
    )
    p.add_argument("--n", default="3", help="burster: ensemble sizes (odd)")
    p.add_argument("--q", default="0.1,0.3,0.4,0.49", help="burster: burst rates")
    p.add_argument(
        "--trials", type=int, default=2000, help="Monte-Carlo trials per grid point"
    )
    _add_common(p)

    p = sub.add_parser("rerun", help="re-execute a manifest and compare digests")
    p.add_argument("--manifest", required=True, help="manifest.json from a prior run")
    p.add_argument("--out-dir", required=True, help="new or empty output directory")

    return parser


def _canonical_args(ns: argparse.Namespace) -> dict:
    """Reduce parsed flags to the JSON-safe map recorded in manifests."""
    if ns.command == "analyze":
        return {
            "archive": os.path.abspath(ns.archive),
            "metrics": _csv_list(ns.metric),
            "windows": _csv_list(ns.p),
            "start": ns.start,
            "end": ns.end,
            "plots": not ns.no_plot,
        }
    if ns.command == "schedule":
        team = ns.team
        if os.path.isfile(team):
            team = os.path.abspath(team)
        return {
            "relays": os.path.abspath(ns.relays),
            "team": team,
            "mode": ns.mode,
            "period": ns.period,
            "authority": ns.authority,
            "seed": ns.seed,
            "params": os.path.abspath(ns.params) if ns.params else None,
            "plots": not ns.no_plot,
        }
    if ns.command == "simulate":
        return {
            "scenario": os.path.abspath(ns.scenario),
            "seed": ns.seed,
            "params": os.path.abspath(ns.params) if ns.params else None,
            "plots": not ns.no_plot,
        }
    if ns.command == "attack":
        return {
            "kind": ns.kind,
            "r": _csv_list(ns.r),
            "phi": _csv_list(ns.phi),
            "cells": ns.cells,
            "check_prob": ns.check_prob,
            "n": [int(tok) for tok in _csv_list(ns.n)],
            "q": _csv_list(ns.q),
            "trials": ns.trials,
            "seed": ns.seed,
            "plots": not ns.no_plot,
        }
    raise AssertionError(f"unhandled command {ns.command}")


def _usage_checks(parser: argparse.ArgumentParser, ns: argparse.Namespace) -> None:
    if ns.command == "analyze":
        unknown = [m for m in _csv_list(ns.metric) if m not in ALL_METRICS]
        if unknown:
            parser.error(f"unknown metric(s) {unknown}; choose from {ALL_METRICS}")
    needs_seed = ns.command in ("simulate", "attack") or (
        ns.command == "schedule" and ns.mode == "random"
    )
    if needs_seed and not ns.seed:
        parser.error("--seed is required (or set FLASHFLOW_LAB_SEED)")


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        if ns.command == "rerun":
            return cmd_rerun(ns.manifest, ns.out_dir)
        _usage_checks(parser, ns)
        args = _canonical_args(ns)
        execute(ns.command, args, ns.out_dir)
        return EXIT_OK
    except (CommandError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except (OSError, json.JSONDecodeError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
