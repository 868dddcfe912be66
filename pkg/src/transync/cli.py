"""Command-line entry point wiring the pipeline:
generate -> reduce -> optimize -> evaluate / compare / vss -> report.

Every run writes a manifest (resolved arguments, seeds, tool version) next to
its primary output before any computation starts, so results can be replayed
exactly.  Exit codes: 0 success, 1 usage/validation problem, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (
    ConfigError,
    FormatError,
    ParseError,
    TransyncError,
    ValidationError,
)
from .evaluator import Mode, Timetable, evaluate
from .harness import (
    CompareConfig,
    compare_models,
    compute_vss,
    emit_report,
    load_report_json,
)
from .network import load_network
from .optimizer import PHConfig, SearchConfig, polish, run_ph, solve_deterministic
from .reduction import reduce_scenarios
from .scenarios import (
    DistributionConfig,
    load_scenarios,
    sample_scenarios,
    save_scenarios,
)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # keep argparse from calling sys.exit(2)
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="transync", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--seed", type=int, default=0, help="master random seed")
        p.add_argument(
            "--threads",
            type=int,
            default=os.cpu_count() or 1,
            help="worker process cap (default: available cores)",
        )
        p.add_argument(
            "--time-limit", type=float, default=None, help="wall-clock cap, seconds"
        )
        p.add_argument("--manifest", default=None, help="manifest path override")

    p = sub.add_parser("generate", help="sample a scenario set")
    common(p)
    p.add_argument("--network", required=True)
    p.add_argument("--dists", default=None, help="distribution config JSON")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--stream", choices=("train", "test"), default="train")
    p.add_argument("--out", required=True)

    p = sub.add_parser("reduce", help="problem-driven scenario reduction")
    common(p)
    p.add_argument("--network", required=True)
    p.add_argument("--scenarios", required=True)
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--mode", choices=("sm", "sdb"), default="sdb",
                   help="evaluation mode used to build the V matrix")
    p.add_argument("--restarts", type=int, default=2)
    p.add_argument("--out", required=True)
    p.add_argument("--vmatrix-dump", default=None, help="write the V matrix as CSV")

    p = sub.add_parser("optimize", help="optimize a timetable on a scenario set")
    common(p)
    p.add_argument("--network", required=True)
    p.add_argument("--scenarios", required=True)
    p.add_argument("--mode", choices=("sm", "sdb"), default="sm")
    p.add_argument("--ph", action="store_true",
                   help="force progressive hedging even for one scenario")
    p.add_argument("--rho", type=float, default=1.0)
    p.add_argument("--theta", type=float, default=0.05)
    p.add_argument("--kmax", type=int, default=15)
    p.add_argument("--restarts", type=int, default=2)
    p.add_argument("--polish-budget", type=int, default=300)
    p.add_argument("--out", required=True)
    p.add_argument("--history", default=None, help="PH iteration history CSV")
    p.add_argument("--dispersion-svg", default=None, help="PH dispersion curve SVG")

    p = sub.add_parser("evaluate", help="evaluate a timetable on scenarios")
    common(p)
    p.add_argument("--network", required=True)
    p.add_argument("--scenarios", required=True)
    p.add_argument("--timetable", required=True)
    p.add_argument("--mode", choices=("sm", "sdb"), default="sm")
    p.add_argument("--out", required=True)
    p.add_argument("--trace-out", default=None, help="JSON-lines stop traces")

    p = sub.add_parser("compare", help="four-way model comparison on a test set")
    common(p)
    p.add_argument("--network", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--dists", default=None)
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--rho", type=float, default=1.0)
    p.add_argument("--theta", type=float, default=0.05)
    p.add_argument("--kmax", type=int, default=15)
    p.add_argument("--restarts", type=int, default=2)
    p.add_argument("--polish-budget", type=int, default=300)
    p.add_argument("--out", required=True)
    p.add_argument("--hist-svg", default=None, help="per-scenario cost histogram SVG")

    p = sub.add_parser("vss", help="value of the stochastic solution")
    common(p)
    p.add_argument("--network", required=True)
    p.add_argument("--stoch", required=True, help="stochastic timetable JSON")
    p.add_argument("--det", required=True, help="deterministic timetable JSON")
    p.add_argument("--test", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("report", help="re-emit a JSON report as CSV or markdown")
    common(p)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--format", choices=("csv", "markdown", "json"), default="markdown")
    p.add_argument("--out", required=True)

    return parser


def _write_manifest(args: argparse.Namespace) -> None:
    resolved = {k: v for k, v in vars(args).items() if k != "manifest"}
    path = args.manifest
    if path is None:
        out = getattr(args, "out", None)
        path = (out + ".manifest.json") if out else "transync-manifest.json"
    payload = {
        "tool": "transync",
        "tool_version": __version__,
        "subcommand": args.command,
        "resolved": resolved,
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")


def _load_dists(path: str | None) -> DistributionConfig:
    if path is None:
        return DistributionConfig()
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return DistributionConfig.from_json(data)


def _search_cfg(args) -> SearchConfig:
    return SearchConfig(restarts=getattr(args, "restarts", 2), seed=args.seed)


def _mode(args) -> Mode:
    return Mode.SM if args.mode == "sm" else Mode.SDB


# --------------------------------------------------------------------------
# Tiny SVG emitters (display-only)
# --------------------------------------------------------------------------


def write_curve_svg(xs, ys, path, title: str) -> None:
    w, h, pad = 480, 300, 40
    xmax = max(xs) or 1
    ymax = max(ys) or 1.0
    pts = " ".join(
        f"{pad + (w - 2 * pad) * x / xmax:.1f},{h - pad - (h - 2 * pad) * y / ymax:.1f}"
        for x, y in zip(xs, ys)
    )
    svg = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">'
        f'<text x="{w/2}" y="16" text-anchor="middle">{title}</text>'
        f'<line x1="{pad}" y1="{h-pad}" x2="{w-pad}" y2="{h-pad}" stroke="black"/>'
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{h-pad}" stroke="black"/>'
        f'<polyline points="{pts}" fill="none" stroke="steelblue" stroke-width="2"/>'
        "</svg>"
    )
    Path(path).write_text(svg, encoding="utf-8")


def write_histogram_svg(values, path, title: str, bins: int = 20) -> None:
    counts, edges = np.histogram(values, bins=bins)
    w, h, pad = 480, 300, 40
    cmax = counts.max() or 1
    bars = []
    bw = (w - 2 * pad) / bins
    for i, c in enumerate(counts):
        bh = (h - 2 * pad) * c / cmax
        bars.append(
            f'<rect x="{pad + i * bw:.1f}" y="{h - pad - bh:.1f}" width="{bw:.1f}" '
            f'height="{bh:.1f}" fill="steelblue"/>'
        )
    svg = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">'
        f'<text x="{w/2}" y="16" text-anchor="middle">{title}</text>'
        f'<line x1="{pad}" y1="{h-pad}" x2="{w-pad}" y2="{h-pad}" stroke="black"/>'
        + "".join(bars)
        + "</svg>"
    )
    Path(path).write_text(svg, encoding="utf-8")


# --------------------------------------------------------------------------
# Subcommand bodies
# --------------------------------------------------------------------------


def _cmd_generate(args) -> int:
    network = load_network(args.network)
    dists = _load_dists(args.dists)
    sset = sample_scenarios(network, dists, args.n, args.seed, args.stream)
    save_scenarios(sset, args.out)
    print(f"wrote {args.n} scenarios to {args.out}")
    return 0


def _cmd_reduce(args) -> int:
    network = load_network(args.network)
    sset = load_scenarios(args.scenarios)
    result = reduce_scenarios(
        sset, args.m, network, _search_cfg(args), _mode(args), args.threads
    )
    save_scenarios(result.scenario_set, args.out)
    if args.vmatrix_dump:
        np.savetxt(args.vmatrix_dump, result.vmatrix.v, delimiter=",")
    sizes = {
        rep: sum(1 for a in result.clustering.assignment if a == rep)
        for rep in result.clustering.representatives
    }
    print(
        f"reduced {len(sset)} -> {len(result.scenario_set)} scenarios; "
        f"cluster sizes {sorted(sizes.values(), reverse=True)}; "
        f"error {result.clustering.error:.6g}"
    )
    return 0


def _cmd_optimize(args) -> int:
    network = load_network(args.network)
    sset = load_scenarios(args.scenarios)
    mode = _mode(args)
    cfg = _search_cfg(args)
    if len(sset) == 1 and not args.ph:
        tt = solve_deterministic(sset.scenarios[0], network, mode, cfg)
        history = []
    else:
        ph_cfg = PHConfig(
            rho=args.rho, theta=args.theta, k_max=args.kmax, time_limit=args.time_limit
        )
        tt, history = run_ph(sset, network, ph_cfg, cfg, mode, args.threads)
        tt = polish(tt, sset, network, args.polish_budget, cfg, mode)
    tt.save(args.out)
    if args.history:
        with open(args.history, "w", encoding="utf-8") as fh:
            fh.write("k,dispersion," + ",".join(
                f"cost_s{i}" for i in range(len(sset))) + "\n")
            for state in history:
                costs = ",".join(repr(c) for c in state.scenario_cost)
                fh.write(f"{state.k},{state.dispersion!r},{costs}\n")
    if args.dispersion_svg and history:
        write_curve_svg(
            [s.k for s in history],
            [s.dispersion for s in history],
            args.dispersion_svg,
            "consensus dispersion by iteration",
        )
    print(f"wrote timetable to {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    network = load_network(args.network)
    sset = load_scenarios(args.scenarios)
    tt = Timetable.load(args.timetable)
    mode = _mode(args)
    totals = []
    trace_fh = open(args.trace_out, "w", encoding="utf-8") if args.trace_out else None
    try:
        for idx, scen in enumerate(sset.scenarios):
            result = evaluate(tt, scen, network, mode)
            totals.append(result.cost.total)
            if trace_fh:
                for stop in result.stops:
                    rec = {"scenario": idx, **stop.to_json()}
                    trace_fh.write(json.dumps(rec) + "\n")
    finally:
        if trace_fh:
            trace_fh.close()
    payload = {
        "mode": args.mode,
        "per_scenario_total": totals,
        "mean_total": float(np.mean(totals)),
        "weighted_total": float(np.dot(sset.probability, totals)),
    }
    Path(args.out).write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")
    print(f"mean total cost {payload['mean_total']:.4f} over {len(totals)} scenarios")
    return 0


def _cmd_compare(args) -> int:
    network = load_network(args.network)
    train = load_scenarios(args.train)
    test = load_scenarios(args.test)
    cfg = CompareConfig(
        dists=_load_dists(args.dists),
        m=args.m,
        search_cfg=_search_cfg(args),
        ph_cfg=PHConfig(
            rho=args.rho, theta=args.theta, k_max=args.kmax, time_limit=args.time_limit
        ),
        polish_budget=args.polish_budget,
        threads=args.threads,
    )
    report, timetables = compare_models(network, train, test, cfg)
    emit_report(report, args.out, "json")
    for name, tt in timetables.items():
        tt.save(str(args.out) + f".{name}.timetable.json")
    if args.hist_svg:
        write_histogram_svg(
            report.per_scenario["SM"]["total_objective"],
            args.hist_svg,
            "SM per-scenario total cost",
        )
    for model in ("SM", "DSM", "SDB", "DB"):
        print(f"{model}: mean objective {report.averages[model]['total_objective']:.2f}")
    return 0


def _cmd_vss(args) -> int:
    network = load_network(args.network)
    test = load_scenarios(args.test)
    result = compute_vss(
        network,
        Timetable.load(args.stoch),
        Timetable.load(args.det),
        test,
        args.threads,
    )
    payload = {
        "vss_percent": result.vss_percent,
        "stochastic_mean": result.stochastic_mean,
        "deterministic_mean": result.deterministic_mean,
    }
    Path(args.out).write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")
    print(f"VSS = {result.vss_percent:.2f}%")
    return 0


def _cmd_report(args) -> int:
    report = load_report_json(args.input)
    emit_report(report, args.out, args.format)
    print(f"wrote {args.format} report to {args.out}")
    return 0


_COMMANDS = {
    "generate": _cmd_generate,
    "reduce": _cmd_reduce,
    "optimize": _cmd_optimize,
    "evaluate": _cmd_evaluate,
    "compare": _cmd_compare,
    "vss": _cmd_vss,
    "report": _cmd_report,
}


def dispatch(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    try:
        _write_manifest(args)
        return _COMMANDS[args.command](args)
    except (ParseError, ValidationError, ConfigError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (TransyncError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
