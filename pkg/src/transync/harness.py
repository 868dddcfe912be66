"""Experiment harness: build the four candidate timetables (stochastic and
deterministic, detailed and simplified), score them on a test set with the
detailed evaluator, compute the value of the stochastic solution, and emit
reports."""

from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DivisionError
from .evaluator import Mode, Timetable, evaluate
from .network import NetworkSpec
from .optimizer import PHConfig, SearchConfig, polish, run_ph, solve_deterministic
from .reduction import ReductionResult, reduce_scenarios
from .scenarios import DistributionConfig, ScenarioSet, mean_scenario

#: Table row labels, in presentation order.
METRICS = (
    "total_objective",
    "transfer_wait_person_min",
    "delay_min",
    "delay_person_min",
    "unnecessary_min",
    "unnecessary_person_min",
)

METRIC_LABELS = {
    "total_objective": "Total objective function value (person.min)",
    "transfer_wait_person_min": "Total transfer waiting time * demand (person.min)",
    "delay_min": "Total delay time (min)",
    "delay_person_min": "Total delay time * demand (person.min)",
    "unnecessary_min": "Total unnecessary in-vehicle time (min)",
    "unnecessary_person_min": "Total unnecessary in-vehicle time * demand (person.min)",
}

MODELS = ("SM", "DSM", "SDB", "DB")


@dataclass
class ComparisonReport:
    """Per-model averages over the test set plus the raw per-scenario values."""

    averages: dict[str, dict[str, float]]  # model -> metric -> mean
    per_scenario: dict[str, dict[str, list[float]]]  # model -> metric -> values
    ungated: dict[str, dict[str, float]]  # model -> diagnostic -> mean
    metadata: dict = field(default_factory=dict)

    def validate(self) -> None:
        for model, metrics in self.averages.items():
            for metric, value in metrics.items():
                values = self.per_scenario[model][metric]
                assert abs(value - float(np.mean(values))) < 1e-9


@dataclass
class VssResult:
    vss_percent: float
    stochastic_mean: float
    deterministic_mean: float


def _metrics_of(cost) -> dict[str, float]:
    raw = cost.raw
    return {
        "total_objective": cost.total,
        "transfer_wait_person_min": raw["transfer_wait_person_min"],
        "delay_min": raw["delay_min_gated"],
        "delay_person_min": raw["delay_person_min_gated"],
        "unnecessary_min": raw["unnecessary_min_gated"],
        "unnecessary_person_min": raw["unnecessary_person_min_gated"],
    }


def _eval_chunk(args):
    timetables, scenarios, network = args
    out = []
    for s in scenarios:
        row = {}
        for name, tt in timetables.items():
            cost = evaluate(tt, s, network, Mode.SM).cost
            row[name] = (_metrics_of(cost), cost.raw)
        out.append(row)
    return out


def score_timetables(
    timetables: dict[str, Timetable],
    test_set: ScenarioSet,
    network: NetworkSpec,
    threads: int = 1,
) -> ComparisonReport:
    """Evaluate every candidate timetable on every test scenario with the
    detailed (SM) evaluator and aggregate the table rows."""
    scenarios = test_set.scenarios
    if threads > 1:
        chunks = np.array_split(np.arange(len(scenarios)), threads * 2)
        tasks = [
            (timetables, [scenarios[i] for i in idx], network)
            for idx in chunks
            if len(idx)
        ]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            rows = [r for part in pool.map(_eval_chunk, tasks) for r in part]
    else:
        rows = _eval_chunk((timetables, scenarios, network))

    per_scenario = {m: {metric: [] for metric in METRICS} for m in timetables}
    ungated_acc = {m: {"unnecessary_min_all": [], "delay_min_all": []} for m in timetables}
    for row in rows:
        for model, (metrics, raw) in row.items():
            for metric in METRICS:
                per_scenario[model][metric].append(metrics[metric])
            ungated_acc[model]["unnecessary_min_all"].append(raw["unnecessary_min_all"])
            ungated_acc[model]["delay_min_all"].append(raw["delay_min_all"])
    averages = {
        model: {metric: float(np.mean(vals)) for metric, vals in metrics.items()}
        for model, metrics in per_scenario.items()
    }
    ungated = {
        model: {k: float(np.mean(v)) for k, v in diag.items()}
        for model, diag in ungated_acc.items()
    }
    report = ComparisonReport(
        averages=averages, per_scenario=per_scenario, ungated=ungated
    )
    report.validate()
    return report


@dataclass
class CompareConfig:
    dists: DistributionConfig
    m: int | None = None
    search_cfg: SearchConfig = field(default_factory=SearchConfig)
    ph_cfg: PHConfig = field(default_factory=PHConfig)
    polish_budget: int = 300
    threads: int = 1


def build_stochastic_timetable(
    network: NetworkSpec,
    train_set: ScenarioSet,
    cfg: CompareConfig,
    mode: Mode,
    reduction: ReductionResult | None = None,
) -> tuple[Timetable, ReductionResult, list]:
    """Reduce, run progressive hedging under ``mode``, then polish."""
    if reduction is None:
        reduction = reduce_scenarios(
            train_set, cfg.m, network, cfg.search_cfg, Mode.SDB, cfg.threads
        )
    reduced = reduction.scenario_set
    consensus, history = run_ph(
        reduced, network, cfg.ph_cfg, cfg.search_cfg, mode, cfg.threads
    )
    polished = polish(
        consensus, reduced, network, cfg.polish_budget, cfg.search_cfg, mode
    )
    return polished, reduction, history


def compare_models(
    network: NetworkSpec,
    train_set: ScenarioSet,
    test_set: ScenarioSet,
    cfg: CompareConfig,
) -> tuple[ComparisonReport, dict[str, Timetable]]:
    """The four-way model comparison.

    SM and SDB come from the stochastic pipeline (reduction + progressive
    hedging + polish) under the detailed and simplified objectives; DSM and
    DB solve the mean scenario deterministically under the same two
    objectives.  All four are scored by the detailed evaluator on the test
    set.
    """
    mean = mean_scenario(network, cfg.dists)
    tt_sm, reduction, _ = build_stochastic_timetable(network, train_set, cfg, Mode.SM)
    tt_sdb, _, _ = build_stochastic_timetable(
        network, train_set, cfg, Mode.SDB, reduction=reduction
    )
    tt_dsm = solve_deterministic(mean, network, Mode.SM, cfg.search_cfg)
    tt_db = solve_deterministic(mean, network, Mode.SDB, cfg.search_cfg)
    timetables = {"SM": tt_sm, "DSM": tt_dsm, "SDB": tt_sdb, "DB": tt_db}
    report = score_timetables(timetables, test_set, network, cfg.threads)
    report.metadata = {
        "train_seed": train_set.seed,
        "test_seed": test_set.seed,
        "n_train": len(train_set),
        "n_test": len(test_set),
        "m": len(reduction.scenario_set),
        "rho": cfg.ph_cfg.rho,
        "theta": cfg.ph_cfg.theta,
        "k_max": cfg.ph_cfg.k_max,
        "search_seed": cfg.search_cfg.seed,
        "restarts": cfg.search_cfg.restarts,
        "polish_budget": cfg.polish_budget,
        "dists": cfg.dists.to_json(),
    }
    return report, timetables


def compute_vss(
    network: NetworkSpec,
    timetable_stoch: Timetable,
    timetable_det: Timetable,
    test_set: ScenarioSet,
    threads: int = 1,
) -> VssResult:
    """Relative improvement of the stochastic timetable over the
    deterministic one, averaged over the test set under the detailed
    evaluator."""
    report = score_timetables(
        {"stoch": timetable_stoch, "det": timetable_det}, test_set, network, threads
    )
    stoch = report.averages["stoch"]["total_objective"]
    det = report.averages["det"]["total_objective"]
    if det == 0.0:
        raise DivisionError("deterministic mean objective is zero; VSS undefined")
    return VssResult(
        vss_percent=100.0 * (det - stoch) / det,
        stochastic_mean=stoch,
        deterministic_mean=det,
    )


# --------------------------------------------------------------------------
# Report emission
# --------------------------------------------------------------------------


def emit_report(report: ComparisonReport, path: str | Path, format: str = "json") -> None:
    path = Path(path)
    if format == "json":
        payload = {
            "format": "transync-report",
            "version": 1,
            "averages": report.averages,
            "per_scenario": report.per_scenario,
            "ungated": report.ungated,
            "metadata": report.metadata,
        }
        path.write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")
    elif format == "csv":
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["model", "metric", "mean"])
            for model in report.averages:
                for metric in METRICS:
                    writer.writerow([model, metric, repr(report.averages[model][metric])])
    elif format == "markdown":
        models = [m for m in MODELS if m in report.averages] or list(report.averages)
        lines = ["| Objective item | " + " | ".join(models) + " |"]
        lines.append("|" + " --- |" * (len(models) + 1))
        for metric in METRICS:
            cells = [f"{report.averages[m][metric]:.2f}" for m in models]
            lines.append(f"| {METRIC_LABELS[metric]} | " + " | ".join(cells) + " |")
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    else:
        raise ValueError(f"unknown report format {format!r}")


def load_report_csv(path: str | Path) -> dict[str, dict[str, float]]:
    out: dict[str, dict[str, float]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        assert header == ["model", "metric", "mean"]
        for model, metric, value in reader:
            out.setdefault(model, {})[metric] = float(value)
    return out


def load_report_json(path: str | Path) -> ComparisonReport:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return ComparisonReport(
        averages=payload["averages"],
        per_scenario=payload["per_scenario"],
        ungated=payload["ungated"],
        metadata=payload.get("metadata", {}),
    )
