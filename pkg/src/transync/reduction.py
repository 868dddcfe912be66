"""Problem-driven scenario reduction: cross-evaluation matrix construction
and exact clustering around representative scenarios.

The pipeline solves each scenario deterministically (in the cheap SDB mode by
default), cross-evaluates every timetable on every scenario, and then picks
the representative subset minimizing the mean per-scenario clustering error
|v[j][rep] - v[j][j]|.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import SizeError, ValidationError
from .evaluator import Mode, evaluate
from .network import NetworkSpec
from .optimizer import SearchConfig, solve_deterministic
from .scenarios import Provenance, Scenario, ScenarioSet


@dataclass
class VMatrix:
    """v[i][j]: cost of scenario j under the timetable optimized for scenario i."""

    v: np.ndarray

    @property
    def n(self) -> int:
        return self.v.shape[0]

    def validate(self) -> None:
        if self.v.ndim != 2 or self.v.shape[0] != self.v.shape[1]:
            raise ValidationError("V matrix must be square")
        if np.any(self.v < 0):
            raise ValidationError("V matrix entries must be nonnegative")


@dataclass
class Clustering:
    representatives: tuple[int, ...]
    assignment: list[int]  # representative index per scenario
    error: float  # mean per-scenario clustering error
    reduced_probabilities: dict[int, float]

    def validate(self, n: int, m: int) -> None:
        if len(self.representatives) != m:
            raise ValidationError("clustering must open exactly m representatives")
        reps = set(self.representatives)
        if len(self.assignment) != n:
            raise ValidationError("every scenario needs an assignment")
        for j, rep in enumerate(self.assignment):
            if rep not in reps:
                raise ValidationError("assignment to a closed representative")
        for rep in reps:
            if self.assignment[rep] != rep:
                raise ValidationError("representatives must be assigned to themselves")


def default_m(n: int) -> int:
    """Reduce to roughly 3% of the sample, at least one scenario."""
    return max(1, math.ceil(0.03 * n))


def _v_row(args):
    i, scenario, scenarios, network, cfg, mode = args
    tt = solve_deterministic(scenario, network, mode, cfg, seed=cfg.seed + i)
    return i, [
        evaluate(tt, s, network, mode, cfg.eval_config).cost.total for s in scenarios
    ]


def build_v_matrix(
    scenario_set: ScenarioSet,
    network: NetworkSpec,
    solver_cfg: SearchConfig = SearchConfig(),
    mode: Mode = Mode.SDB,
    threads: int = 1,
) -> VMatrix:
    """One deterministic solve per scenario, then full cross-evaluation."""
    scenarios = scenario_set.scenarios
    tasks = [
        (i, scenarios[i], scenarios, network, solver_cfg, mode)
        for i in range(len(scenarios))
    ]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(_v_row, tasks))
    else:
        rows = [_v_row(t) for t in tasks]
    v = np.zeros((len(scenarios), len(scenarios)))
    for i, row in rows:
        v[i, :] = row
    out = VMatrix(v=v)
    out.validate()
    return out


def _assignment_for(err: np.ndarray, reps: tuple[int, ...]) -> tuple[list[int], float]:
    """Each scenario picks the open representative with the smallest error;
    a representative always keeps itself (its error is zero), and ties prefer
    the smaller index."""
    n = err.shape[0]
    assignment = []
    total = 0.0
    for j in range(n):
        best_rep, best_err = None, math.inf
        for rep in reps:
            e = err[j, rep] if rep != j else 0.0
            if e < best_err - 1e-15 or (abs(e - best_err) <= 1e-15 and rep == j):
                best_rep, best_err = rep, e
        assignment.append(best_rep)
        total += best_err
    return assignment, total / n


def solve_clustering(
    vmatrix: VMatrix,
    m: int,
    enumeration_budget: int = 2_000_000,
    node_budget: int = 20_000_000,
) -> Clustering:
    """Exact optimum: exhaustive subset enumeration when the subset count is
    affordable, depth-first branch and bound with a relaxation bound
    otherwise.  SizeError when both budgets are exceeded."""
    vmatrix.validate()
    v = vmatrix.v
    n = vmatrix.n
    if not (1 <= m <= n):
        raise ValidationError(f"m must lie in [1, {n}], got {m}")
    err = np.abs(v - np.diag(v)[:, None])  # err[j, i] = |v[j][i] - v[j][j]|
    np.fill_diagonal(err, 0.0)

    n_subsets = math.comb(n, m)
    if n_subsets <= enumeration_budget:
        best_reps, best_val = None, math.inf
        for reps in itertools.combinations(range(n), m):
            val = float(err[:, reps].min(axis=1).mean())
            if val < best_val - 1e-15:
                best_reps, best_val = reps, val
    else:
        best_reps, best_val = _branch_and_bound(err, m, node_budget)

    assignment, error = _assignment_for(err, best_reps)
    probabilities: dict[int, float] = {rep: 0.0 for rep in best_reps}
    clustering = Clustering(
        representatives=best_reps,
        assignment=assignment,
        error=error,
        reduced_probabilities=probabilities,
    )
    clustering.validate(n, m)
    return clustering


def _branch_and_bound(err: np.ndarray, m: int, node_budget: int):
    """DFS over include/exclude decisions; the bound lets every scenario pick
    its best error among all not-yet-excluded candidates."""
    n = err.shape[0]
    best = {"reps": None, "val": math.inf, "nodes": 0}

    def bound(allowed_mask: np.ndarray) -> float:
        return float(err[:, allowed_mask].min(axis=1).mean())

    def dfs(next_idx: int, chosen: list[int], excluded: list[int]):
        best["nodes"] += 1
        if best["nodes"] > node_budget:
            raise SizeError(
                "clustering search exceeded its enumeration budget; "
                "reduce n or increase the budget"
            )
        if len(chosen) == m:
            reps = tuple(chosen)
            val = float(err[:, reps].min(axis=1).mean())
            if val < best["val"] - 1e-15:
                best["reps"], best["val"] = reps, val
            return
        if n - next_idx < m - len(chosen):
            return
        allowed = np.ones(n, dtype=bool)
        allowed[excluded] = False
        if bound(allowed) >= best["val"] - 1e-15 and best["reps"] is not None:
            return
        dfs(next_idx + 1, chosen + [next_idx], excluded)
        dfs(next_idx + 1, chosen, excluded + [next_idx])

    dfs(0, [], [])
    if best["reps"] is None:
        raise SizeError("clustering search found no subset within budget")
    return best["reps"], best["val"]


@dataclass
class ReductionResult:
    scenario_set: ScenarioSet
    clustering: Clustering
    vmatrix: VMatrix


def reduce_scenarios(
    scenario_set: ScenarioSet,
    m: int | None,
    network: NetworkSpec,
    solver_cfg: SearchConfig = SearchConfig(),
    mode: Mode = Mode.SDB,
    threads: int = 1,
    vmatrix: VMatrix | None = None,
) -> ReductionResult:
    """Full reduction pipeline: V matrix, exact clustering, and the reduced
    set whose representative probabilities carry their clusters' mass."""
    if m is None:
        m = default_m(len(scenario_set))
    if vmatrix is None:
        vmatrix = build_v_matrix(scenario_set, network, solver_cfg, mode, threads)
    clustering = solve_clustering(vmatrix, m)
    mass: dict[int, float] = {rep: 0.0 for rep in clustering.representatives}
    for j, rep in enumerate(clustering.assignment):
        mass[rep] += float(scenario_set.probability[j])
    clustering.reduced_probabilities = mass
    reps = list(clustering.representatives)
    reduced = ScenarioSet(
        scenarios=[scenario_set.scenarios[r] for r in reps],
        probability=np.array([mass[r] for r in reps]),
        seed=scenario_set.seed,
        provenance=Provenance.REDUCED,
    )
    return ReductionResult(scenario_set=reduced, clustering=clustering, vmatrix=vmatrix)
