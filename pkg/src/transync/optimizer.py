"""Timetable optimization: derivative-free coordinate search for
single-scenario (deterministic) solves and scenario subproblems, the
progressive hedging loop over a scenario set, and a final consensus polish.

The search works directly on the published departure times.  Every candidate
move is clipped into the interval allowed by the neighbouring trips'
headway-band constraints, so all visited timetables are feasible by
construction.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .evaluator import EvalConfig, DEFAULT_EVAL_CONFIG, Mode, Timetable, evaluate
from .network import NetworkSpec, trip_count
from .scenarios import Scenario, ScenarioSet

MuMap = dict[str, np.ndarray]  # multiplier per pdep coordinate, shaped like Timetable


@dataclass(frozen=True)
class SearchConfig:
    """Knobs of the coordinate-search engine."""

    restarts: int = 2
    step_init: float = 4.0
    step_min: float = 0.25
    shrink: float = 0.5
    max_passes: int = 4  # sweeps per step level before shrinking
    seed: int = 0
    init_slack: float = 1.0  # nominal node departure = arrival + slack
    jitter: float = 2.0  # restart initial-point perturbation, minutes
    max_evals: int | None = None
    event_jumps: bool = True  # offer event-alignment jump candidates
    eval_config: EvalConfig = DEFAULT_EVAL_CONFIG


@dataclass(frozen=True)
class PHConfig:
    rho: float = 1.0
    theta: float = 0.05
    k_max: int = 15
    time_limit: float | None = None  # wall seconds, checked between iterations


@dataclass
class PHState:
    """Snapshot of one progressive-hedging iteration."""

    k: int
    rho: float
    theta: float
    k_max: int
    dispersion: float
    pdep_bar: Timetable
    pdep_s: list[Timetable]
    mu: list[MuMap]
    scenario_cost: list[float]


@dataclass
class SolveStats:
    best_cost: float
    evals: int
    restart_costs: list[float] = field(default_factory=list)


# --------------------------------------------------------------------------
# Feasibility helpers
# --------------------------------------------------------------------------


def project_to_feasible(tt: Timetable, network: NetworkSpec) -> Timetable:
    """Sequential clipping in trip order onto the headway band; the first
    terminal departure is additionally capped by the line's headway_max."""
    out = tt.copy()
    for ln in network.lines:
        arr = out.pdep[ln.line_id]
        for col in range(arr.shape[1]):
            top = ln.headway_max if col == 0 else math.inf
            arr[0, col] = min(max(arr[0, col], 0.0), top)
            for p in range(1, arr.shape[0]):
                lo = arr[p - 1, col] + ln.headway_min
                hi = arr[p - 1, col] + ln.headway_max
                arr[p, col] = min(max(arr[p, col], lo), hi)
    return out


def nominal_timetable(
    network: NetworkSpec, scenario: Scenario, slack: float = 1.0
) -> Timetable:
    """Evenly spaced terminal departures; each downstream published departure
    sits ``slack`` minutes after that trip's arrival under ``scenario``."""
    pdep = {}
    for ln in network.lines:
        trips = trip_count(ln, network.horizon_T)
        arr = np.zeros((trips, len(ln.node_sequence)))
        arr[:, 0] = ln.headway_h * (np.arange(trips) + 1.0)
        arr[0, 0] = min(arr[0, 0], ln.headway_max)
        run = scenario.running_time[ln.line_id]
        for col in range(1, arr.shape[1]):
            arr[:, col] = arr[:, col - 1] + run[:, col - 1] + slack
        pdep[ln.line_id] = arr
    return project_to_feasible(Timetable(pdep), network)


def _coords(network: NetworkSpec) -> list[tuple[str, int, int]]:
    coords = []
    for ln in network.lines:
        trips = trip_count(ln, network.horizon_T)
        for col in range(len(ln.node_sequence)):
            for p in range(trips):
                coords.append((ln.line_id, p, col))
    return coords


def _move_interval(
    arr: np.ndarray, network_line, p: int, col: int
) -> tuple[float, float]:
    """Feasible interval for coordinate (p, col) with all others fixed."""
    lo, hi = 0.0, math.inf
    if p == 0 and col == 0:
        hi = network_line.headway_max
    if p > 0:
        lo = max(lo, arr[p - 1, col] + network_line.headway_min)
        hi = min(hi, arr[p - 1, col] + network_line.headway_max)
    if p + 1 < arr.shape[0]:
        lo = max(lo, arr[p + 1, col] - network_line.headway_max)
        hi = min(hi, arr[p + 1, col] - network_line.headway_min)
    return lo, hi


# --------------------------------------------------------------------------
# Coordinate search
# --------------------------------------------------------------------------


class _Budget:
    def __init__(self, limit: int | None):
        self.limit = limit
        self.used = 0

    def take(self) -> bool:
        if self.limit is not None and self.used >= self.limit:
            return False
        self.used += 1
        return True


class _EventTargets:
    """Passenger/bus event times used as jump candidates.

    For a coordinate that publishes a departure at a node, useful alignments
    are (a) the trip's own arrival there and (b) transfer-group stop-arrival
    events it could catch; for a terminal coordinate, the trip wants its
    *arrival* at the next node to meet either its feeders' group events (as a
    connecting bus) or the connecting bus arrivals its own riders transfer to
    (as a feeder).  Arrival estimates chain published departures with running
    times, ignoring dwell.  With several scenarios (an SAA objective) the
    event set is the union across scenarios, which is exactly where that
    objective's breakpoints live.
    """

    def __init__(self, network: NetworkSpec, scenarios: list[Scenario]):
        self.scenarios = scenarios
        self.positions = {
            ln.line_id: {node: i for i, node in enumerate(ln.node_sequence)}
            for ln in network.lines
        }
        self.feeders_of: dict[tuple[str, str], list[tuple[str, int, tuple]]] = {}
        self.connections_of: dict[tuple[str, str], list[tuple[str, int, tuple]]] = {}
        for tp in network.transfer_pairs:
            key = (tp.node, tp.feeder_line, tp.connecting_line)
            cpos = self.positions[tp.connecting_line][tp.node]
            fpos = self.positions[tp.feeder_line][tp.node]
            self.feeders_of.setdefault((tp.connecting_line, cpos), []).append(
                (tp.feeder_line, fpos, key)
            )
            self.connections_of.setdefault((tp.feeder_line, fpos), []).append(
                (tp.connecting_line, cpos, key)
            )

    def running(self, line_id: str, trip: int, seg: int) -> float:
        return float(
            np.mean([s.running_time[line_id][trip, seg] for s in self.scenarios])
        )

    def _arrivals(self, current: Timetable, line_id: str, pos: int, s: Scenario) -> np.ndarray:
        run = s.running_time[line_id]
        return current.pdep[line_id][:, pos - 1] + run[:, pos - 1]

    def group_events(self, current: Timetable, line_id: str, pos: int) -> list[float]:
        """Stop-arrival times of transfer groups feeding (line, node)."""
        events: list[float] = []
        for feeder_id, fpos, key in self.feeders_of.get((line_id, pos), ()):
            for s in self.scenarios:
                walk = s.walking_time[key]
                events.extend(self._arrivals(current, feeder_id, fpos, s) + walk)
        return events

    def desired_arrivals(self, current: Timetable, line_id: str, pos: int) -> list[float]:
        """Arrival times at (line, pos) worth steering toward."""
        events = self.group_events(current, line_id, pos)
        for conn_id, cpos, key in self.connections_of.get((line_id, pos), ()):
            for s in self.scenarios:
                walk = s.walking_time[key]
                events.extend(self._arrivals(current, conn_id, cpos, s) - walk)
        return events

    def own_arrivals(self, current: Timetable, line_id: str, p: int, col: int) -> list[float]:
        return [
            float(current.pdep[line_id][p, col - 1] + s.running_time[line_id][p, col - 1])
            for s in self.scenarios
        ]


def _nearest(events: list[float], ref: float, count: int = 2) -> list[float]:
    return sorted(events, key=lambda e: abs(e - ref))[:count]


def _search_from(
    network: NetworkSpec,
    objective,
    start: Timetable,
    cfg: SearchConfig,
    scenarios: list[Scenario] | None,
    budget: _Budget,
) -> tuple[Timetable, float]:
    """Cyclic coordinate descent with a shrinking step schedule plus jumps to
    passenger/bus event alignments (the cost is piecewise linear in each
    coordinate with breakpoints at exactly those events)."""
    current = project_to_feasible(start, network)
    if not budget.take():
        return current, math.inf
    best_cost = objective(current)
    coords = _coords(network)
    lines = {ln.line_id: ln for ln in network.lines}
    targets = (
        _EventTargets(network, scenarios)
        if (scenarios and cfg.event_jumps)
        else None
    )

    block_coords = [
        (ln.line_id, col)
        for ln in network.lines
        for col in range(len(ln.node_sequence))
    ]

    step = cfg.step_init
    while step >= cfg.step_min:
        for _ in range(cfg.max_passes):
            improved = False
            for line_id, p, col in coords:
                arr = current.pdep[line_id]
                x = arr[p, col]
                lo, hi = _move_interval(arr, lines[line_id], p, col)
                trials = [x - step, x + step]
                if targets is not None:
                    if col >= 1:
                        own = targets.own_arrivals(current, line_id, p, col)
                        trials.extend(_nearest(own, x))
                        for e in _nearest(
                            targets.group_events(current, line_id, col), own[0]
                        ):
                            trials.append(e + 0.3)
                    if col + 1 < arr.shape[1]:
                        # steer this trip's arrival at the next node onto an event
                        run_mean = targets.running(line_id, p, col)
                        for e in _nearest(
                            targets.desired_arrivals(current, line_id, col + 1),
                            arr[p, col] + run_mean,
                        ):
                            trials.append(e - run_mean)
                for t in trials:
                    t = min(max(t, lo), hi)
                    if abs(t - x) < 1e-9:
                        continue
                    if not budget.take():
                        return current, best_cost
                    arr[p, col] = t
                    cost = objective(current)
                    if cost < best_cost - 1e-9:
                        best_cost = cost
                        x = t
                        improved = True
                    else:
                        arr[p, col] = x
            # whole-column phase shifts: headway gaps are untouched, so these
            # stay feasible where single-trip moves are boxed in by the band
            for line_id, col in block_coords:
                arr = current.pdep[line_id]
                ln = lines[line_id]
                for delta in (step, -step):
                    column = arr[:, col].copy()
                    if column[0] + delta < 0.0:
                        continue
                    if col == 0 and column[0] + delta > ln.headway_max:
                        continue
                    if not budget.take():
                        return current, best_cost
                    arr[:, col] = column + delta
                    cost = objective(current)
                    if cost < best_cost - 1e-9:
                        best_cost = cost
                        improved = True
                    else:
                        arr[:, col] = column
            if not improved:
                break
        step *= cfg.shrink
    return current, best_cost


def _multi_start(
    network: NetworkSpec,
    objective,
    scenarios: list[Scenario] | None,
    cfg: SearchConfig,
    warm_start: Timetable | None,
    seed: int | None,
) -> tuple[Timetable, SolveStats]:
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    base = (
        warm_start
        if warm_start is not None
        else nominal_timetable(network, scenarios[0], cfg.init_slack)
        if scenarios
        else None
    )
    if base is None:
        raise ValueError("need a scenario or a warm start to build an initial point")
    starts = [base]
    for _ in range(max(0, cfg.restarts - 1)):
        jittered = base.copy()
        for arr in jittered.pdep.values():
            arr += rng.uniform(-cfg.jitter, cfg.jitter, size=arr.shape)
        starts.append(jittered)

    budget = _Budget(cfg.max_evals)
    best_tt, best_cost = None, math.inf
    restart_costs = []
    for start in starts:
        tt, cost = _search_from(network, objective, start, cfg, scenarios, budget)
        restart_costs.append(cost)
        if cost < best_cost:
            best_tt, best_cost = tt, cost
    assert best_tt is not None
    return best_tt, SolveStats(best_cost=best_cost, evals=budget.used, restart_costs=restart_costs)


# --------------------------------------------------------------------------
# Public solves
# --------------------------------------------------------------------------


def solve_deterministic(
    scenario: Scenario,
    network: NetworkSpec,
    mode: Mode,
    search_cfg: SearchConfig = SearchConfig(),
    seed: int | None = None,
    warm_start: Timetable | None = None,
    return_stats: bool = False,
):
    """Best-found timetable for a single scenario under the given evaluation
    mode.  Deterministic in (inputs, seed)."""

    def objective(tt: Timetable) -> float:
        return evaluate(tt, scenario, network, mode, search_cfg.eval_config).cost.total

    tt, stats = _multi_start(network, objective, [scenario], search_cfg, warm_start, seed)
    return (tt, stats) if return_stats else tt


def _zero_mu(network: NetworkSpec) -> MuMap:
    mu = {}
    for ln in network.lines:
        trips = trip_count(ln, network.horizon_T)
        mu[ln.line_id] = np.zeros((trips, len(ln.node_sequence)))
    return mu


def subproblem_objective_terms(
    tt: Timetable, mu: MuMap, pdep_bar: Timetable, rho: float
) -> float:
    """Multiplier (linear) plus proximal (quadratic) penalty of a subproblem."""
    extra = 0.0
    for line_id, arr in tt.pdep.items():
        diff = arr - pdep_bar.pdep[line_id]
        extra += float(np.sum(mu[line_id] * diff))
        extra += 0.5 * rho * float(np.sum(diff * diff))
    return extra


def solve_subproblem(
    scenario: Scenario,
    network: NetworkSpec,
    mu: MuMap | None,
    pdep_bar: Timetable | None,
    rho: float,
    search_cfg: SearchConfig = SearchConfig(),
    mode: Mode = Mode.SM,
    seed: int | None = None,
    warm_start: Timetable | None = None,
) -> Timetable:
    """One scenario's augmented subproblem: the scenario cost plus the
    multiplier term and quadratic consensus penalty.  With ``mu`` zero (or
    None) and ``rho`` zero this is exactly the deterministic solve."""
    if mu is None:
        mu = _zero_mu(network)

    def objective(tt: Timetable) -> float:
        cost = evaluate(tt, scenario, network, mode, search_cfg.eval_config).cost.total
        if pdep_bar is not None:
            cost += subproblem_objective_terms(tt, mu, pdep_bar, rho)
        return cost

    if warm_start is None and pdep_bar is not None:
        warm_start = pdep_bar
    tt, _ = _multi_start(network, objective, [scenario], search_cfg, warm_start, seed)
    return tt


def _weighted_mean(tts: list[Timetable], probs: np.ndarray) -> Timetable:
    out = {}
    for line_id in tts[0].pdep:
        out[line_id] = sum(
            p * tt.pdep[line_id] for p, tt in zip(probs, tts)
        )
    return Timetable(out)


def dispersion_of(tts: list[Timetable], bar: Timetable, probs: np.ndarray) -> float:
    """Probability-weighted sum of per-scenario L2 distances to consensus."""
    total = 0.0
    for p, tt in zip(probs, tts):
        sq = 0.0
        for line_id, arr in tt.pdep.items():
            diff = arr - bar.pdep[line_id]
            sq += float(np.sum(diff * diff))
        total += float(p) * math.sqrt(sq)
    return total


def _ph_solve_one(args):
    scenario, network, mu, bar, rho, cfg, mode, seed, warm = args
    return solve_subproblem(
        scenario, network, mu, bar, rho, cfg, mode, seed=seed, warm_start=warm
    )


def run_ph(
    reduced: ScenarioSet,
    network: NetworkSpec,
    ph_cfg: PHConfig = PHConfig(),
    search_cfg: SearchConfig = SearchConfig(),
    mode: Mode = Mode.SM,
    threads: int = 1,
) -> tuple[Timetable, list[PHState]]:
    """Progressive hedging over the scenario set.

    Initialization solves each scenario plainly, averages with the scenario
    probabilities, and seeds the multipliers with rho times each scenario's
    deviation from consensus; every later iteration solves the augmented
    subproblems, re-averages, and accumulates the multipliers.  Stops when
    the weighted dispersion drops to theta, the iteration cap is hit, or the
    wall-clock limit passes.  Returns the feasibility-projected consensus.
    """
    import time as _time

    t_start = _time.monotonic()
    probs = reduced.probability
    scenarios = reduced.scenarios
    rho = ph_cfg.rho
    # iteration solves start at the consensus with a single restart and local
    # moves only: the quadratic term makes far event jumps unproductive and
    # they destabilize the dispersion trajectory
    iter_cfg = replace(search_cfg, restarts=1, event_jumps=False)

    def solve_all(mu_list, bar):
        init = bar is None
        cfg = search_cfg if init else iter_cfg
        tasks = [
            (
                scenarios[i],
                network,
                mu_list[i] if mu_list else None,
                bar,
                rho if not init else 0.0,
                cfg,
                mode,
                cfg.seed + i,
                bar,
            )
            for i in range(len(scenarios))
        ]
        if threads > 1:
            with ProcessPoolExecutor(max_workers=threads) as pool:
                return list(pool.map(_ph_solve_one, tasks))
        return [_ph_solve_one(t) for t in tasks]

    # initialization: plain per-scenario solves, consensus, initial multipliers
    pdep_s = solve_all(None, None)
    bar = _weighted_mean(pdep_s, probs)
    mu = [
        {
            line_id: rho * (tt.pdep[line_id] - bar.pdep[line_id])
            for line_id in tt.pdep
        }
        for tt in pdep_s
    ]
    k = 0
    history: list[PHState] = []

    def record():
        disp = dispersion_of(pdep_s, bar, probs)
        for line_id in bar.pdep:
            balance = sum(p * m[line_id] for p, m in zip(probs, mu))
            scale = max(1.0, max(float(np.max(np.abs(m[line_id]))) for m in mu))
            assert np.all(
                np.abs(balance) < 1e-6 * scale
            ), "weighted multipliers must sum to zero"
        costs = [
            evaluate(tt, s, network, mode, search_cfg.eval_config).cost.total
            for tt, s in zip(pdep_s, scenarios)
        ]
        history.append(
            PHState(
                k=k,
                rho=rho,
                theta=ph_cfg.theta,
                k_max=ph_cfg.k_max,
                dispersion=disp,
                pdep_bar=bar.copy(),
                pdep_s=[tt.copy() for tt in pdep_s],
                mu=[{lid: m[lid].copy() for lid in m} for m in mu],
                scenario_cost=costs,
            )
        )
        return disp

    disp = record()
    # the published loop always runs its body at least once and checks the
    # termination criteria afterwards
    while k < ph_cfg.k_max:
        if ph_cfg.time_limit is not None and _time.monotonic() - t_start > ph_cfg.time_limit:
            break
        pdep_s = solve_all(mu, bar)
        bar = _weighted_mean(pdep_s, probs)
        for i, tt in enumerate(pdep_s):
            for line_id in tt.pdep:
                mu[i][line_id] = mu[i][line_id] + rho * (
                    tt.pdep[line_id] - bar.pdep[line_id]
                )
        k += 1
        disp = record()
        if disp <= ph_cfg.theta:
            break

    return project_to_feasible(bar, network), history


def polish(
    warm_start: Timetable,
    reduced: ScenarioSet,
    network: NetworkSpec,
    budget: int,
    search_cfg: SearchConfig = SearchConfig(),
    mode: Mode = Mode.SM,
) -> Timetable:
    """Local search on the probability-weighted scenario objective starting
    from the consensus; never returns anything worse than the start."""
    if budget <= 0:
        return warm_start

    def objective(tt: Timetable) -> float:
        return sum(
            float(p) * evaluate(tt, s, network, mode, search_cfg.eval_config).cost.total
            for p, s in zip(reduced.probability, reduced.scenarios)
        )

    cfg = replace(search_cfg, restarts=1, max_evals=budget)
    start_cost = objective(warm_start)
    tt, stats = _multi_start(
        network, objective, list(reduced.scenarios), cfg, warm_start, None
    )
    return tt if stats.best_cost <= start_cost else warm_start


def saa_objective(
    tt: Timetable,
    scenario_set: ScenarioSet,
    network: NetworkSpec,
    mode: Mode = Mode.SM,
    eval_config: EvalConfig = DEFAULT_EVAL_CONFIG,
) -> float:
    """Probability-weighted average scenario cost of a timetable."""
    return sum(
        float(p) * evaluate(tt, s, network, mode, eval_config).cost.total
        for p, s in zip(scenario_set.probability, scenario_set.scenarios)
    )
