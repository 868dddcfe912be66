"""Deterministic second-stage evaluation of a timetable under one scenario.

Given first-stage published departure times and one realization of the random
inputs, this module executes the transfer/dwell semantics exactly: arrival
propagation, arrival-zone classification, successful-transfer typing
(arrive-before-bus / arrive-during-boarding / caught-via-buffer), the
low-frequency local-passenger wave cascade, buffer selection, departure
times, and all waiting-time accounting.

Execution is event driven: every indicator of the underlying optimization
formulation is computed by evaluating its defining inequality, and the only
free recourse quantities, the per-stop transfer buffers, are optimized by
candidate enumeration (exact for small stop cascades, one-node look-ahead
otherwise).
"""

from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass, field, fields
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import MissingDataError, ValidationError
from .network import FrequencyClass, LineSpec, NetworkSpec, trip_count
from .scenarios import Scenario

_EPS = 1e-9  # catch-equality and tie tolerance, minutes


class Mode(Enum):
    """SM runs the full arrival-pattern model; SDB is the buffer-based
    simplification where local demand boards on bus arrival and the
    zone-dependent local waves are dropped."""

    SM = "sm"
    SDB = "sdb"


class Zone(Enum):
    H1 = "H1"  # high frequency, bus arrives before its published departure
    H2 = "H2"  # high frequency, bus arrives at/after its published departure
    L1 = "L1"  # low frequency, early: before both local waves
    L2 = "L2"  # low frequency, between the outer and inner local waves
    L3 = "L3"  # low frequency, after the inner local wave, still early
    L4 = "L4"  # low frequency, at/after the published departure


class TransferType(Enum):
    TYPE1 = "Type1"  # passengers arrive at/before the connecting bus
    TYPE2 = "Type2"  # passengers arrive during first-wave boarding
    TYPE3 = "Type3"  # passengers caught by the first transfer buffer
    SEMI_TYPE2 = "SemiType2"  # arrive during a later local boarding wave
    SEMI_TYPE3 = "SemiType3"  # caught by a later wave's transfer buffer
    MISSED = "Missed"  # served by the first trip of the next horizon


@dataclass
class Timetable:
    """First-stage published departures: per line, (trips, len(node_sequence))."""

    pdep: dict[str, np.ndarray]

    def copy(self) -> "Timetable":
        return Timetable({k: v.copy() for k, v in self.pdep.items()})

    def validate(self, network: NetworkSpec, tol: float = 1e-6) -> None:
        for ln in network.lines:
            trips = trip_count(ln, network.horizon_T)
            arr = self.pdep.get(ln.line_id)
            if arr is None:
                raise ValidationError(f"timetable missing line {ln.line_id}")
            if arr.shape != (trips, len(ln.node_sequence)):
                raise ValidationError(
                    f"timetable for line {ln.line_id}: shape {arr.shape}, "
                    f"expected {(trips, len(ln.node_sequence))}"
                )
            if np.any(arr < -tol):
                raise ValidationError(f"line {ln.line_id}: departure before horizon start")
            if arr[0, 0] > ln.headway_max + tol:
                raise ValidationError(
                    f"line {ln.line_id}: first terminal departure exceeds headway_max"
                )
            if trips > 1:
                diffs = np.diff(arr, axis=0)
                if np.any(diffs < ln.headway_min - tol) or np.any(
                    diffs > ln.headway_max + tol
                ):
                    raise ValidationError(
                        f"line {ln.line_id}: successive departures violate headway band"
                    )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Timetable):
            return NotImplemented
        return self.pdep.keys() == other.pdep.keys() and all(
            np.array_equal(self.pdep[k], other.pdep[k]) for k in self.pdep
        )

    def to_json(self) -> dict:
        return {"lines": {k: v.tolist() for k, v in self.pdep.items()}}

    @classmethod
    def from_json(cls, data: dict) -> "Timetable":
        return cls({k: np.array(v, dtype=float) for k, v in data["lines"].items()})

    def save(self, path: str | Path) -> None:
        payload = {"format": "transync-timetable", "version": 1, **self.to_json()}
        Path(path).write_text(json.dumps(payload), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Timetable":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls.from_json(payload)


@dataclass(slots=True)
class StopEvaluation:
    """Full trace of one connecting trip's dwell at one node."""

    node: str
    line: str
    trip: int
    zone: Zone
    aarr: float
    pdep: float
    adep: float
    delta: float = 0.0  # published departure minus arrival when arriving early
    serv1: float = 0.0
    serv2: float = 0.0
    serv3: float = 0.0
    serv4: float = 0.0
    serv5: float = 0.0
    servl1: float = 0.0
    servl2: float = 0.0
    serv2q: float = 0.0
    serv3q: float = 0.0
    serv2g: float = 0.0
    serv3g: float = 0.0
    serv_elf: float = 0.0  # boarding overrun past the published departure (low freq)
    tb: float = 0.0
    tb1: float = 0.0
    tb2: float = 0.0
    tb3: float = 0.0
    ptb: float = 0.0
    ptb1: float = 0.0
    ptb2: float = 0.0
    ptb3: float = 0.0
    tbo: float = 0.0
    tbo1: float = 0.0
    tbo2: float = 0.0
    tbo3: float = 0.0
    es1: float = 0.0
    es2: float = 0.0
    es3: float = 0.0
    dwb: float = 0.0
    dwti: float = 0.0  # service-only dwell used by the idle-time account
    dwte: float = 0.0  # departure-determining excess dwell (low freq)
    gbd1: float = 0.0
    gbd2: float = 0.0
    gbd3: float = 0.0
    gbd4: float = 0.0
    gbd5: float = 0.0
    gbd2q: float = 0.0
    gbd3q: float = 0.0
    gbd2g: float = 0.0
    gbd3g: float = 0.0
    locals1: float = 0.0  # local demand folded into gbd1
    tbd: float = 0.0
    ivdd_out: float = 0.0
    rdiff: float = 0.0  # held-without-service duration
    ewait: float = 0.0  # lateness of the bus itself
    tewait: float = 0.0  # lateness when at/above the delay threshold
    adiff: float = 0.0  # arrived early but departed late: the overshoot
    total_bd_ew: float = 0.0  # local demand penalized by a late arrival
    gbd_ew: float = 0.0  # early transfer demand penalized by a late arrival
    pdd: float = 0.0  # onboard demand penalized by a late departure
    vtd: float = 0.0  # onboard demand penalized for held-without-service time

    def to_json(self) -> dict:
        rec = {}
        for f in fields(self):
            value = getattr(self, f.name)
            rec[f.name] = value.value if isinstance(value, Zone) else value
        return rec


@dataclass(slots=True)
class TransferAssignment:
    """The unique connecting trip serving one feeder group (or the
    next-horizon sentinel when no in-horizon trip works)."""

    node: str
    feeder_line: str
    feeder_trip: int
    connecting_line: str
    connecting_trip: int | None  # None = next horizon
    transfer_type: TransferType
    ntwait: float
    demand: float

    def to_json(self) -> dict:
        return {
            "node": self.node,
            "feeder_line": self.feeder_line,
            "feeder_trip": self.feeder_trip,
            "connecting_line": self.connecting_line,
            "connecting_trip": self.connecting_trip,
            "transfer_type": self.transfer_type.value,
            "ntwait": self.ntwait,
            "demand": self.demand,
        }


@dataclass
class CostBreakdown:
    """Weighted objective components plus unweighted diagnostics."""

    transfer_wait_cost: float
    in_vehicle_cost: float
    delay_out_cost: float
    delay_in_cost: float
    total: float
    raw: dict[str, float] = field(default_factory=dict)


@dataclass
class EvaluationResult:
    stops: list[StopEvaluation]
    assignments: list[TransferAssignment]
    cost: CostBreakdown

    def dump_trace(self, path: str | Path) -> None:
        """JSON-lines trace: one record per (trip, node) stop evaluation."""
        with open(path, "w", encoding="utf-8") as fh:
            for stop in self.stops:
                fh.write(json.dumps(stop.to_json()) + "\n")


@dataclass(frozen=True)
class EvalConfig:
    """Evaluator knobs: exact buffer search is attempted per stop cascade up
    to ``exact_leaf_budget`` completed enumeration paths, after which the
    one-node look-ahead heuristic takes over."""

    exact_leaf_budget: int = 20000
    tol: float = _EPS


DEFAULT_EVAL_CONFIG = EvalConfig()


# --------------------------------------------------------------------------
# Compiled network
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class _CompiledLine:
    spec: LineSpec
    trips: int
    positions: dict[str, int]
    bt: float  # minutes / passenger
    at: float  # minutes / passenger
    is_high: bool
    b1: float  # outer local-wave offset before published departure, minutes
    b2: float  # inner local-wave offset, minutes


@dataclass(frozen=True)
class _Stage:
    line_id: str
    pos: int
    node: str
    feeders: tuple[tuple[str, str, str], ...]  # pair keys feeding this stop


@dataclass(frozen=True)
class _Compiled:
    lines: dict[str, _CompiledLine]
    stages: tuple[_Stage, ...]


@functools.lru_cache(maxsize=32)
def _compile(network: NetworkSpec) -> _Compiled:
    lines: dict[str, _CompiledLine] = {}
    for ln in network.lines:
        lines[ln.line_id] = _CompiledLine(
            spec=ln,
            trips=trip_count(ln, network.horizon_T),
            positions={node: i for i, node in enumerate(ln.node_sequence)},
            bt=ln.bt_minutes,
            at=ln.at_minutes,
            is_high=ln.frequency_class is FrequencyClass.HIGH,
            b1=network.zone_boundary_frac_1 * ln.headway_h,
            b2=network.zone_boundary_frac_2 * ln.headway_h,
        )

    # Stage (line, pos) computes the departure of `line` at sequence position
    # `pos`.  It needs the same line's previous stage and, for each feeder
    # pair at this node, the feeder's stage before this node (its arrival).
    all_stages: dict[tuple[str, int], _Stage] = {}
    deps: dict[tuple[str, int], set[tuple[str, int]]] = {}
    for ln in network.lines:
        for pos in range(1, len(ln.node_sequence)):
            node = ln.node_sequence[pos]
            feeders = tuple(
                (tp.node, tp.feeder_line, tp.connecting_line)
                for tp in network.transfer_pairs
                if tp.node == node and tp.connecting_line == ln.line_id
            )
            key = (ln.line_id, pos)
            all_stages[key] = _Stage(ln.line_id, pos, node, feeders)
            need: set[tuple[str, int]] = set()
            if pos > 1:
                need.add((ln.line_id, pos - 1))
            for _, feeder_id, _ in feeders:
                fpos = lines[feeder_id].positions[node]
                if fpos > 1:
                    need.add((feeder_id, fpos - 1))
            deps[key] = need

    ordered: list[_Stage] = []
    done: set[tuple[str, int]] = set()
    pending = dict(deps)
    while pending:
        ready = sorted(k for k, need in pending.items() if need <= done)
        if not ready:
            raise ValidationError(
                "transfer pairs induce a cyclic cross-node dependency; "
                "such networks are not supported"
            )
        for key in ready:
            ordered.append(all_stages[key])
            done.add(key)
            del pending[key]
    return _Compiled(lines=lines, stages=tuple(ordered))


# --------------------------------------------------------------------------
# Feeder groups and buffer candidates
# --------------------------------------------------------------------------


@dataclass(slots=True)
class _Group:
    index: int
    feeder_line: str
    feeder_trip: int
    farr: float  # arrival time at the connecting stop (feeder arrival + walk)
    demand: float


def buffer_candidates(
    event_offsets, lo: float, hi: float, tol: float = _EPS
) -> list[float]:
    """Candidate buffer values: zero plus each event offset clipped into
    [lo, hi].  Offsets below the window are dropped (a clipped negative
    buffer that catches nobody is indistinguishable from zero)."""
    cands = [0.0]
    for off in event_offsets:
        if off < lo - tol:
            continue
        c = off if off <= hi else hi
        if all(abs(c - existing) > tol for existing in cands):
            cands.append(c)
    cands.sort()
    return cands


def choose_buffer(event_offsets, window: tuple[float, float], cost_fn) -> float:
    """Pick the candidate buffer with the lowest oracle cost, ties toward the
    smaller buffer."""
    lo, hi = window
    best_tb = 0.0
    best_cost = math.inf
    for tb in buffer_candidates(event_offsets, lo, hi):
        cost = cost_fn(tb)
        if cost < best_cost - _EPS:
            best_cost = cost
            best_tb = tb
    return best_tb


class _Budget:
    __slots__ = ("left",)

    def __init__(self, n: int) -> None:
        self.left = n

    def spend(self) -> bool:
        self.left -= 1
        return self.left >= 0


class _BudgetExceeded(Exception):
    pass


# --------------------------------------------------------------------------
# One connecting trip, given its buffer decisions
# --------------------------------------------------------------------------


@dataclass(slots=True)
class _Decision:
    """A buffer decision point inside a trip evaluation."""

    lo: float
    hi: float
    base: float  # catch time at zero buffer
    wave: int  # 0 = first buffer, 1/2 = later low-frequency waves


@dataclass(slots=True)
class _TripOutcome:
    stop: StopEvaluation
    assigned: list[tuple[_Group, TransferType, float]]  # group, type, ntwait
    remaining: tuple[int, ...]
    adep: float
    cost: float  # weighted cost contribution of this trip
    tbs: tuple[float, ...]


class _StopCascade:
    """Evaluates all trips of one connecting line at one node, choosing
    transfer buffers along the way."""

    def __init__(
        self,
        network: NetworkSpec,
        comp: _Compiled,
        stage: _Stage,
        mode: Mode,
        cfg: EvalConfig,
        groups: list[_Group],
        aarr: list[float],
        pdep: list[float],
        prev_onboard: list[float],
        sp: list[float],
        ad: list[float],
        lam: float,
        d_totals: list[float] | None,
    ) -> None:
        cl = comp.lines[stage.line_id]
        self.network = network
        self.stage = stage
        self.mode = mode
        self.cfg = cfg
        self.cl = cl
        self.groups = groups
        self.aarr = aarr
        self.pdep = pdep
        self.prev_onboard = prev_onboard
        self.sp = sp
        self.ad = ad
        self.lam = lam
        self.d_totals = d_totals
        self.trips = cl.trips
        w = network.cost_weights
        self.c_tw = w.c_tw
        self.c_vt = w.c_vt
        self.c_dt = w.c_dt
        self.c_dt_iv = w.c_dt_in_vehicle
        self.aths = network.delay_threshold_Aths
        self.rths = network.unnecessary_threshold_Rths
        self.longwait = network.effective_longwait(cl.spec)

    # -- single trip -------------------------------------------------------

    def eval_trip(
        self, q: int, unassigned: tuple[int, ...], prev_adep: float, tbs: tuple[float, ...]
    ):
        """Evaluate connecting trip ``q``.  Returns a _Decision when another
        buffer value is needed, else a completed _TripOutcome."""
        tol = self.cfg.tol
        groups = self.groups
        bt = self.cl.bt
        at_total = self.ad[q] * self.cl.at
        aarr = self.aarr[q]
        pdep = self.pdep[q]
        sm = self.mode is Mode.SM
        high = self.cl.is_high
        d_total = 0.0 if high else self.d_totals[q]  # type: ignore[index]

        if high:
            zone = Zone.H1 if aarr < pdep else Zone.H2
        else:
            w = pdep - aarr
            if w > self.cl.b1:
                zone = Zone.L1
            elif w > self.cl.b2:
                zone = Zone.L2
            elif w > 0.0:
                zone = Zone.L3
            else:
                zone = Zone.L4

        # local demand present when the bus arrives
        if high:
            locals1 = max(0.0, self.lam * (aarr - prev_adep))
        elif not sm:
            locals1 = d_total
        elif zone is Zone.L1:
            locals1 = 0.0
        elif zone is Zone.L2:
            locals1 = self.network.first_group_share_nu * d_total
        else:
            locals1 = d_total

        pool = [groups[i] for i in unassigned]
        type1 = [g for g in pool if g.farr <= aarr + tol]
        gbd1 = locals1 + sum(g.demand for g in type1)
        serv1 = bt * gbd1
        type2 = [g for g in pool if aarr + tol < g.farr <= aarr + serv1 + tol]
        gbd2 = sum(g.demand for g in type2)
        serv2 = bt * gbd2
        taken = {g.index for g in type1} | {g.index for g in type2}
        assigned: list[tuple[_Group, TransferType, float]] = [
            (g, TransferType.TYPE1, max(0.0, aarr - g.farr)) for g in type1
        ] + [(g, TransferType.TYPE2, 0.0) for g in type2]

        stop = StopEvaluation(
            node=self.stage.node,
            line=self.stage.line_id,
            trip=q,
            zone=zone,
            aarr=aarr,
            pdep=pdep,
            adep=aarr,
            serv1=serv1,
            serv2=serv2,
            gbd1=gbd1,
            gbd2=gbd2,
            locals1=locals1,
        )

        def next_tb(k: int, lo: float, hi: float, base: float, wave: int):
            if k < len(tbs):
                return min(hi, max(lo, tbs[k]))
            return _Decision(lo=lo, hi=hi, base=base, wave=wave)

        def catch(base: float, tb: float) -> list[_Group]:
            t = base + tb
            return [
                g
                for g in pool
                if g.index not in taken and abs(g.farr - t) <= tol
            ]

        if high:
            # single-buffer structure; the extra local waves exist only in SM
            delta = pdep - aarr if zone is Zone.H1 else 0.0
            stop.delta = delta
            gbd3 = self.lam * delta if sm else 0.0
            serv3 = bt * gbd3
            dwb = max(delta, at_total)
            tbo = max(0.0, dwb - (serv1 + serv2 + serv3))
            out = next_tb(0, -serv2, tbo, aarr + serv1 + serv2, 0)
            if isinstance(out, _Decision):
                return out
            tb = out
            caught = catch(aarr + serv1 + serv2, tb)
            gbd4 = sum(g.demand for g in caught)
            serv4 = bt * gbd4
            taken.update(g.index for g in caught)
            assigned += [(g, TransferType.TYPE3, 0.0) for g in caught]
            ptb = max(0.0, tb)
            # the buffer extends the stop (departure dwell) but is not
            # passenger service, so it stays out of the idle-time base
            dwell_dep = max(serv1 + serv2 + serv3 + ptb + serv4, at_total)
            pi = aarr + dwell_dep <= pdep + tol
            if pi:
                adep = pdep
                gbd5 = serv5 = 0.0
            else:
                gbd5 = self.lam * (aarr + dwell_dep - pdep) if sm else 0.0
                serv5 = bt * gbd5
                adep = aarr + dwell_dep + serv5
            dwti = max(serv1 + serv2 + serv3 + serv4 + serv5, at_total)
            rdiff = max(0.0, adep - aarr - dwti)
            stop.serv3, stop.gbd3 = serv3, gbd3
            stop.serv4, stop.gbd4 = serv4, gbd4
            stop.serv5, stop.gbd5 = serv5, gbd5
            stop.dwb, stop.tbo, stop.tb, stop.ptb = dwb, tbo, tb, ptb
            stop.dwti = dwti
            stop.adep = adep
            stop.rdiff = rdiff
            tbs_used: tuple[float, ...] = (tb,)
        else:
            # low-frequency cascade; SDB boards all locals on arrival and
            # suppresses the local service waves
            out = self._low_freq_cascade(
                stop, q, zone, pool, taken, assigned, at_total, d_total, next_tb, catch
            )
            if isinstance(out, _Decision):
                return out
            tbs_used = out

        self._wrap_up(stop, q, zone, assigned, prev_adep, locals1, d_total)
        remaining = tuple(i for i in unassigned if i not in taken)
        cost = self._trip_cost(stop, assigned)
        return _TripOutcome(
            stop=stop,
            assigned=assigned,
            remaining=remaining,
            adep=stop.adep,
            cost=cost,
            tbs=tbs_used,
        )

    def _low_freq_cascade(
        self, stop, q, zone, pool, taken, assigned, at_total, d_total, next_tb, catch
    ):
        """Local-passenger wave cascade for a low-frequency connecting trip.
        The time marker advances wave by wave; each wave may hold its own
        buffer, and overruns spill into the next wave.  In SDB mode the local
        waves carry zero service (their demand boarded on arrival)."""
        tol = self.cfg.tol
        bt = self.cl.bt
        sm = self.mode is Mode.SM
        aarr = self.aarr[q]
        pdep = self.pdep[q]
        b1, b2 = self.cl.b1, self.cl.b2
        nu = self.network.first_group_share_nu
        servl1_full = bt * nu * d_total if sm else 0.0
        servl2_full = bt * (1.0 - nu) * d_total if sm else 0.0
        serv1, serv2 = stop.serv1, stop.serv2
        tbs_used: list[float] = []
        k = 0

        if zone is Zone.L4:
            lo, hi = -serv2, 0.0
            out = next_tb(k, lo, hi, aarr + serv1 + serv2, 0)
            if isinstance(out, _Decision):
                return out
            tb1 = out
            tbs_used.append(tb1)
            caught = catch(aarr + serv1 + serv2, tb1)
            gbd3 = sum(g.demand for g in caught)
            serv3 = bt * gbd3
            taken.update(g.index for g in caught)
            assigned += [(g, TransferType.TYPE3, 0.0) for g in caught]
            stop.tb1, stop.ptb1, stop.tbo1 = tb1, 0.0, 0.0
            stop.gbd3, stop.serv3 = gbd3, serv3
            serv_elf = serv1 + serv2 + serv3
            boarding = serv_elf  # the bus serves continuously until it leaves
            dwte = max(serv_elf, at_total)
            stop.serv_elf, stop.dwte = serv_elf, dwte
            stop.adep = aarr + dwte
            stop.dwti = max(boarding, at_total)
            stop.rdiff = max(0.0, stop.adep - aarr - stop.dwti)
            return tuple(tbs_used)

        # first buffer window depends on the arrival zone: it ends at the next
        # local wave (zone L1/L2) or at the published departure (zone L3)
        if zone is Zone.L1:
            dwb1 = (pdep - b1) - aarr
        elif zone is Zone.L2:
            dwb1 = (pdep - b2) - aarr
        else:
            dwb1 = pdep - aarr
        tbo1 = max(0.0, dwb1 - (serv1 + serv2))
        out = next_tb(k, -serv2, tbo1, aarr + serv1 + serv2, 0)
        if isinstance(out, _Decision):
            return out
        tb1 = out
        tbs_used.append(tb1)
        k += 1
        caught = catch(aarr + serv1 + serv2, tb1)
        gbd3 = sum(g.demand for g in caught)
        serv3 = bt * gbd3
        taken.update(g.index for g in caught)
        assigned += [(g, TransferType.TYPE3, 0.0) for g in caught]
        ptb1 = max(0.0, tb1)
        stop.tb1, stop.ptb1, stop.tbo1 = tb1, ptb1, tbo1
        stop.gbd3, stop.serv3 = gbd3, serv3
        used1 = serv1 + serv2 + ptb1 + serv3

        if zone is Zone.L3:
            es3 = max(0.0, used1 - dwb1)
            stop.es3 = es3
            boarding = serv1 + serv2 + serv3
            self._finish_low_freq_early(stop, q, es3, boarding, at_total)
            return tuple(tbs_used)

        if zone is Zone.L1:
            es1 = max(0.0, used1 - dwb1)
            stop.es1 = es1
            servl1 = servl1_full
            stop.servl1 = servl1
            t2 = pdep - b1
            semi2 = [
                g
                for g in pool
                if g.index not in taken and t2 - tol <= g.farr <= t2 + servl1 + es1 + tol
            ]
            gbd2q = sum(g.demand for g in semi2)
            serv2q = bt * gbd2q
            taken.update(g.index for g in semi2)
            assigned += [(g, TransferType.SEMI_TYPE2, 0.0) for g in semi2]
            stop.gbd2q, stop.serv2q = gbd2q, serv2q
            dwb2 = b1 - b2
            tbo2 = max(0.0, dwb2 - (es1 + servl1 + serv2q))
            base2 = t2 + servl1 + serv2q + es1
            out = next_tb(k, -serv2q, tbo2, base2, 1)
            if isinstance(out, _Decision):
                return out
            tb2 = out
            tbs_used.append(tb2)
            k += 1
            caught2 = catch(base2, tb2)
            gbd3q = sum(g.demand for g in caught2)
            serv3q = bt * gbd3q
            taken.update(g.index for g in caught2)
            assigned += [(g, TransferType.SEMI_TYPE3, 0.0) for g in caught2]
            ptb2 = max(0.0, tb2)
            stop.tb2, stop.ptb2, stop.tbo2 = tb2, ptb2, tbo2
            stop.gbd3q, stop.serv3q = gbd3q, serv3q
            es2 = max(0.0, (servl1 + serv2q + es1 + ptb2 + serv3q) - dwb2)
        else:  # zone L2: the first window already ran to the inner wave
            es2 = max(0.0, used1 - dwb1)
        stop.es2 = es2

        # inner local wave, common to zone L1 and L2 arrivals
        servl2 = servl2_full
        stop.servl2 = servl2
        t3 = pdep - b2
        semi2g = [
            g
            for g in pool
            if g.index not in taken and t3 - tol <= g.farr <= t3 + servl2 + es2 + tol
        ]
        gbd2g = sum(g.demand for g in semi2g)
        serv2g = bt * gbd2g
        taken.update(g.index for g in semi2g)
        assigned += [(g, TransferType.SEMI_TYPE2, 0.0) for g in semi2g]
        stop.gbd2g, stop.serv2g = gbd2g, serv2g
        dwb3 = b2
        tbo3 = max(0.0, dwb3 - (es2 + servl2 + serv2g))
        base3 = t3 + servl2 + serv2g + es2
        out = next_tb(k, -serv2g, tbo3, base3, 2)
        if isinstance(out, _Decision):
            return out
        tb3 = out
        tbs_used.append(tb3)
        caught3 = catch(base3, tb3)
        gbd3g = sum(g.demand for g in caught3)
        serv3g = bt * gbd3g
        taken.update(g.index for g in caught3)
        assigned += [(g, TransferType.SEMI_TYPE3, 0.0) for g in caught3]
        ptb3 = max(0.0, tb3)
        stop.tb3, stop.ptb3, stop.tbo3 = tb3, ptb3, tbo3
        stop.gbd3g, stop.serv3g = gbd3g, serv3g
        es3 = max(0.0, (servl2 + serv2g + es2 + ptb3 + serv3g) - dwb3)
        stop.es3 = es3

        if zone is Zone.L1:
            boarding = (
                stop.serv1 + stop.serv2 + stop.serv3 + stop.servl1 + stop.servl2
                + stop.serv2q + stop.serv3q + stop.serv2g + stop.serv3g
            )
        else:
            boarding = (
                stop.serv1 + stop.serv2 + stop.serv3 + stop.servl2
                + stop.serv2g + stop.serv3g
            )
        self._finish_low_freq_early(stop, q, es3, boarding, at_total)
        return tuple(tbs_used)

    def _finish_low_freq_early(self, stop, q, es3, boarding, at_total) -> None:
        """Departure and idle time for a low-frequency bus that arrived before
        its published departure: it leaves at the published time plus any
        boarding overrun, or later if alighting cannot finish in time."""
        aarr = self.aarr[q]
        pdep = self.pdep[q]
        serv_elf = es3
        alight_budget = pdep - aarr
        alight_excess = max(0.0, at_total - alight_budget)
        dwte = max(serv_elf, alight_excess)
        stop.serv_elf, stop.dwte = serv_elf, dwte
        stop.adep = pdep + dwte
        stop.dwti = max(boarding, at_total)
        stop.rdiff = max(0.0, stop.adep - aarr - stop.dwti)

    def _wrap_up(self, stop, q, zone, assigned, prev_adep, locals1, d_total) -> None:
        """Shared tail: onboard bookkeeping, lateness and idle-time gating."""
        late = zone in (Zone.H2, Zone.L4)
        aarr, pdep, adep = stop.aarr, stop.pdep, stop.adep
        ewait = aarr - pdep if late else 0.0
        ewait_hit = late and ewait >= self.aths
        tewait = ewait if ewait_hit else 0.0
        if ewait_hit:
            if self.cl.is_high:
                total_bd_ew = max(0.0, self.lam * (pdep - prev_adep))
            else:
                total_bd_ew = d_total
        else:
            total_bd_ew = 0.0
        # early transfer groups penalized by the late arrival: those whose
        # wait exceeds the bus's own lateness by at least the threshold
        penalize = any(
            ntw > ewait + self.aths
            for _, ttype, ntw in assigned
            if ttype is TransferType.TYPE1
        )
        gbd_ew = max(0.0, stop.gbd1 - locals1) if (late and penalize) else 0.0

        tbd = (
            stop.gbd1 + stop.gbd2 + stop.gbd3 + stop.gbd4 + stop.gbd5
            + stop.gbd2q + stop.gbd3q + stop.gbd2g + stop.gbd3g
        )
        ivdd_out = self.prev_onboard[q] - self.sp[q] - self.ad[q] + tbd

        early_late = (not late) and adep > pdep + self.cfg.tol
        adiff = adep - pdep if early_late else 0.0
        pdd = max(0.0, ivdd_out - stop.gbd5) if adiff >= self.aths else 0.0
        vtd = ivdd_out if stop.rdiff >= self.rths else 0.0

        stop.ewait, stop.tewait = ewait, tewait
        stop.total_bd_ew, stop.gbd_ew = total_bd_ew, gbd_ew
        stop.tbd, stop.ivdd_out = tbd, ivdd_out
        stop.adiff, stop.pdd, stop.vtd = adiff, pdd, vtd

    def _trip_cost(self, stop: StopEvaluation, assigned) -> float:
        cost = (self.c_vt / 2.0) * stop.vtd * stop.rdiff
        cost += self.c_dt * (stop.total_bd_ew + stop.gbd_ew) * stop.tewait
        cost += self.c_dt_iv * stop.pdd * stop.adiff
        for g, _ttype, ntw in assigned:
            cost += self.c_tw * g.demand * ntw
        return cost

    # -- whole cascade -----------------------------------------------------

    def run(self):
        """Evaluate all trips, choosing buffers.  Small cascades get an exact
        enumeration of the buffer decision tree; larger ones (or a blown
        enumeration budget) use the greedy one-node look-ahead."""
        unassigned = tuple(range(len(self.groups)))
        small = len(self.groups) <= 8 and self.trips <= 6
        if small:
            try:
                budget = _Budget(self.cfg.exact_leaf_budget)
                _cost, outcomes = self._best_from(0, unassigned, 0.0, budget)
                return self._collect(outcomes)
            except _BudgetExceeded:
                pass
        outcomes = self._greedy_run(unassigned)
        return self._collect(outcomes)

    def _missed_cost(self, unassigned: tuple[int, ...]) -> float:
        return sum(
            self.c_tw * self.groups[i].demand * self.longwait for i in unassigned
        )

    def _best_from(self, q, unassigned, prev_adep, budget):
        if q == self.trips:
            if not budget.spend():
                raise _BudgetExceeded
            return self._missed_cost(unassigned), []
        best: tuple[float, list[_TripOutcome]] | None = None

        def descend(tbs: tuple[float, ...]):
            nonlocal best
            out = self.eval_trip(q, unassigned, prev_adep, tbs)
            if isinstance(out, _Decision):
                offsets = [self.groups[i].farr - out.base for i in unassigned]
                for tb in buffer_candidates(offsets, out.lo, out.hi, self.cfg.tol):
                    descend(tbs + (tb,))
                return
            tail_cost, tail = self._best_from(q + 1, out.remaining, out.adep, budget)
            total = out.cost + tail_cost
            if best is None or total < best[0] - self.cfg.tol:
                best = (total, [out] + tail)

        descend(())
        assert best is not None
        return best

    def _greedy_run(self, unassigned: tuple[int, ...]) -> list[_TripOutcome]:
        outcomes: list[_TripOutcome] = []
        prev_adep = 0.0
        for q in range(self.trips):
            tbs: tuple[float, ...] = ()
            while True:
                out = self.eval_trip(q, unassigned, prev_adep, tbs)
                if not isinstance(out, _Decision):
                    break
                tb = self._greedy_pick(q, unassigned, prev_adep, tbs, out)
                tbs = tbs + (tb,)
            outcomes.append(out)
            unassigned = out.remaining
            prev_adep = out.adep
        return outcomes

    def _greedy_pick(self, q, unassigned, prev_adep, tbs, decision: _Decision) -> float:
        """One-node look-ahead: complete the current trip under each candidate
        (later buffers of the same trip at zero) and add the estimated wait
        cost of every group the trip leaves unserved."""
        offsets = [self.groups[i].farr - decision.base for i in unassigned]
        cands = buffer_candidates(offsets, decision.lo, decision.hi, self.cfg.tol)
        if len(cands) == 1:
            return cands[0]
        best_tb, best_cost = cands[0], math.inf
        for tb in cands:
            probe = tbs + (tb,)
            out = self.eval_trip(q, unassigned, prev_adep, probe)
            while isinstance(out, _Decision):
                probe = probe + (0.0,)
                out = self.eval_trip(q, unassigned, prev_adep, probe)
            cost = out.cost + self._future_wait_estimate(out.remaining, q)
            if cost < best_cost - self.cfg.tol:
                best_cost = cost
                best_tb = tb
        return best_tb

    def _future_wait_estimate(self, unassigned: tuple[int, ...], q: int) -> float:
        total = 0.0
        for i in unassigned:
            g = self.groups[i]
            wait = self.longwait
            for q2 in range(q + 1, self.trips):
                if self.aarr[q2] >= g.farr - self.cfg.tol:
                    wait = max(0.0, self.aarr[q2] - g.farr)
                    break
            total += self.c_tw * g.demand * wait
        return total

    def _collect(self, outcomes: list[_TripOutcome]):
        stops = [o.stop for o in outcomes]
        assignments: list[TransferAssignment] = []
        leftover = set(range(len(self.groups)))
        for o in outcomes:
            for g, ttype, ntw in o.assigned:
                leftover.discard(g.index)
                assignments.append(
                    TransferAssignment(
                        node=self.stage.node,
                        feeder_line=g.feeder_line,
                        feeder_trip=g.feeder_trip,
                        connecting_line=self.stage.line_id,
                        connecting_trip=o.stop.trip,
                        transfer_type=ttype,
                        ntwait=ntw,
                        demand=g.demand,
                    )
                )
        for i in sorted(leftover):
            g = self.groups[i]
            assignments.append(
                TransferAssignment(
                    node=self.stage.node,
                    feeder_line=g.feeder_line,
                    feeder_trip=g.feeder_trip,
                    connecting_line=self.stage.line_id,
                    connecting_trip=None,
                    transfer_type=TransferType.MISSED,
                    ntwait=self.longwait,
                    demand=g.demand,
                )
            )
        adeps = [o.adep for o in outcomes]
        ivdd = [o.stop.ivdd_out for o in outcomes]
        return stops, assignments, adeps, ivdd


# --------------------------------------------------------------------------
# Public operations
# --------------------------------------------------------------------------


def classify_zone(pdep: float, aarr: float, line: LineSpec, network: NetworkSpec) -> Zone:
    """Arrival zone of a connecting bus relative to its published departure."""
    if line.frequency_class is FrequencyClass.HIGH:
        return Zone.H1 if aarr < pdep else Zone.H2
    w = pdep - aarr
    b1 = network.zone_boundary_frac_1 * line.headway_h
    b2 = network.zone_boundary_frac_2 * line.headway_h
    if w > b1:
        return Zone.L1
    if w > b2:
        return Zone.L2
    if w > 0.0:
        return Zone.L3
    return Zone.L4


def propagate(
    timetable: Timetable,
    scenario: Scenario,
    network: NetworkSpec,
    line_id: str,
    departures: dict[int, np.ndarray] | None = None,
) -> np.ndarray:
    """Arrival times of every trip of ``line_id`` at each sequence position.

    The terminal departure equals the published departure; each later arrival
    is the previous node's departure plus that segment's running time.  When
    downstream departures are not supplied, positions past the first transfer
    node are left NaN (their departures depend on the dwell evaluation).
    """
    comp = _compile(network)
    cl = comp.lines[line_id]
    run = scenario.running_time.get(line_id)
    if run is None or run.shape != (cl.trips, cl.spec.n_segments):
        raise MissingDataError(f"scenario lacks running times for line {line_id}")
    n_nodes = len(cl.spec.node_sequence)
    arr = np.full((cl.trips, n_nodes), np.nan)
    dep_prev = timetable.pdep[line_id][:, 0]
    for pos in range(1, n_nodes):
        arr[:, pos] = dep_prev + run[:, pos - 1]
        if departures is not None and pos in departures:
            dep_prev = departures[pos]
        elif pos < n_nodes - 1:
            break
    return arr


def evaluate(
    timetable: Timetable,
    scenario: Scenario,
    network: NetworkSpec,
    mode: Mode = Mode.SM,
    config: EvalConfig = DEFAULT_EVAL_CONFIG,
) -> EvaluationResult:
    """Pure function: full second-stage execution of one scenario."""
    comp = _compile(network)
    timetable.validate(network)

    arr: dict[str, np.ndarray] = {}
    dep: dict[str, np.ndarray] = {}
    onboard: dict[str, np.ndarray] = {}
    for line_id, cl in comp.lines.items():
        n_nodes = len(cl.spec.node_sequence)
        run = scenario.running_time.get(line_id)
        if run is None or run.shape != (cl.trips, cl.spec.n_segments):
            raise MissingDataError(f"scenario lacks running times for line {line_id}")
        arr[line_id] = np.zeros((cl.trips, n_nodes))
        dep[line_id] = np.zeros((cl.trips, n_nodes))
        dep[line_id][:, 0] = timetable.pdep[line_id][:, 0]
        onboard[line_id] = np.zeros((cl.trips, n_nodes))
        onboard[line_id][:, 0] = scenario.initial_onboard[line_id]

    stops: list[StopEvaluation] = []
    assignments: list[TransferAssignment] = []

    for stage in comp.stages:
        cl = comp.lines[stage.line_id]
        pos = stage.pos
        run_col = scenario.running_time[stage.line_id][:, pos - 1]
        arr[stage.line_id][:, pos] = dep[stage.line_id][:, pos - 1] + run_col

        groups: list[_Group] = []
        for key in stage.feeders:
            node, feeder_id, _ = key
            walk = scenario.walking_time.get(key)
            demand = scenario.transfer_demand.get(key)
            if walk is None or demand is None:
                raise MissingDataError(f"scenario lacks transfer data for pair {key}")
            # the feeder's arrival needs only its previous departure, which the
            # stage ordering guarantees; its own dwell here may not have run yet
            fpos = comp.lines[feeder_id].positions[node]
            frun = scenario.running_time[feeder_id][:, fpos - 1]
            feeder_arrivals = dep[feeder_id][:, fpos - 1] + frun
            for p in range(comp.lines[feeder_id].trips):
                groups.append(
                    _Group(
                        index=len(groups),
                        feeder_line=feeder_id,
                        feeder_trip=p,
                        farr=float(feeder_arrivals[p]) + walk,
                        demand=float(demand[p]),
                    )
                )

        if cl.is_high:
            lam = scenario.local_rate_lambda.get((stage.node, stage.line_id), 0.0)
            d_totals = None
        else:
            lam = 0.0
            d_arr = scenario.local_total_D.get((stage.node, stage.line_id))
            if d_arr is None:
                d_arr = np.zeros(cl.trips)
            d_totals = d_arr.tolist()

        cascade = _StopCascade(
            network=network,
            comp=comp,
            stage=stage,
            mode=mode,
            cfg=config,
            groups=groups,
            aarr=arr[stage.line_id][:, pos].tolist(),
            pdep=timetable.pdep[stage.line_id][:, pos].tolist(),
            prev_onboard=onboard[stage.line_id][:, pos - 1].tolist(),
            sp=scenario.net_intermediate[stage.line_id][:, pos - 1].tolist(),
            ad=scenario.alighting[stage.line_id][:, pos].tolist(),
            lam=lam,
            d_totals=d_totals,
        )
        st, asg, adeps, ivdd = cascade.run()
        stops.extend(st)
        assignments.extend(asg)
        dep[stage.line_id][:, pos] = adeps
        onboard[stage.line_id][:, pos] = ivdd

    cost = account_costs(stops, assignments, network)
    return EvaluationResult(stops=stops, assignments=assignments, cost=cost)


def account_costs(
    stops: list[StopEvaluation],
    assignments: list[TransferAssignment],
    network: NetworkSpec,
) -> CostBreakdown:
    """Aggregate the four weighted objective components from the traces, plus
    gated and ungated raw diagnostics."""
    w = network.cost_weights
    transfer_wait = sum(a.demand * a.ntwait for a in assignments)
    in_vehicle = sum(s.vtd * s.rdiff for s in stops)
    delay_out = sum((s.total_bd_ew + s.gbd_ew) * s.tewait for s in stops)
    delay_in = sum(s.pdd * s.adiff for s in stops)

    aths = network.delay_threshold_Aths
    rths = network.unnecessary_threshold_Rths
    raw = {
        "transfer_wait_person_min": transfer_wait,
        "delay_min_gated": sum(s.tewait for s in stops)
        + sum(s.adiff for s in stops if s.adiff >= aths),
        "delay_min_all": sum(s.ewait + s.adiff for s in stops),
        "delay_person_min_gated": delay_out + delay_in,
        "unnecessary_min_gated": sum(s.rdiff for s in stops if s.rdiff >= rths),
        "unnecessary_min_all": sum(s.rdiff for s in stops),
        "unnecessary_person_min_gated": in_vehicle,
        "unnecessary_person_min_all": sum(s.ivdd_out * s.rdiff for s in stops),
    }
    c_tw_total = w.c_tw * transfer_wait
    c_vt_total = (w.c_vt / 2.0) * in_vehicle
    c_do_total = w.c_dt * delay_out
    c_di_total = w.c_dt_in_vehicle * delay_in
    return CostBreakdown(
        transfer_wait_cost=c_tw_total,
        in_vehicle_cost=c_vt_total,
        delay_out_cost=c_do_total,
        delay_in_cost=c_di_total,
        total=c_tw_total + c_vt_total + c_do_total + c_di_total,
        raw=raw,
    )
