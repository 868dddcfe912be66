"""Unit tests of the second-stage evaluator: propagation, zone
classification, transfer typing, the dwell cascades, and cost gating.

Hand examples use boarding_time_bt = 60 s/passenger so one passenger costs
one minute of service, keeping the arithmetic auditable.
"""

from __future__ import annotations

import dataclasses

import numpy as np
import pytest
from hypothesis import given, strategies as st

from transync.evaluator import (
    Mode,
    TransferType,
    Zone,
    choose_buffer,
    classify_zone,
    evaluate,
    propagate,
)
from transync.network import (
    FrequencyClass,
    LineSpec,
    NetworkSpec,
    TransferPairSpec,
)

from conftest import make_network, make_scenario, make_timetable


def micro_net(
    connecting_class=FrequencyClass.HIGH,
    bt_seconds: float = 60.0,
    horizon: float = 16.0,
    connecting_headway: float = 10.0,
    **globals_,
) -> NetworkSpec:
    """One feeder trip, one connecting trip, one node."""
    feeder = LineSpec(
        line_id="F",
        headway_h=15.0,
        node_sequence=("TF", "X"),
        frequency_class=FrequencyClass.HIGH,
        boarding_time_bt=bt_seconds,
        alighting_time_at=30.0,
    )
    connecting = LineSpec(
        line_id="C",
        headway_h=connecting_headway,
        node_sequence=("TC", "X"),
        frequency_class=connecting_class,
        boarding_time_bt=bt_seconds,
        alighting_time_at=30.0,
    )
    return NetworkSpec(
        horizon_T=horizon,
        lines=(feeder, connecting),
        transfer_nodes=("X",),
        transfer_pairs=(TransferPairSpec("X", "F", "C"),),
        **globals_,
    )


def stop_for(result, line, trip):
    return next(s for s in result.stops if s.line == line and s.trip == trip)


# ---------------------------------------------------------------------------
# propagate
# ---------------------------------------------------------------------------


def test_propagate_terminal_plus_running():
    net = micro_net()
    scen = make_scenario(net, running={"F": [[8.0]], "C": [[5.0]]})
    tt = make_timetable(net, {"F": [[10.0, 19.0]], "C": [[8.0, 14.0]]})
    arr = propagate(tt, scen, net, "F")
    assert arr[0, 1] == pytest.approx(18.0)


def test_propagate_chained_nodes():
    line = LineSpec(
        line_id="L",
        headway_h=30.0,
        node_sequence=("T", "A", "B"),
        frequency_class=FrequencyClass.HIGH,
    )
    net = NetworkSpec(
        horizon_T=40.0,
        lines=(line,),
        transfer_nodes=("A", "B"),
        transfer_pairs=(),
    )
    scen = make_scenario(net, running={"L": [[8.0, 5.0]]})
    tt = make_timetable(net, {"L": [[10.0, 20.0, 26.0]]})
    arr = propagate(tt, scen, net, "L", departures={1: np.array([20.0])})
    assert arr[0, 1] == pytest.approx(18.0)
    assert arr[0, 2] == pytest.approx(25.0)


def test_zero_variance_propagation_matches_hand_table():
    # deterministic arrival sequence for a two-node line under fixed runnings
    line = LineSpec(
        line_id="L",
        headway_h=10.0,
        node_sequence=("T", "A", "B"),
        frequency_class=FrequencyClass.HIGH,
    )
    net = NetworkSpec(
        horizon_T=30.0, lines=(line,), transfer_nodes=("A", "B"), transfer_pairs=()
    )
    scen = make_scenario(net, running={"L": [[4.0, 6.0], [4.0, 6.0], [4.0, 6.0]]})
    tt = make_timetable(
        net, {"L": [[5.0, 9.0, 15.0], [15.0, 19.0, 25.0], [25.0, 29.0, 35.0]]}
    )
    result = evaluate(tt, scen, net, Mode.SM)
    got = {(s.trip, s.node): s.aarr for s in result.stops}
    # hand propagated: dep(T)=5/15/25, +4 to A; dwell at A ends at published
    # (no demand), +6 to B
    assert got[(0, "A")] == pytest.approx(9.0)
    assert got[(1, "A")] == pytest.approx(19.0)
    assert got[(0, "B")] == pytest.approx(15.0)
    assert got[(2, "B")] == pytest.approx(35.0)


# ---------------------------------------------------------------------------
# classify_zone
# ---------------------------------------------------------------------------


def test_zone_examples_low_frequency():
    net = make_network(FrequencyClass.LOW, connecting_headway=20.0, horizon=30.0)
    line = net.line("C")
    # b1 = 6.0, b2 = 1.8
    assert classify_zone(20.0, 10.0, line, net) is Zone.L1
    assert classify_zone(20.0, 17.0, line, net) is Zone.L2
    assert classify_zone(20.0, 19.0, line, net) is Zone.L3
    assert classify_zone(20.0, 22.0, line, net) is Zone.L4


def test_zone_tie_high_frequency():
    net = make_network(FrequencyClass.HIGH)
    line = net.line("C")
    assert classify_zone(10.0, 10.0, line, net) is Zone.H2
    assert classify_zone(10.0, 9.999, line, net) is Zone.H1


@given(
    pdep=st.floats(min_value=0.0, max_value=100.0),
    aarr=st.floats(min_value=0.0, max_value=100.0),
    headway=st.floats(min_value=5.0, max_value=40.0),
)
def test_zone_partition_is_exhaustive_and_exclusive(pdep, aarr, headway):
    net = make_network(FrequencyClass.LOW, connecting_headway=20.0, horizon=50.0)
    line = dataclasses.replace(net.line("C"), headway_h=headway, headway_min=0.9 * headway, headway_max=1.1 * headway)
    zone = classify_zone(pdep, aarr, line, net)
    w = pdep - aarr
    b1 = net.zone_boundary_frac_1 * headway
    b2 = net.zone_boundary_frac_2 * headway
    memberships = [w > b1, b2 < w <= b1, 0.0 < w <= b2, w <= 0.0]
    assert memberships.count(True) == 1
    assert zone is (Zone.L1, Zone.L2, Zone.L3, Zone.L4)[memberships.index(True)]


# ---------------------------------------------------------------------------
# high-frequency stop semantics
# ---------------------------------------------------------------------------


def test_type1_transfer_waits_until_bus():
    net = micro_net()
    scen = make_scenario(
        net,
        running={"F": [[5.0]], "C": [[5.0]]},
        walking={("X", "F", "C"): 1.0},
        demand={("X", "F", "C"): [4.0]},
    )
    # feeder arrives X at 10, group at stop at 11; connecting arrives 13 and
    # has until 17.5 to board the 4 passengers (4 min at 60 s each), leaving
    # a residual hold of 0.5 min, below the idle-time threshold
    tt = make_timetable(net, {"F": [[5.0, 11.0]], "C": [[8.0, 17.5]]})
    result = evaluate(tt, scen, net, Mode.SM)
    (a,) = [x for x in result.assignments if x.feeder_line == "F"]
    assert a.transfer_type is TransferType.TYPE1
    assert a.ntwait == pytest.approx(2.0)
    assert a.connecting_trip == 0
    # only cost is the transfer wait: c_tw * td * wait = 2 * 4 * 2
    assert result.cost.total == pytest.approx(16.0)
    assert result.cost.transfer_wait_cost == pytest.approx(16.0)


def test_type2_transfer_during_first_boarding():
    net = micro_net()
    scen = make_scenario(
        net,
        running={"F": [[8.5]], "C": [[5.0]]},
        walking={("X", "F", "C"): 1.0},
        demand={("X", "F", "C"): [4.0]},
        rates={("X", "C"): 0.2},  # locals make serv1 = 0.2*13*1min = 2.6 min
    )
    # group at stop at 14.5, connecting arrives 13, serv1 window ends 15.6
    tt = make_timetable(net, {"F": [[5.0, 11.0]], "C": [[8.0, 15.9]]})
    result = evaluate(tt, scen, net, Mode.SM)
    (a,) = [x for x in result.assignments if x.feeder_line == "F"]
    assert a.transfer_type is TransferType.TYPE2
    assert a.ntwait == 0.0
    stop = stop_for(result, "C", 0)
    assert stop.gbd1 == pytest.approx(0.2 * 13.0)
    assert stop.serv1 == pytest.approx(2.6)
    assert stop.gbd2 == pytest.approx(4.0)


def test_type3_buffer_catch_beats_missed_connection():
    net = micro_net()
    scen = make_scenario(
        net,
        running={"F": [[7.5]], "C": [[5.0]]},
        walking={("X", "F", "C"): 1.0},
        demand={("X", "F", "C"): [5.0]},
    )
    # connecting arrives 13, zero serv1; group arrives 13.5 (30 s after
    # boarding completes); holding 0.5 min catches it, else it is missed
    tt = make_timetable(net, {"F": [[5.0, 11.0]], "C": [[8.0, 14.0]]})
    result = evaluate(tt, scen, net, Mode.SM)
    (a,) = [x for x in result.assignments if x.feeder_line == "F"]
    assert a.transfer_type is TransferType.TYPE3
    assert a.ntwait == 0.0
    stop = stop_for(result, "C", 0)
    assert stop.tb == pytest.approx(0.5)
    assert stop.gbd4 == pytest.approx(5.0)
    # departure still at the published time: 13 + 0.5 buffer + 5 min boarding
    # exceeds pdep=14 -> pushed departure
    assert stop.adep == pytest.approx(13.0 + 0.5 + 5.0)


def test_missed_group_gets_longwait_sentinel():
    net = micro_net()  # longwait defaults to connecting headway = 10
    scen = make_scenario(
        net,
        running={"F": [[8.5]], "C": [[5.0]]},
        walking={("X", "F", "C"): 1.0},
        demand={("X", "F", "C"): [5.0]},
    )
    # group arrives 20.0: beyond any buffer window of the single connecting trip
    scen.running_time["F"][0, 0] = 14.0
    tt = make_timetable(net, {"F": [[5.0, 11.0]], "C": [[8.0, 14.0]]})
    result = evaluate(tt, scen, net, Mode.SM)
    (a,) = [x for x in result.assignments if x.feeder_line == "F"]
    assert a.transfer_type is TransferType.MISSED
    assert a.connecting_trip is None
    assert a.ntwait == pytest.approx(10.0)


def test_late_bus_accrues_extra_locals_and_delay():
    net = micro_net()
    scen = make_scenario(
        net,
        running={"F": [[5.0]], "C": [[9.0]]},
        rates={("X", "C"): 0.5},
        initial_onboard={"C": [10.0]},
    )
    # connecting arrives 17, published departure 14 -> 3 min late (>= Aths)
    tt = make_timetable(net, {"F": [[5.0, 11.0]], "C": [[8.0, 14.0]]})
    result = evaluate(tt, scen, net, Mode.SM)
    stop = stop_for(result, "C", 0)
    assert stop.zone is Zone.H2
    assert stop.ewait == pytest.approx(3.0)
    assert stop.tewait == pytest.approx(3.0)
    # locals waiting since the published departure: lambda * (pdep - 0)
    assert stop.total_bd_ew == pytest.approx(0.5 * 14.0)
    # first local wave boards on arrival: lambda * (aarr - 0), then the bus
    # departs after their boarding, collecting gbd5 over the overshoot
    assert stop.gbd1 == pytest.approx(0.5 * 17.0)
    assert stop.gbd5 > 0.0
    assert result.cost.delay_out_cost == pytest.approx(3.27 * stop.total_bd_ew * 3.0)


# ---------------------------------------------------------------------------
# low-frequency stop semantics
# ---------------------------------------------------------------------------


def low_micro_net(**kw) -> NetworkSpec:
    return micro_net(
        connecting_class=FrequencyClass.LOW,
        connecting_headway=10.0,
        horizon=16.0,
        **kw,
    )


def test_low_freq_zone4_departs_after_service():
    # default per-passenger times: 1.96 s boarding
    net = low_micro_net(bt_seconds=1.96)
    scen = make_scenario(
        net,
        running={"F": [[5.0]], "C": [[9.0]]},
        totals={("X", "C"): [10.0]},
    )
    # connecting arrives 17 > pdep 14 -> zone L4; all locals board at arrival
    tt = make_timetable(net, {"F": [[5.0, 11.0]], "C": [[8.0, 14.0]]})
    result = evaluate(tt, scen, net, Mode.SM)
    stop = stop_for(result, "C", 0)
    assert stop.zone is Zone.L4
    assert stop.gbd1 == pytest.approx(10.0)
    assert stop.serv1 == pytest.approx(10 * 1.96 / 60.0)
    assert stop.serv_elf == pytest.approx(stop.serv1)
    assert stop.adep == pytest.approx(17.0 + 10 * 1.96 / 60.0)


def test_low_freq_zone1_empty_cascade_idles_until_departure():
    net = low_micro_net()
    scen = make_scenario(
        net,
        running={"F": [[5.0]], "C": [[2.0]]},
        initial_onboard={"C": [20.0]},
    )
    # connecting arrives 10, pdep 14, headway 10 -> b1 = 3, so zone L1;
    # zero demand everywhere
    tt = make_timetable(net, {"F": [[5.0, 11.0]], "C": [[8.0, 14.0]]})
    result = evaluate(tt, scen, net, Mode.SM)
    stop = stop_for(result, "C", 0)
    assert stop.zone is Zone.L1
    assert stop.adep == pytest.approx(14.0)
    assert stop.es1 == stop.es2 == stop.es3 == 0.0
    # whole wait counts as held-without-service time
    assert stop.rdiff == pytest.approx(4.0)
    # 20 onboard held 4 min >= threshold: in-vehicle cost = c_vt/2 * 20 * 4
    assert result.cost.in_vehicle_cost == pytest.approx(1.5 / 2 * 20 * 4)


def test_low_freq_local_waves_split_by_share():
    net = low_micro_net()  # bt = 60 s -> 1 min per passenger, nu = 0.8
    scen = make_scenario(
        net,
        running={"F": [[5.0]], "C": [[2.0]]},
        totals={("X", "C"): [5.0]},
    )
    tt = make_timetable(net, {"F": [[5.0, 11.0]], "C": [[8.0, 14.0]]})
    result = evaluate(tt, scen, net, Mode.SM)
    stop = stop_for(result, "C", 0)
    # zone L1 arrival: no locals at arrival, 80% at the outer wave, 20% inner
    assert stop.zone is Zone.L1
    assert stop.gbd1 == 0.0
    assert stop.servl1 == pytest.approx(0.8 * 5.0)
    assert stop.servl2 == pytest.approx(0.2 * 5.0)
    # outer wave starts 3 min before pdep (b1), runs 4 min of boarding: the
    # marker overruns the inner wave boundary and the published departure
    # es2: (servl1 + es1) - (b1 - b2) = 4 - 2.1 = 1.9
    assert stop.es2 == pytest.approx(1.9)
    # es3: (servl2 + es2) - b2 = (1 + 1.9) - 0.9 = 2.0
    assert stop.es3 == pytest.approx(2.0)
    assert stop.adep == pytest.approx(14.0 + 2.0)


def test_low_freq_zone2_boards_first_wave_on_arrival():
    net = low_micro_net()
    scen = make_scenario(
        net,
        running={"F": [[5.0]], "C": [[4.0]]},
        totals={("X", "C"): [5.0]},
    )
    # arrives 12, pdep 14 -> w = 2 in (b2=0.9, b1=3] -> zone L2
    tt = make_timetable(net, {"F": [[5.0, 11.0]], "C": [[8.0, 14.0]]})
    result = evaluate(tt, scen, net, Mode.SM)
    stop = stop_for(result, "C", 0)
    assert stop.zone is Zone.L2
    assert stop.gbd1 == pytest.approx(0.8 * 5.0)  # first wave already there
    assert stop.servl1 == 0.0
    assert stop.servl2 == pytest.approx(0.2 * 5.0)


# ---------------------------------------------------------------------------
# modes, purity, gating
# ---------------------------------------------------------------------------


def test_sm_equals_sdb_without_local_demand():
    for klass in (FrequencyClass.HIGH, FrequencyClass.LOW):
        net = micro_net(connecting_class=klass, horizon=31.0)
        scen = make_scenario(
            net,
            running={"F": [[5.0], [6.5]], "C": [[5.0], [4.0], [6.0]]},
            walking={("X", "F", "C"): 1.5},
            demand={("X", "F", "C"): [4.0, 7.0]},
            alighting={"C": [[0, 2.0], [0, 1.0], [0, 3.0]]},
            initial_onboard={"C": [10.0, 12.0, 9.0]},
        )
        tt = make_timetable(
            net,
            {"F": [[5.0, 11.0], [20.0, 26.0]], "C": [[8.0, 14.0], [18.0, 24.0], [28.0, 34.0]]},
        )
        sm = evaluate(tt, scen, net, Mode.SM)
        sdb = evaluate(tt, scen, net, Mode.SDB)
        assert sm.cost.total == pytest.approx(sdb.cost.total)


def test_evaluation_is_pure():
    net = micro_net(connecting_class=FrequencyClass.LOW)
    scen = make_scenario(
        net,
        running={"F": [[7.0]], "C": [[4.5]]},
        demand={("X", "F", "C"): [5.0]},
        totals={("X", "C"): [8.0]},
        initial_onboard={"C": [15.0]},
    )
    tt = make_timetable(net, {"F": [[5.0, 11.0]], "C": [[8.0, 14.0]]})
    r1 = evaluate(tt, scen, net, Mode.SM)
    r2 = evaluate(tt, scen, net, Mode.SM)
    assert r1.cost.total == r2.cost.total
    assert [s.to_json() for s in r1.stops] == [s.to_json() for s in r2.stops]
    assert [a.to_json() for a in r1.assignments] == [a.to_json() for a in r2.assignments]


def test_threshold_gates_suppress_small_durations():
    net = micro_net(unnecessary_threshold_Rths=1.0)
    scen = make_scenario(
        net,
        running={"F": [[5.0]], "C": [[5.0]]},
        initial_onboard={"C": [30.0]},
    )
    # connecting arrives 13, departs 13.5: rdiff = 0.5 < Rths -> no penalty
    tt = make_timetable(net, {"F": [[5.0, 11.0]], "C": [[8.0, 13.5]]})
    result = evaluate(tt, scen, net, Mode.SM)
    stop = stop_for(result, "C", 0)
    assert stop.rdiff == pytest.approx(0.5)
    assert stop.vtd == 0.0
    assert result.cost.in_vehicle_cost == 0.0
    # and a 3-minute hold is penalized
    tt2 = make_timetable(net, {"F": [[5.0, 11.0]], "C": [[8.0, 16.0]]})
    r2 = evaluate(tt2, scen, net, Mode.SM)
    s2 = stop_for(r2, "C", 0)
    assert s2.vtd == pytest.approx(30.0)
    assert r2.cost.in_vehicle_cost == pytest.approx(1.5 / 2 * 30 * 3.0)


def test_delay_threshold_gate():
    net = micro_net(delay_threshold_Aths=1.0)
    scen = make_scenario(
        net,
        running={"F": [[5.0]], "C": [[6.5]]},
        rates={("X", "C"): 1.0},
    )
    # arrives 14.5 vs pdep 14: ewait = 0.5 < Aths -> gated off
    tt = make_timetable(net, {"F": [[5.0, 11.0]], "C": [[8.0, 14.0]]})
    result = evaluate(tt, scen, net, Mode.SM)
    stop = stop_for(result, "C", 0)
    assert stop.ewait == pytest.approx(0.5)
    assert stop.tewait == 0.0
    assert stop.total_bd_ew == 0.0
    assert result.cost.delay_out_cost == 0.0


# ---------------------------------------------------------------------------
# choose_buffer
# ---------------------------------------------------------------------------


def test_choose_buffer_empty_candidates_returns_zero():
    assert choose_buffer([], (-1.0, 2.0), lambda tb: tb * tb) == 0.0


def test_choose_buffer_picks_cheaper_catch():
    # catching at 0.5 saves a large missed-connection cost
    def cost(tb: float) -> float:
        return 100.0 if abs(tb - 0.5) > 1e-9 else 3.0 * tb

    assert choose_buffer([0.5], (-1.0, 2.0), cost) == pytest.approx(0.5)


def test_choose_buffer_tie_breaks_small():
    assert choose_buffer([0.5, 1.5], (-1.0, 2.0), lambda tb: 7.0) == 0.0


def test_conservation_identity_on_records():
    net = micro_net()
    scen = make_scenario(
        net,
        running={"F": [[5.0]], "C": [[5.0]]},
        demand={("X", "F", "C"): [4.0]},
        alighting={"C": [[0.0, 3.0]]},
        net_intermediate={"C": [[2.0]]},
        initial_onboard={"C": [20.0]},
    )
    tt = make_timetable(net, {"F": [[5.0, 11.0]], "C": [[8.0, 14.0]]})
    result = evaluate(tt, scen, net, Mode.SM)
    stop = stop_for(result, "C", 0)
    assert stop.ivdd_out == pytest.approx(20.0 - 2.0 - 3.0 + stop.tbd)
    assert stop.tbd == pytest.approx(
        stop.gbd1 + stop.gbd2 + stop.gbd3 + stop.gbd4 + stop.gbd5
        + stop.gbd2q + stop.gbd3q + stop.gbd2g + stop.gbd3g
    )


def test_missing_running_time_raises():
    from transync.errors import MissingDataError

    net = micro_net()
    scen = make_scenario(net, running={"F": [[5.0]], "C": [[5.0]]})
    del scen.running_time["C"]
    tt = make_timetable(net, {"F": [[5.0, 11.0]], "C": [[8.0, 14.0]]})
    with pytest.raises(MissingDataError, match="C"):
        evaluate(tt, scen, net, Mode.SM)
    with pytest.raises(MissingDataError):
        propagate(tt, scen, net, "C")


def test_cyclic_cross_node_dependency_rejected():
    from transync.errors import ValidationError
    from transync.network import NetworkSpec, TransferPairSpec

    # A runs T->n1->n2, B runs T->n2->n1; each feeds the other at the node it
    # reaches second, so each departure needs the other's upstream dwell
    a = LineSpec(line_id="A", headway_h=10.0, node_sequence=("TA", "N1", "N2"),
                 frequency_class=FrequencyClass.HIGH)
    b = LineSpec(line_id="B", headway_h=10.0, node_sequence=("TB", "N2", "N1"),
                 frequency_class=FrequencyClass.HIGH)
    net = NetworkSpec(
        horizon_T=30.0,
        lines=(a, b),
        transfer_nodes=("N1", "N2"),
        transfer_pairs=(
            TransferPairSpec("N2", "A", "B"),
            TransferPairSpec("N1", "B", "A"),
        ),
    )
    scen = make_scenario(net, running={"A": [[4.0, 4.0]] * 3, "B": [[4.0, 4.0]] * 3})
    tt = make_timetable(net, {
        "A": [[5.0, 10.0, 15.0], [15.0, 20.0, 25.0], [25.0, 30.0, 35.0]],
        "B": [[5.0, 10.0, 15.0], [15.0, 20.0, 25.0], [25.0, 30.0, 35.0]],
    })
    with pytest.raises(ValidationError, match="cyclic"):
        evaluate(tt, scen, net, Mode.SM)


def test_cost_components_match_trace_ledger(tmp_path):
    # independent ledger: recompute every objective component from the dumped
    # JSON-lines trace plus the assignment list, spreadsheet style
    import json as _json

    net = micro_net(connecting_class=FrequencyClass.LOW, horizon=31.0)
    scen = make_scenario(
        net,
        running={"F": [[5.0], [6.0]], "C": [[4.0], [5.5], [7.0]]},
        walking={("X", "F", "C"): 1.5},
        demand={("X", "F", "C"): [5.0, 7.0]},
        alighting={"C": [[0, 2.0], [0, 1.0], [0, 3.0]]},
        net_intermediate={"C": [[1.0], [0.5], [0.0]]},
        initial_onboard={"C": [12.0, 9.0, 14.0], "F": [3.0, 4.0]},
        totals={("X", "C"): [6.0, 8.0, 5.0]},
        rates={("X", "F"): 0.4},
    )
    tt = make_timetable(
        net,
        {"F": [[5.0, 11.0], [19.0, 25.0]], "C": [[8.0, 14.0], [18.0, 24.0], [28.0, 34.0]]},
    )
    result = evaluate(tt, scen, net, Mode.SM)
    path = tmp_path / "trace.jsonl"
    result.dump_trace(path)
    rows = [_json.loads(line) for line in path.read_text().splitlines()]
    w = net.cost_weights
    ledger_wait = sum(a.demand * a.ntwait for a in result.assignments)
    ledger_iv = sum(r["vtd"] * r["rdiff"] for r in rows)
    ledger_out = sum((r["total_bd_ew"] + r["gbd_ew"]) * r["tewait"] for r in rows)
    ledger_in = sum(r["pdd"] * r["adiff"] for r in rows)
    assert result.cost.transfer_wait_cost == pytest.approx(w.c_tw * ledger_wait)
    assert result.cost.in_vehicle_cost == pytest.approx(w.c_vt / 2 * ledger_iv)
    assert result.cost.delay_out_cost == pytest.approx(w.c_dt * ledger_out)
    assert result.cost.delay_in_cost == pytest.approx(w.c_dt_in_vehicle * ledger_in)
    assert result.cost.total == pytest.approx(
        w.c_tw * ledger_wait + w.c_vt / 2 * ledger_iv
        + w.c_dt * ledger_out + w.c_dt_in_vehicle * ledger_in
    )
