"""Shared builders for small hand-constructed instances."""

from __future__ import annotations

import numpy as np
import pytest

from transync.evaluator import Timetable
from transync.network import (
    FrequencyClass,
    LineSpec,
    NetworkSpec,
    TransferPairSpec,
    trip_count,
)
from transync.scenarios import Scenario


def make_network(
    connecting_class: FrequencyClass = FrequencyClass.HIGH,
    feeder_headway: float = 15.0,
    connecting_headway: float = 10.0,
    horizon: float = 60.0,
    both_directions: bool = False,
    **globals_,
) -> NetworkSpec:
    """Two lines F and C meeting at node X; F feeds C (and C feeds F when
    ``both_directions``)."""
    feeder = LineSpec(
        line_id="F",
        headway_h=feeder_headway,
        node_sequence=("TF", "X"),
        frequency_class=FrequencyClass.HIGH,
    )
    connecting = LineSpec(
        line_id="C",
        headway_h=connecting_headway,
        node_sequence=("TC", "X"),
        frequency_class=connecting_class,
    )
    pairs = [TransferPairSpec("X", "F", "C")]
    if both_directions:
        pairs.append(TransferPairSpec("X", "C", "F"))
    return NetworkSpec(
        horizon_T=horizon,
        lines=(feeder, connecting),
        transfer_nodes=("X",),
        transfer_pairs=tuple(pairs),
        **globals_,
    )


def make_scenario(
    network: NetworkSpec,
    running: dict[str, list] | None = None,
    walking: dict[tuple, float] | None = None,
    demand: dict[tuple, list] | None = None,
    alighting: dict[str, list] | None = None,
    net_intermediate: dict[str, list] | None = None,
    initial_onboard: dict[str, list] | None = None,
    rates: dict[tuple, float] | None = None,
    totals: dict[tuple, list] | None = None,
) -> Scenario:
    """Scenario with explicit values; anything unspecified is zero demand and
    unit times."""
    running = running or {}
    run_arrays = {}
    ad_arrays = {}
    sp_arrays = {}
    ob_arrays = {}
    for ln in network.lines:
        trips = trip_count(ln, network.horizon_T)
        nseg = ln.n_segments
        if ln.line_id in running:
            run_arrays[ln.line_id] = np.array(running[ln.line_id], dtype=float)
        else:
            run_arrays[ln.line_id] = np.full((trips, nseg), 5.0)
        if alighting and ln.line_id in alighting:
            ad_arrays[ln.line_id] = np.array(alighting[ln.line_id], dtype=float)
        else:
            ad_arrays[ln.line_id] = np.zeros((trips, len(ln.node_sequence)))
        if net_intermediate and ln.line_id in net_intermediate:
            sp_arrays[ln.line_id] = np.array(net_intermediate[ln.line_id], dtype=float)
        else:
            sp_arrays[ln.line_id] = np.zeros((trips, nseg))
        if initial_onboard and ln.line_id in initial_onboard:
            ob_arrays[ln.line_id] = np.array(initial_onboard[ln.line_id], dtype=float)
        else:
            ob_arrays[ln.line_id] = np.zeros(trips)

    walk = {}
    dem = {}
    for tp in network.transfer_pairs:
        key = (tp.node, tp.feeder_line, tp.connecting_line)
        walk[key] = (walking or {}).get(key, 1.0)
        feeder_trips = trip_count(network.line(tp.feeder_line), network.horizon_T)
        if demand and key in demand:
            dem[key] = np.array(demand[key], dtype=float)
        else:
            dem[key] = np.zeros(feeder_trips)

    rate_map = {}
    total_map = {}
    for ln in network.lines:
        trips = trip_count(ln, network.horizon_T)
        for node in ln.node_sequence[1:]:
            key = (node, ln.line_id)
            if ln.frequency_class is FrequencyClass.HIGH:
                rate_map[key] = (rates or {}).get(key, 0.0)
            else:
                if totals and key in totals:
                    total_map[key] = np.array(totals[key], dtype=float)
                else:
                    total_map[key] = np.zeros(trips)

    return Scenario(
        running_time=run_arrays,
        walking_time=walk,
        transfer_demand=dem,
        alighting=ad_arrays,
        net_intermediate=sp_arrays,
        initial_onboard=ob_arrays,
        local_rate_lambda=rate_map,
        local_total_D=total_map,
    )


def make_timetable(network: NetworkSpec, pdep: dict[str, list]) -> Timetable:
    return Timetable({k: np.array(v, dtype=float) for k, v in pdep.items()})


def uniform_timetable(
    network: NetworkSpec,
    first: dict[str, float] | None = None,
    node_lag: dict[str, float] | None = None,
) -> Timetable:
    """Evenly spaced departures: trip p leaves the terminal at
    first + p * headway, and each later node ``node_lag`` minutes after the
    terminal time."""
    first = first or {}
    node_lag = node_lag or {}
    pdep = {}
    for ln in network.lines:
        trips = trip_count(ln, network.horizon_T)
        base = first.get(ln.line_id, ln.headway_h)
        lag = node_lag.get(ln.line_id, 5.0)
        arr = np.zeros((trips, len(ln.node_sequence)))
        for p in range(trips):
            arr[p, 0] = base + p * ln.headway_h
            for pos in range(1, len(ln.node_sequence)):
                arr[p, pos] = arr[p, 0] + lag * pos
        pdep[ln.line_id] = arr
    return Timetable(pdep)


@pytest.fixture
def high_net() -> NetworkSpec:
    return make_network(FrequencyClass.HIGH)


@pytest.fixture
def low_net() -> NetworkSpec:
    return make_network(FrequencyClass.LOW, connecting_headway=20.0, horizon=60.0)
