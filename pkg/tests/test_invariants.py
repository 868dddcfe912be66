"""Structural invariants of evaluation traces on randomized instances.
These are the unit-sized versions; the acceptance suite runs the same checks
at the 10,000-trial scale."""

from __future__ import annotations

import pytest

from transync.evaluator import Mode, evaluate

from invariants import run_all_checks
from microgen import random_micro_instance


@pytest.mark.parametrize("seed", range(40))
def test_invariants_hold_on_micro_instances(seed):
    net, scen, tt = random_micro_instance(seed, both_directions=seed % 3 == 0)
    for mode in (Mode.SM, Mode.SDB):
        result = evaluate(tt, scen, net, mode)
        counts = run_all_checks(result, scen, net)
        assert all(v > 0 for v in counts.values())


@pytest.mark.parametrize("seed", range(3000, 3012))
def test_invariants_hold_on_larger_instances(seed):
    # large enough to run the greedy buffer path
    net, scen, tt = random_micro_instance(
        seed, max_feeder_trips=9, max_connecting_trips=9, both_directions=True
    )
    for mode in (Mode.SM, Mode.SDB):
        result = evaluate(tt, scen, net, mode)
        run_all_checks(result, scen, net)


@pytest.mark.parametrize("seed", range(400, 410))
def test_oracle_equivalence_with_both_directions(seed):
    from oracle import oracle_total_cost

    net, scen, tt = random_micro_instance(seed, both_directions=True)
    got = evaluate(tt, scen, net, Mode.SM).cost.total
    want = oracle_total_cost(tt, scen, net, Mode.SM)
    assert abs(got - want) / max(1.0, got, want) < 1e-6
