import numpy as np
import pytest

from fscx import toys
from fscx.errors import GoalNotAlmostSure, IllegalActionSupport, UndefinedControllerRow
from fscx.model import Fsc, Objective, Pomdp
from fscx.verify import build_product, reachable_pairs, robust_value, solve_value, value_of_fsc


@pytest.mark.parametrize("name", ["chain", "geometric", "cue", "alternate", "two-obs"])
def test_solvers_agree(name):
    inst = toys.get(name)
    chain = build_product(inst.model, inst.certificate)
    gs = solve_value(chain, inst.model.objective)
    lin = solve_value(chain, inst.model.objective, method="linear")
    assert abs(gs.value - lin.value) < 1e-9


def test_memoryless_cue_is_half_at_best():
    m = toys.cue().model
    best = max(value_of_fsc(m, fsc).value for fsc in toys.enumerate_deterministic(m, 1))
    assert best == pytest.approx(0.5)


def test_reward_objective_needs_sure_goal():
    m = Pomdp.build(3, 2, [0, 1, 1], {(0, 0): {1: 1.0}, (0, 1): {2: 1.0}, (1, 0): {1: 1.0}, (1, 1): {1: 1.0},
                                      (2, 0): {2: 1.0}, (2, 1): {2: 1.0}},
                    rewards={(0, 0): 1.0, (0, 1): 1.0}, targets=[1], objective=Objective.REACH_REWARD_MAX)
    half = toys.memoryless([[0.5, 0.5], [1.0, 0.0]], 2, 2)
    with pytest.raises(GoalNotAlmostSure):
        value_of_fsc(m, half)
    assert value_of_fsc(m, half, conditional=True).value == pytest.approx(1.0)


def test_undefined_row_is_reported():
    m = toys.chain().model
    act = np.zeros((1, 2, 2))
    act[0, 1, 0] = 1.0
    mem = np.zeros((1, 2, 1))
    mem[0, 1, 0] = 1.0
    with pytest.raises(UndefinedControllerRow):
        value_of_fsc(m, Fsc(act, mem))


def test_illegal_support_is_reported():
    m = Pomdp.build(2, 2, [0, 1], {(0, 0): {1: 1.0}}, targets=[1], legal=[(0, 0)])
    uniform = toys.memoryless([[0.5, 0.5], [0.5, 0.5]], 2, 2)
    with pytest.raises(IllegalActionSupport) as err:
        value_of_fsc(m, uniform)
    assert err.value.action == 1


def test_robust_value_is_member_minimum():
    fam = toys.family()
    fsc = toys.random_fsc(fam.model, 2, np.random.default_rng(0))
    rv = robust_value(fam.model, fsc)
    assert rv.value == min(rv.member_values)
    assert rv.worst_index == int(np.argmin(rv.member_values))
    J, worst = rv
    assert (J, worst) == (rv.value, rv.worst_index)


def test_reachable_pairs_start_at_initial():
    chain = build_product(toys.cue().model, toys.cue().certificate)
    pairs = reachable_pairs(chain)
    assert pairs.size and pairs.size <= chain.size
