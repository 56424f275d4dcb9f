import numpy as np
import pytest

from fscx import toys
from fscx.sim import (BatchSimulator, FscPolicy, RewardShaping, UniformPolicy, allocate_simulators,
                      evaluate_empirical, sample_dataset)


def test_allocation_sums_and_decays():
    counts = allocate_simulators(6, 256)
    assert sum(counts) == 256
    assert all(c >= 1 for c in counts)
    assert counts[-1] == max(counts)
    assert counts[:-1] == sorted(counts[:-1])
    assert allocate_simulators(1, 10) == [10]
    with pytest.raises(ValueError):
        allocate_simulators(5, 3)


def test_same_seed_same_trajectories():
    m = toys.evade().model
    a = evaluate_empirical(UniformPolicy(m.num_actions, seed=3), m, 128, seed=4)
    b = evaluate_empirical(UniformPolicy(m.num_actions, seed=3), m, 128, seed=4)
    np.testing.assert_array_equal(a.values, b.values)


def test_chain_forward_reaches_goal():
    m = toys.chain().model
    emp = evaluate_empirical(FscPolicy(toys.chain().certificate, seed=0), m, 64, seed=0)
    assert emp.mean == 1.0 and emp.goal_rate == 1.0 and emp.stderr == 0.0


def test_reward_episode_returns():
    m = toys.geometric().model
    emp = evaluate_empirical(FscPolicy(toys.geometric().certificate), m, 4000, seed=1)
    assert abs(emp.mean - 2.0) < 4 * emp.stderr
    assert (emp.values >= 1.0).all()


def test_step_resets_finished_lanes():
    m = toys.chain().model
    sim = BatchSimulator([m], total_lanes=8, seed=0)
    for _ in range(3):
        res = sim.step(np.zeros(8, dtype=np.int64))
    assert (res.done == 1).all()
    assert (sim.local_state() == m.initial_state).all()
    done = sim.pop_completed()
    assert len(done["raw"]) == 8


def test_shaping_only_changes_training_reward():
    m = toys.chain().model
    shaping = RewardShaping.combined(10.0, 1.0, -1.0)
    sim = BatchSimulator([m], total_lanes=4, seed=0, shaping=shaping)
    for _ in range(3):
        res = sim.step(np.zeros(4, dtype=np.int64))
    assert (res.reward == 10.0).all()
    assert (res.raw_reward == 0.0).all()


def test_dataset_cuts_episodes():
    m = toys.chain().model
    data = sample_dataset(FscPolicy(toys.chain().certificate), m, lanes=4, steps=30, seed=0)
    assert data.total_steps == 120
    assert all(len(s) <= 3 for s in data.sequences)
    assert all((s[:, 1] == 0).all() for s in data.sequences)
