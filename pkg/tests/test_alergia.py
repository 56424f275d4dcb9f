import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fscx import toys
from fscx.alergia import build_prefix_tree, chi2_compatible, chi2_statistic, merge_tree, run_alergia
from fscx.dataset import TrajectoryDataset
from fscx.sim import FscPolicy, sample_dataset
from fscx.verify import value_of_fsc


def _data(seqs, Z=2, A=2):
    return TrajectoryDataset([np.array(s) for s in seqs], Z, A)


def test_prefix_tree_counts():
    tree = build_prefix_tree(_data([[(0, 1), (1, 0)], [(0, 1), (1, 1)], [(0, 0)]]))
    assert tree.num_nodes == 5
    assert tree.count(0, 0, 1) == 2 and tree.count(0, 0, 0) == 1
    child = tree.children[0][(0, 1)]
    assert tree.depth[child] == 1
    assert list(tree.counts[child][1]) == [1, 1]


def test_chi2_textbook_table():
    stat, df = chi2_statistic([90, 10], [10, 90])
    assert (stat, df) == (128.0, 1)
    assert not chi2_compatible([90, 10], [10, 90])
    assert chi2_compatible([50, 50], [52, 48])


def test_chi2_ignores_empty_columns():
    assert chi2_statistic([5, 0, 5], [4, 0, 6])[1] == 1


def test_small_samples_are_compatible():
    assert chi2_compatible([3, 0], [0, 3], min_samples=10)


def test_power_grows_with_separation():
    stats = [chi2_statistic([50 + d, 50 - d], [50 - d, 50 + d])[0] for d in range(0, 40, 5)]
    assert stats == sorted(stats) and stats[0] == 0.0


@settings(max_examples=30, deadline=None)
@given(st.lists(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=10), min_size=1,
                max_size=30))
def test_merging_conserves_counts(seqs):
    data = _data(seqs)
    tree = build_prefix_tree(data)
    assert tree.total_count() == data.total_steps
    red = merge_tree(tree)
    assert red[0] == 0
    total = sum(int(v.sum()) for n in red for v in tree.counts[n].values())
    assert total == data.total_steps


def test_deterministic_controller_is_recovered():
    model = toys.alternate().model
    planted = toys.planted_alternating(0.0)
    data = sample_dataset(FscPolicy(planted), model, lanes=32, steps=100, seed=0)
    fsc = run_alergia(data)
    assert value_of_fsc(model, fsc).value == pytest.approx(1.0)


def test_unseen_observation_plays_uniform_over_legal():
    data = _data([[(0, 0), (0, 0)]] * 20, Z=3, A=3)
    legal = np.array([[1, 1, 1], [1, 1, 1], [0, 1, 1]], dtype=bool)
    fsc = run_alergia(data, legal=legal)
    np.testing.assert_allclose(fsc.action_fn[0, 2], [0.0, 0.5, 0.5])
    np.testing.assert_allclose(fsc.action_fn[0, 0], [1.0, 0.0, 0.0])


def test_plain_alpha_is_available():
    model = toys.alternate().model
    data = sample_dataset(FscPolicy(toys.planted_alternating(0.2), seed=1), model, lanes=64, steps=200, seed=1)
    a = run_alergia(data, correction="none")
    b = run_alergia(data)
    assert a.num_nodes >= b.num_nodes
