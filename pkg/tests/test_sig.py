import numpy as np
import pytest
import torch

from fscx import toys
from fscx.model import Fsc
from fscx.sig import (SigNetwork, TemperatureSchedule, gumbel_softmax, gumbel_softmax_sample, infer_fsc,
                      prune_unreachable, reachable_nodes, sample_gumbel, train_sig)
from fscx.sim import FscPolicy, sample_dataset
from fscx.verify import value_of_fsc


def test_schedule_endpoints_and_monotone():
    s = TemperatureSchedule(1.0, 0.1, 100)
    vals = [s.value(e) for e in range(101)]
    assert vals[0] == pytest.approx(1.0) and vals[-1] == pytest.approx(0.1)
    assert all(a >= b for a, b in zip(vals, vals[1:]))


def test_gumbel_softmax_numpy_and_torch_agree(rng):
    p = rng.normal(size=(5, 3))
    g = sample_gumbel(p.shape, rng)
    a = gumbel_softmax(p, 0.5, g)
    b = gumbel_softmax(torch.as_tensor(p), 0.5, torch.as_tensor(g)).numpy()
    np.testing.assert_allclose(a, b, atol=1e-12)
    np.testing.assert_allclose(a.sum(axis=1), 1.0)


def test_gumbel_softmax_large_logit_gap(rng):
    y = gumbel_softmax_sample(np.array([50.0, 0.0, 0.0]), 1.0, rng)
    assert y[0] > 0.999999


def test_network_save_load(tmp_path):
    net = SigNetwork(3, 2, 3, seed=4)
    net.save(tmp_path / "n.sig")
    back = SigNetwork.load(tmp_path / "n.sig")
    for p, q in zip(net.parameters(), back.parameters()):
        assert torch.equal(p, q)


def test_infer_respects_legal_and_truncation():
    net = SigNetwork(3, 3, 2, seed=0)
    legal = np.array([[1, 1, 1], [0, 1, 0], [1, 0, 1]], dtype=bool)
    fsc = infer_fsc(net, legal)
    assert fsc.action_fn.shape == (2, 3, 3) and fsc.memory_fn.shape == (2, 3, 2)
    np.testing.assert_allclose(fsc.action_fn[:, 1], [[0, 1, 0], [0, 1, 0]])
    assert (fsc.action_fn[:, 2, 1] == 0).all()
    assert ((fsc.action_fn == 0) | (fsc.action_fn >= 1e-4 / 3)).all()


def test_clones_deterministic_alternation():
    model = toys.alternate().model
    data = sample_dataset(FscPolicy(toys.planted_alternating(0.0)), model, lanes=64, steps=64, seed=0)
    net, report = train_sig(data, 3, 300, rng=0)
    fsc = prune_unreachable(infer_fsc(net, model.legal_by_observation()), model)
    assert report.agreement > 0.95
    assert value_of_fsc(model, fsc).value > 0.95


def test_training_is_reproducible():
    model = toys.alternate().model
    data = sample_dataset(FscPolicy(toys.planted_alternating(0.1)), model, lanes=16, steps=32, seed=0)
    a, _ = train_sig(data, 2, 5, rng=3, report=False)
    b, _ = train_sig(data, 2, 5, rng=3, report=False)
    for p, q in zip(a.parameters(), b.parameters()):
        assert torch.equal(p, q)


def test_prune_drops_unreachable_nodes():
    model = toys.chain().model
    act = np.zeros((3, 2, 2))
    act[:, :, 0] = 1.0
    mem = np.zeros((3, 2, 3))
    mem[0, :, 1] = 1.0
    mem[1, :, 1] = 1.0
    mem[2, :, 0] = 1.0
    fsc = Fsc(act, mem)
    assert list(reachable_nodes(fsc, model)) == [0, 1]
    pruned = prune_unreachable(fsc, model)
    assert pruned.num_nodes == 2
    assert value_of_fsc(model, pruned).value == value_of_fsc(model, fsc).value
    assert prune_unreachable(pruned, model) is pruned


def test_prune_keeps_union_over_family():
    fam = toys.family()
    fsc = toys.random_fsc(fam.model, 3, np.random.default_rng(1))
    pruned = prune_unreachable(fsc, fam.model)
    for m in fam.model.members:
        assert value_of_fsc(m, pruned).value == pytest.approx(value_of_fsc(m, fsc).value, abs=1e-12)
