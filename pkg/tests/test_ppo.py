import numpy as np
import pytest
import torch

from fscx import toys
from fscx.policy import RecurrentPolicy
from fscx.ppo import PpoConfig, RunningStd, Trainer, gae_advantages, write_metrics


def test_gae_single_episode_by_hand():
    r = np.array([1.0, 0.0, 2.0])
    v = np.array([0.5, 0.2, 0.1])
    d = np.array([False, False, True])
    adv, ret = gae_advantages(r, v, d, 0.9, 0.8)
    delta = r + 0.9 * np.array([0.2, 0.1, 0.0]) - v
    expect = np.array([delta[0] + 0.72 * delta[1] + 0.72**2 * delta[2], delta[1] + 0.72 * delta[2], delta[2]])
    np.testing.assert_allclose(adv, expect, atol=1e-15)
    np.testing.assert_allclose(ret, adv + v, atol=1e-15)


def test_gae_does_not_cross_episode_boundaries():
    r = np.array([[0.0], [5.0]])
    v = np.zeros((2, 1))
    adv, _ = gae_advantages(r, v, np.array([[True], [False]]), 0.99, 1.0, np.zeros(1))
    assert adv[0, 0] == 0.0


def test_running_std_scales_rewards():
    rs = RunningStd(0.99)
    rng = np.random.default_rng(0)
    for _ in range(50):
        out = rs.update(rng.normal(0, 10, size=(8, 4)), np.zeros((8, 4), dtype=bool))
    assert np.std(out) < 5.0


def test_config_rejects_bad_values():
    with pytest.raises(ValueError):
        PpoConfig(clip_ratio=-0.1)


def _small_trainer(seed=0):
    m = toys.cue().model
    cfg = PpoConfig(lanes=16, batch_size=8, segment_length=8, epochs_per_batch=1)
    pol = RecurrentPolicy(m.num_observations, m.num_actions, seed=seed)
    return Trainer(pol, [m], cfg, seed=seed)


def test_trainer_is_deterministic():
    a = _small_trainer().run(3)
    b = _small_trainer().run(3)
    assert a == b or all(np.allclose(list(x.values()), list(y.values()), equal_nan=True) for x, y in zip(a, b))
    ta = _small_trainer()
    tb = _small_trainer()
    ta.run(2)
    tb.run(2)
    for p, q in zip(ta.policy.parameters(), tb.policy.parameters()):
        assert torch.equal(p, q)


def test_non_finite_loss_restores_parameters():
    tr = _small_trainer()
    tr.run(1)
    before = [p.detach().clone() for p in tr.policy.parameters()]
    batch = tr.collect()
    batch.advantages[:] = np.nan
    diag = tr.update(batch)
    assert diag["aborted"].startswith("epoch 0 minibatch 0")
    for p, q in zip(before, tr.policy.parameters()):
        assert torch.equal(p, q)
    assert np.isfinite(tr.update(tr.collect())["entropy"])


def test_metrics_file_columns(tmp_path):
    rows = _small_trainer().run(2)
    path = tmp_path / "m.csv"
    write_metrics(rows, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "iteration,mean_episode_return_raw,mean_episode_return_shaped,entropy,clip_fraction,value_loss"
    assert len(lines) == 3
