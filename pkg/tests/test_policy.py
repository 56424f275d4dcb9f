import numpy as np
import pytest
import torch

from fscx.errors import NonFiniteError
from fscx.policy import RecurrentPolicy, RnnPolicy, bptt_gradient, sample_action


def test_flat_parameters_round_trip():
    pol = RecurrentPolicy(4, 3, seed=0)
    theta = pol.flat_parameters().clone()
    pol.set_flat_parameters(torch.zeros_like(theta))
    assert pol.flat_parameters().abs().sum() == 0
    pol.set_flat_parameters(theta)
    assert torch.equal(pol.flat_parameters(), theta)


def test_seed_fixes_initialization():
    a = RecurrentPolicy(4, 3, seed=5).flat_parameters()
    b = RecurrentPolicy(4, 3, seed=5).flat_parameters()
    c = RecurrentPolicy(4, 3, seed=6).flat_parameters()
    assert torch.equal(a, b) and not torch.equal(a, c)


def test_save_load(tmp_path):
    pol = RecurrentPolicy(4, 3, seed=1)
    pol.save(tmp_path / "p.ckpt")
    back = RecurrentPolicy.load(tmp_path / "p.ckpt")
    assert torch.equal(back.flat_parameters(), pol.flat_parameters())


def test_reset_zeroes_state():
    pol = RecurrentPolicy(3, 2, seed=0, dtype=torch.float64)
    obs = torch.tensor([[1, 1], [2, 2], [0, 0]])
    resets = np.array([[False, False], [False, False], [False, True]])
    lg, _, _ = pol.unroll(obs, pol.initial_state(2), resets)
    fresh, _, _ = pol.unroll(obs[2:], pol.initial_state(2))
    assert torch.allclose(lg[2, 1], fresh[0, 1])
    assert not torch.allclose(lg[2, 0], fresh[0, 0])


def test_non_finite_gradient_names_step():
    pol = RecurrentPolicy(3, 2, seed=0)
    obs = torch.zeros(4, 1, dtype=torch.long)
    with pytest.raises(NonFiniteError):
        bptt_gradient(pol, lambda lg, v: (lg * float("nan")).sum(), obs)


def test_masked_sampling_respects_legal_mask():
    rng = np.random.default_rng(0)
    logits = np.zeros((200, 3))
    legal = np.zeros((200, 3), dtype=bool)
    legal[:, 2] = True
    actions, logp = sample_action(logits, rng, legal)
    assert (actions == 2).all()
    np.testing.assert_allclose(logp, 0.0)


def test_rnn_policy_shapes():
    pol = RnnPolicy(RecurrentPolicy(3, 2, seed=0), seed=0)
    pol.reset(5)
    a = pol.act(np.zeros(5, dtype=np.int64))
    assert a.shape == (5,) and set(a) <= {0, 1}
