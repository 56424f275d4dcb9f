import numpy as np
import pytest

from fscx import toys
from fscx.errors import ValidationError
from fscx.model import Fsc, HmPomdp, Objective, Pomdp, combine_sigma, split_sigma


def test_objective_direction():
    assert Objective.REACH_PROB_MAX.worse(0.2, 0.5)
    assert not Objective.REACH_PROB_MAX.worse(0.5, 0.2)
    assert Objective.REACH_REWARD_MIN.worse(3.0, 2.0)
    assert Objective.REACH_REWARD_MAX.is_reward and not Objective.REACH_PROB_MAX.is_reward


def test_build_rejects_non_stochastic_row():
    with pytest.raises(ValidationError):
        Pomdp.build(2, 1, [0, 1], {(0, 0): {1: 0.7}}, targets=[1])


def test_legal_mask_per_observation():
    m = toys.cue().model
    legal = m.legal_by_observation()
    assert legal.shape == (m.num_observations, m.num_actions)
    assert legal.any(axis=1).all()


def test_family_requires_shared_signature():
    a = toys.chain().model
    b = toys.geometric().model
    with pytest.raises(ValidationError):
        HmPomdp((a, b))


def test_fsc_is_read_only():
    fsc = toys.memoryless([0, 0], 2, 2)
    with pytest.raises(ValueError):
        fsc.action_fn[0, 0, 0] = 0.5


def test_sigma_round_trip(rng):
    sigma = rng.random((3, 2, 3, 4))
    sigma /= sigma.sum(axis=(2, 3), keepdims=True)
    fsc = Fsc.from_sigma(sigma)
    assert fsc.combined
    act, mem = split_sigma(sigma)
    np.testing.assert_allclose(act, fsc.action_fn)
    np.testing.assert_allclose(mem, fsc.memory_fn)
    # the product of the marginals is a fixed point of split/combine
    prod = combine_sigma(fsc)
    np.testing.assert_allclose(combine_sigma(Fsc.from_sigma(prod)), prod)
