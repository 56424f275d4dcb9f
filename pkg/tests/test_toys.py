import os

import numpy as np
import pytest

from fscx import formats, toys
from fscx.verify import robust_value, value_of_fsc


# cue is left out: its 2-node enumeration takes minutes
@pytest.mark.parametrize("name", ["chain", "geometric", "alternate", "two-obs"])
def test_brute_force_matches_recorded_optimum(name):
    inst = toys.get(name)
    best, _ = toys.brute_force_optimum(inst.model, max_nodes=2)
    assert best == pytest.approx(inst.optimum, abs=1e-9)


def test_family_adversary_is_the_worst_member():
    fam = toys.family()
    rv = robust_value(fam.model, fam.certificate)
    assert rv.value == pytest.approx(fam.optimum)
    memoryless = toys.memoryless([0] * fam.model.num_observations, fam.model.num_observations,
                                 fam.model.num_actions)
    assert robust_value(fam.model, memoryless).worst_index == toys.ADVERSARIAL_MEMBER


def test_evade_certificate_is_a_lower_bound():
    inst = toys.evade()
    assert not inst.exact
    assert value_of_fsc(inst.model, inst.certificate).value == pytest.approx(toys.EVADE_CERTIFICATE_VALUE)


def test_random_fsc_is_legal(rng):
    for inst in toys.generate_toys().values():
        fsc = toys.random_fsc(inst.model, 2, rng)
        legal = inst.model.legal_by_observation()
        assert (fsc.action_fn[:, ~legal] == 0).all()
        np.testing.assert_allclose(fsc.memory_fn.sum(axis=-1), 1.0)


def test_write_toys(tmp_path):
    paths = toys.write_toys(str(tmp_path))
    assert len(paths) == 14
    for p in paths:
        if p.endswith(".fsc"):
            formats.parse_fsc(p)
        else:
            formats.parse_model(p)
    assert all(os.path.dirname(p) == str(tmp_path) for p in paths)
