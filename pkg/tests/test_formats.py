import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fscx import formats, toys
from fscx.dataset import TrajectoryDataset
from fscx.errors import ModelFormatError


@pytest.mark.parametrize("name", [t.__name__.replace("_", "-") for t in toys.ALL])
def test_model_round_trip(name):
    model = toys.get(name).model
    assert formats.parse_model_text(formats.serialize_model(model)) == model


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), nodes=st.integers(1, 4))
def test_fsc_round_trip(seed, nodes):
    model = toys.cue().model
    fsc = toys.random_fsc(model, nodes, np.random.default_rng(seed))
    back = formats.parse_fsc_text(formats.serialize_fsc(fsc))
    np.testing.assert_array_equal(back.action_fn, fsc.action_fn)
    np.testing.assert_array_equal(back.memory_fn, fsc.memory_fn)
    assert back.initial_node == fsc.initial_node


@settings(max_examples=25, deadline=None)
@given(st.lists(st.lists(st.tuples(st.integers(0, 2), st.integers(0, 1)), min_size=1, max_size=8), min_size=1,
                max_size=5))
def test_dataset_round_trip(tmp_path_factory, seqs):
    data = TrajectoryDataset([np.array(s) for s in seqs], 3, 2)
    path = tmp_path_factory.mktemp("d") / "x.traj"
    formats.write_dataset(data, path)
    assert formats.parse_dataset(path) == data


def test_parse_error_names_line():
    text = formats.serialize_model(toys.chain().model).splitlines()
    text.insert(3, "this is not a directive")
    with pytest.raises(ModelFormatError) as err:
        formats.parse_model_text("\n".join(text))
    assert err.value.line is not None


def test_shipped_toy_files_match_generators():
    import os
    from conftest import TOY_DIR

    for name in ("chain", "cue", "family"):
        paths = [p for p in os.listdir(TOY_DIR) if p.startswith(name + ".") and not p.endswith(".fsc")]
        assert paths, name
        assert formats.parse_model(os.path.join(TOY_DIR, paths[0])) == toys.get(name).model
