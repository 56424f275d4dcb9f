import csv

import numpy as np
import pytest

from fscx import formats, toys
from fscx.model import HmPomdp
from fscx.ppo import PpoConfig
from fscx.robust import LoopConfig, PomdpBuffer, robust_lexpop
from fscx.verify import robust_value

SMALL = dict(method="alergia", init_iterations=3, inner_iterations=2, max_outer_iterations=3, dataset_steps=40,
             dataset_lanes=32, eval_episodes=32, ppo=PpoConfig(lanes=32, batch_size=16, segment_length=8))


def test_buffer_allocation():
    buf = PomdpBuffer([0, 3])
    buf.add(3)
    assert len(buf) == 3 and buf.members == [0, 3, 3]
    assert sum(buf.allocation(64)) == 64


def test_config_validation():
    with pytest.raises(ValueError):
        LoopConfig(method="other")
    with pytest.raises(ValueError):
        LoopConfig(timeout=0)


def test_loop_grows_buffer_and_keeps_best(tmp_path):
    fam = toys.family().model
    cfg = LoopConfig(seed=1, out_dir=str(tmp_path), **SMALL)
    res = robust_lexpop(fam, cfg)
    assert len(res.buffer) == min(cfg.initial_members, fam.num_members) + 3
    assert len(res.history) == 3
    assert res.j_robust == max(r["J_robust"] for r in res.history)
    assert [r["member_added"] for r in res.history] == res.buffer.members[-3:]
    # the persisted best controller has the reported robust value
    best = formats.parse_fsc(tmp_path / "best.fsc")
    assert robust_value(fam, best).value == pytest.approx(res.j_robust, abs=1e-12)
    with open(tmp_path / "history.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [int(r["iteration"]) for r in rows] == [1, 2, 3]
    for name in ("metrics.csv", "timing.csv", "policy.ckpt", "controller-3.fsc"):
        assert (tmp_path / name).exists()


def test_singleton_family_adds_member_zero():
    single = HmPomdp((toys.cue().model,))
    res = robust_lexpop(single, LoopConfig(seed=0, **SMALL))
    assert res.buffer.members == [0, 0, 0, 0]


def test_random_ablation_matches_on_one_member():
    single = HmPomdp((toys.cue().model,))
    a = robust_lexpop(single, LoopConfig(seed=2, **SMALL))
    b = robust_lexpop(single, LoopConfig(seed=2, random_selection=True, **SMALL))
    assert a.history == b.history


def test_timeout_stops_loop():
    fam = toys.family().model
    cfg = LoopConfig(seed=0, timeout=1e-6, **{**SMALL, "max_outer_iterations": None})
    res = robust_lexpop(fam, cfg)
    assert res.timed_out and res.fsc is None and np.isnan(res.j_robust)
