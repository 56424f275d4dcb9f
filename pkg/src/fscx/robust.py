"""Train, extract, verify; and the robust variant that grows a buffer of worst-case members."""

from __future__ import annotations

import csv
import hashlib
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import formats
from .alergia import DEFAULT_ALPHA, run_alergia
from .model import Fsc, HmPomdp, Pomdp
from .policy import RecurrentPolicy, RnnPolicy
from .ppo import PpoConfig, Trainer, write_metrics
from .sig import TemperatureSchedule, infer_fsc, prune_unreachable, train_sig
from .sim import RewardShaping, allocate_simulators, evaluate_empirical, sample_dataset
from .verify import ValueResult, robust_value, value_of_fsc

HISTORY_COLUMNS = ("iteration", "member_added", "J_robust", "empirical_buffer_value")


def derive_seed(seed: int, *parts) -> int:
    h = hashlib.sha256(":".join(str(p) for p in (seed,) + parts).encode()).digest()
    return int.from_bytes(h[:4], "little")


@dataclass
class PomdpBuffer:
    """Member indices in insertion order; repeats are kept and each gets its own lanes."""

    members: list[int] = field(default_factory=list)

    def add(self, index: int):
        self.members.append(int(index))

    def __len__(self):
        return len(self.members)

    def allocation(self, total_lanes: int) -> list[int]:
        return allocate_simulators(len(self.members), total_lanes)

    def models(self, hm: HmPomdp) -> list[Pomdp]:
        return [hm.member(i) for i in self.members]


@dataclass
class LoopConfig:
    method: str = "sig"
    initial_members: int = 6
    init_iterations: int = 200
    inner_iterations: int = 50
    iterations: int = 4000  # training length of a single-model run
    timeout: float = 3600.0
    max_outer_iterations: int | None = None
    seed: int = 0
    ppo: PpoConfig = field(default_factory=PpoConfig)
    shaping: RewardShaping | None = None
    alpha: float = DEFAULT_ALPHA
    max_nodes: int = 3
    sig_epochs: int = 501
    dataset_steps: int = 4001
    dataset_lanes: int = 256
    eval_episodes: int = 512
    random_selection: bool = False
    out_dir: str | None = None

    def __post_init__(self):
        if self.method not in ("alergia", "sig"):
            raise ValueError(f"unknown extraction method {self.method!r}")
        if not self.timeout > 0:
            raise ValueError("timeout must be positive")
        if self.initial_members < 1:
            raise ValueError("initial_members must be >= 1")

    def as_dict(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__ if k not in ("ppo", "shaping")}
        out["ppo"] = self.ppo.as_dict()
        if self.shaping is not None:
            s = self.shaping
            out["shaping"] = {"category": s.category.value, "goal_reward": s.goal_reward,
                              "reward_multiplier": s.reward_multiplier, "truncation_penalty": s.truncation_penalty}
        return out


class Extractor:
    """Turns a trained policy into a controller; keeps the SIG network between calls."""

    def __init__(self, cfg: LoopConfig):
        self.cfg = cfg
        self.net = None
        self.rng = np.random.default_rng(derive_seed(cfg.seed, "sig"))
        self.last_report = None

    def dataset(self, policy: RecurrentPolicy, members, seed: int, counts=None):
        cfg = self.cfg
        sampler = RnnPolicy(policy, seed=seed, masked=True)
        return sample_dataset(sampler, members, lanes=cfg.dataset_lanes, steps=cfg.dataset_steps, seed=seed,
                              counts=counts, max_steps=cfg.ppo.max_steps)

    def extract(self, data, model, legal) -> Fsc:
        cfg = self.cfg
        if cfg.method == "alergia":
            return run_alergia(data, cfg.alpha, legal=legal)
        schedule = TemperatureSchedule(total_epochs=cfg.sig_epochs)
        self.net, self.last_report = train_sig(data, cfg.max_nodes, cfg.sig_epochs, schedule, self.rng, net=self.net)
        return prune_unreachable(infer_fsc(self.net, legal), model)


def _out(cfg: LoopConfig, name: str) -> Path | None:
    if cfg.out_dir is None:
        return None
    Path(cfg.out_dir).mkdir(parents=True, exist_ok=True)
    return Path(cfg.out_dir) / name


def lexpop(pomdp: Pomdp, cfg: LoopConfig) -> tuple[Fsc, ValueResult]:
    """Train a fresh policy, sample a masked dataset, extract and verify.

    Artifacts (checkpoint, metrics, dataset, controller) go to ``cfg.out_dir``
    when it is set; the checkpoint and dataset are written before extraction.
    """
    policy = RecurrentPolicy(pomdp.num_observations, pomdp.num_actions, seed=derive_seed(cfg.seed, "policy"))
    trainer = Trainer(policy, [pomdp], replace(cfg.ppo, iterations=cfg.iterations),
                      seed=derive_seed(cfg.seed, "ppo"), shaping=cfg.shaping)
    rows = trainer.run(cfg.iterations)
    if (p := _out(cfg, "metrics.csv")) is not None:
        write_metrics(rows, p)
        policy.save(_out(cfg, "policy.ckpt"))
    extractor = Extractor(cfg)
    data = extractor.dataset(policy, [pomdp], derive_seed(cfg.seed, "dataset"))
    if (p := _out(cfg, "dataset.traj")) is not None:
        formats.write_dataset(data, p)
    fsc = extractor.extract(data, pomdp, pomdp.legal_by_observation())
    if (p := _out(cfg, "controller.fsc")) is not None:
        formats.write_fsc(fsc, p)
    return fsc, value_of_fsc(pomdp, fsc)


@dataclass
class LoopResult:
    fsc: Fsc | None
    j_robust: float
    history: list[dict]
    buffer: PomdpBuffer
    best_iteration: int
    timed_out: bool = False
    timings: list[float] = field(default_factory=list)


def _initial_buffer(hm: HmPomdp, cfg: LoopConfig) -> PomdpBuffer:
    rng = np.random.default_rng(derive_seed(cfg.seed, "buffer"))
    k = min(cfg.initial_members, hm.num_members)
    return PomdpBuffer(sorted(rng.choice(hm.num_members, size=k, replace=False).tolist()))


def robust_lexpop(hm: HmPomdp, cfg: LoopConfig, *, on_iteration=None) -> LoopResult:
    """Robust loop: train on the buffer, extract, find the worst member, add it, repeat.

    Stops when ``cfg.timeout`` seconds have passed (checked between stages) or
    after ``cfg.max_outer_iterations`` iterations. The policy, its optimizer
    and (for SIG) the surrogate network persist across iterations. Returns the
    controller with the best robust value seen.
    """
    if isinstance(hm, Pomdp):
        hm = HmPomdp((hm,))
    start = time.monotonic()
    base = hm.member(0)
    objective = hm.objective
    buffer = _initial_buffer(hm, cfg)
    policy = RecurrentPolicy(base.num_observations, base.num_actions, seed=derive_seed(cfg.seed, "policy"))
    total = cfg.ppo.lanes
    trainer = Trainer(policy, buffer.models(hm), cfg.ppo, seed=derive_seed(cfg.seed, "ppo"), shaping=cfg.shaping,
                      counts=buffer.allocation(total))
    extractor = Extractor(cfg)
    pick_rng = np.random.default_rng(derive_seed(cfg.seed, "random-selection"))
    legal = base.legal_by_observation()
    history, timings, metric_rows = [], [], []
    best, best_j, best_it = None, None, 0
    timed_out = False

    def expired():
        return time.monotonic() - start >= cfg.timeout

    it = 0
    while cfg.max_outer_iterations is None or it < cfg.max_outer_iterations:
        if expired():
            timed_out = True
            break
        t0 = time.monotonic()
        it += 1
        if it > 1:
            trainer.set_members(buffer.models(hm), buffer.allocation(total))
        rows = trainer.run(cfg.init_iterations if it == 1 else cfg.inner_iterations)
        metric_rows.extend(rows)
        if expired():
            timed_out = True
            break
        data = extractor.dataset(policy, buffer.models(hm), derive_seed(cfg.seed, "dataset", it),
                                 counts=buffer.allocation(cfg.dataset_lanes))
        fsc = extractor.extract(data, hm.members, legal)
        rv = robust_value(hm, fsc, undefined_as_worst=True)
        emp = evaluate_empirical(RnnPolicy(policy, seed=derive_seed(cfg.seed, "eval", it), masked=True),
                                 buffer.models(hm), cfg.eval_episodes, seed=derive_seed(cfg.seed, "eval-sim", it),
                                 max_steps=cfg.ppo.max_steps)
        added = int(pick_rng.integers(hm.num_members)) if cfg.random_selection else rv.worst_index
        buffer.add(added)
        row = {"iteration": it, "member_added": added, "J_robust": float(rv.value),
               "empirical_buffer_value": emp.mean}
        history.append(row)
        timings.append((time.monotonic() - t0) * 1000.0)
        if best is None or objective.worse(best_j, rv.value):
            best, best_j, best_it = fsc, float(rv.value), it
            if (p := _out(cfg, "best.fsc")) is not None:
                formats.write_fsc(fsc, p)
        if (p := _out(cfg, f"controller-{it}.fsc")) is not None:
            formats.write_fsc(fsc, p)
        if on_iteration is not None:
            on_iteration(row)
    if cfg.out_dir is not None:
        write_history(history, _out(cfg, "history.csv"))
        write_metrics(metric_rows, _out(cfg, "metrics.csv"))
        write_timing(timings, _out(cfg, "timing.csv"))
        policy.save(_out(cfg, "policy.ckpt"))
    return LoopResult(best, float("nan") if best_j is None else best_j, history, buffer, best_it, timed_out, timings)


def write_history(history, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HISTORY_COLUMNS)
        for r in history:
            w.writerow([r["iteration"], r["member_added"], repr(float(r["J_robust"])),
                        repr(float(r["empirical_buffer_value"]))])


def write_timing(timings, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("iteration", "wall_ms"))
        for i, ms in enumerate(timings, start=1):
            w.writerow((i, f"{ms:.3f}"))

