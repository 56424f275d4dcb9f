"""PPO for the recurrent policy on the batch simulator.

One iteration collects ``segment_length`` steps on every lane, computes GAE
advantages, and runs ``epochs_per_batch`` passes of clipped-surrogate updates
over minibatches of whole segments (never split, so the stored hidden state
at each segment start stays valid for backpropagation through time).
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from . import kernels
from .errors import NonFiniteError
from .policy import HiddenState, RecurrentPolicy, entropy, sample_action
from .sim import DEFAULT_LANES, BatchSimulator, RewardShaping, RUNNING

METRIC_COLUMNS = (
    "iteration", "mean_episode_return_raw", "mean_episode_return_shaped", "entropy", "clip_fraction", "value_loss",
)


@dataclass
class PpoConfig:
    clip_ratio: float = 0.2
    epochs_per_batch: int = 3
    gae_lambda: float = 0.95
    entropy_coef: float = 0.02
    gamma: float = 0.995
    learning_rate: float = 0.00016
    adam_beta1: float = 0.99
    adam_beta2: float = 0.99
    weight_decay: float = 0.0001
    batch_size: int = 256  # segments per minibatch
    segment_length: int = 32
    normalize_rewards: bool = True
    normalize_observations: bool = True  # no effect on one-hot inputs
    normalize_advantages: bool = True
    value_coef: float = 0.5
    max_grad_norm: float = 0.5
    lanes: int = DEFAULT_LANES
    iterations: int = 0
    max_steps: int = 600

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0.0 < self.clip_ratio:
            raise ValueError("clip_ratio must be positive")
        if self.segment_length < 1 or self.batch_size < 1 or self.epochs_per_batch < 0:
            raise ValueError("segment_length, batch_size must be >= 1 and epochs_per_batch >= 0")

    def as_dict(self) -> dict:
        return asdict(self)


def gae_advantages(rewards, values, dones, gamma, lam, last_values=None):
    """(advantages, returns) with no bootstrapping across ``dones``.

    delta_t = r_t + gamma * v_{t+1} * (1 - done_t) - v_t, where v_T is
    ``last_values`` (zero if omitted); A_t = delta_t + gamma*lam*(1-done_t)*A_{t+1}.
    """
    r = np.asarray(rewards, dtype=np.float64)
    squeeze = r.ndim == 1
    r = r.reshape(r.shape[0], -1)
    v = np.asarray(values, dtype=np.float64).reshape(r.shape)
    d = np.asarray(dones).reshape(r.shape).astype(np.uint8)
    last = np.zeros(r.shape[1]) if last_values is None else np.asarray(last_values, dtype=np.float64).reshape(-1)
    adv = kernels.gae(r, v, d, last, gamma, lam)
    ret = adv + v
    if squeeze:
        return adv[:, 0], ret[:, 0]
    return adv, ret


class RunningStd:
    """Running variance of per-lane discounted returns; rewards are divided by its square root."""

    def __init__(self, gamma: float, eps: float = 1e-8):
        self.gamma = gamma
        self.eps = eps
        self.count = 0
        self.mean = 0.0
        self.m2 = 0.0
        self.ret = None

    @property
    def std(self) -> float:
        if self.count < 2:
            return 1.0
        return math.sqrt(self.m2 / self.count) + self.eps

    def update(self, rewards: np.ndarray, dones: np.ndarray):
        """Feed one (T, L) block, then return it scaled by the updated std."""
        T, L = rewards.shape
        if self.ret is None or self.ret.shape[0] != L:
            self.ret = np.zeros(L)
        rets = np.empty_like(rewards)
        for t in range(T):
            self.ret = self.ret * self.gamma + rewards[t]
            rets[t] = self.ret
            self.ret = np.where(dones[t], 0.0, self.ret)
        x = rets.ravel()
        n, mean, m2 = x.size, float(x.mean()), float(((x - x.mean()) ** 2).sum())
        tot = self.count + n
        delta = mean - self.mean
        self.mean += delta * n / tot
        self.m2 += m2 + delta**2 * self.count * n / tot
        self.count = tot
        return rewards / self.std

    def state(self) -> dict:
        return {"count": self.count, "mean": self.mean, "m2": self.m2}


@dataclass
class RolloutBatch:
    obs: np.ndarray  # (T, L)
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray  # shaped (before normalization)
    train_rewards: np.ndarray  # what GAE sees
    values: np.ndarray
    dones: np.ndarray  # bool, episode ended after step t
    resets: np.ndarray  # bool, hidden state zeroed before step t
    segment_h: np.ndarray  # (T // seg, L, H) hidden at each segment start
    segment_c: np.ndarray
    last_values: np.ndarray  # (L,)
    completed_raw: np.ndarray = field(default_factory=lambda: np.zeros(0))
    completed_shaped: np.ndarray = field(default_factory=lambda: np.zeros(0))
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    @property
    def num_transitions(self) -> int:
        return int(self.obs.size)


def _derive_seed(*parts) -> int:
    h = hashlib.sha256(":".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(h[:8], "little")


class Trainer:
    """Owns a policy, its optimizer and the simulator it is trained on.

    ``set_members`` swaps the simulated POMDP set while keeping the policy and
    optimizer state, which is what the robust loop needs.
    """

    def __init__(self, policy: RecurrentPolicy, members, cfg: PpoConfig, *, seed: int = 0,
                 shaping: RewardShaping | None = None, counts=None):
        self.policy = policy
        self.cfg = cfg
        self.seed = int(seed)
        self.shaping = shaping
        self.optimizer = torch.optim.AdamW(
            policy.parameters(), lr=cfg.learning_rate, betas=(cfg.adam_beta1, cfg.adam_beta2),
            weight_decay=cfg.weight_decay,
        )
        self.rng = np.random.default_rng(_derive_seed(self.seed, "actions"))
        self.normalizer = RunningStd(cfg.gamma)
        self.iteration = 0
        self._sim_epoch = 0
        self.sim = None
        self.set_members(members, counts)

    def set_members(self, members, counts=None):
        members = list(members) if isinstance(members, (list, tuple)) else [members]
        shaping = self.shaping if self.shaping is not None else RewardShaping.for_objective(members[0].objective)
        total = None if counts is not None else self.cfg.lanes
        self.sim = BatchSimulator(members, counts, total_lanes=total, max_steps=self.cfg.max_steps,
                                  seed=_derive_seed(self.seed, "sim", self._sim_epoch), shaping=shaping)
        self._sim_epoch += 1
        L = self.sim.num_lanes
        self.hidden = self.policy.initial_state(L)
        self.obs = self.sim.observations()
        self.reset_next = np.ones(L, dtype=bool)
        self.normalizer.ret = None

    @torch.no_grad()
    def collect(self, steps: int | None = None) -> RolloutBatch:
        cfg = self.cfg
        T = steps if steps is not None else cfg.segment_length
        seg = cfg.segment_length
        L = self.sim.num_lanes
        obs = np.empty((T, L), dtype=np.int64)
        actions = np.empty((T, L), dtype=np.int64)
        logp = np.empty((T, L))
        rewards = np.empty((T, L))
        values = np.empty((T, L))
        dones = np.empty((T, L), dtype=bool)
        resets = np.empty((T, L), dtype=bool)
        n_seg = math.ceil(T / seg)
        seg_h = np.empty((n_seg, L, self.policy.hidden_size), dtype=np.float64)
        seg_c = np.empty_like(seg_h)
        hidden = self.hidden
        for t in range(T):
            resets[t] = self.reset_next
            hidden = hidden.masked(torch.as_tensor(self.reset_next))
            if t % seg == 0:
                seg_h[t // seg] = hidden.h.double().numpy()
                seg_c[t // seg] = hidden.c.double().numpy()
            logits, v, hidden = self.policy.step(torch.as_tensor(self.obs), hidden)
            a, lp = sample_action(logits.double().numpy(), self.rng)
            res = self.sim.step(a)
            obs[t], actions[t], logp[t] = self.obs, a, lp
            values[t] = v.double().numpy()
            rewards[t] = res.reward
            dones[t] = res.done != RUNNING
            self.reset_next = dones[t]
            self.obs = res.observation
        self.hidden = hidden
        h_next = hidden.masked(torch.as_tensor(self.reset_next))
        _, last_v, _ = self.policy.step(torch.as_tensor(self.obs), h_next)
        train_r = self.normalizer.update(rewards, dones) if cfg.normalize_rewards else rewards
        done_info = self.sim.pop_completed()
        batch = RolloutBatch(obs, actions, logp, rewards, train_r, values, dones, resets, seg_h, seg_c,
                             last_v.double().numpy(), done_info["raw"], done_info["shaped"])
        batch.advantages, batch.returns = gae_advantages(
            train_r, values, dones, cfg.gamma, cfg.gae_lambda, batch.last_values
        )
        return batch

    def update(self, batch: RolloutBatch) -> dict:
        return ppo_update(self.policy, self.optimizer, batch, self.cfg, self.rng)

    def run(self, iterations: int, on_metrics=None) -> list[dict]:
        rows = []
        for _ in range(int(iterations)):
            batch = self.collect()
            diag = self.update(batch)
            self.iteration += 1
            row = {
                "iteration": self.iteration,
                "mean_episode_return_raw": float(batch.completed_raw.mean()) if batch.completed_raw.size else float("nan"),
                "mean_episode_return_shaped": float(batch.completed_shaped.mean()) if batch.completed_shaped.size else float("nan"),
                "entropy": diag["entropy"],
                "clip_fraction": diag["clip_fraction"],
                "value_loss": diag["value_loss"],
            }
            rows.append(row)
            if on_metrics is not None:
                on_metrics(row, diag)
        return rows


def _segments(batch: RolloutBatch, seg: int):
    """Split (T, L) arrays into segment-major (n_seg * L) blocks of length ``seg``."""
    T, L = batch.obs.shape
    n_seg = math.ceil(T / seg)
    pad = n_seg * seg - T

    def cut(x, fill=0):
        if pad:
            x = np.concatenate([x, np.full((pad,) + x.shape[1:], fill, dtype=x.dtype)])
        # (n_seg, seg, L, ...) -> (seg, n_seg * L, ...)
        x = x.reshape(n_seg, seg, L, *x.shape[2:])
        return np.moveaxis(x, 0, 1).reshape(seg, n_seg * L, *x.shape[3:])

    valid = cut(np.ones((T, L), dtype=bool), False)
    return {
        "obs": cut(batch.obs), "actions": cut(batch.actions), "log_probs": cut(batch.log_probs),
        "advantages": cut(batch.advantages), "returns": cut(batch.returns), "resets": cut(batch.resets, False),
        "valid": valid, "h": batch.segment_h.reshape(n_seg * L, -1), "c": batch.segment_c.reshape(n_seg * L, -1),
    }


def ppo_loss(policy: RecurrentPolicy, mb: dict, cfg: PpoConfig):
    """Clipped surrogate + value + entropy loss on one minibatch of segments."""
    dt = policy.dtype
    hidden = HiddenState(torch.as_tensor(mb["h"], dtype=dt), torch.as_tensor(mb["c"], dtype=dt))
    logits, values, _ = policy.unroll(torch.as_tensor(mb["obs"]), hidden, mb["resets"])
    valid = torch.as_tensor(mb["valid"])
    logp_all = torch.log_softmax(logits, dim=-1)
    acts = torch.as_tensor(mb["actions"]).unsqueeze(-1)
    logp = logp_all.gather(-1, acts).squeeze(-1)
    old = torch.as_tensor(mb["log_probs"], dtype=dt)
    adv = torch.as_tensor(mb["advantages"], dtype=dt)
    ret = torch.as_tensor(mb["returns"], dtype=dt)
    ratio = torch.exp(logp - old)
    clipped = torch.clamp(ratio, 1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio)
    surrogate = torch.minimum(ratio * adv, clipped * adv)
    n = valid.sum()
    pg_loss = -(surrogate * valid).sum() / n
    v_loss = (((values - ret) ** 2) * valid).sum() / n
    ent = (entropy(logits) * valid).sum() / n
    loss = pg_loss + cfg.value_coef * v_loss - cfg.entropy_coef * ent
    with torch.no_grad():
        clip_frac = (((ratio - 1.0).abs() > cfg.clip_ratio) & valid).sum() / n
        mean_ratio = (ratio * valid).sum() / n
    return loss, {
        "policy_loss": float(pg_loss.detach()), "value_loss": float(v_loss.detach()), "entropy": float(ent.detach()),
        "clip_fraction": float(clip_frac), "mean_ratio": float(mean_ratio),
    }


def ppo_update(policy: RecurrentPolicy, optimizer, batch: RolloutBatch, cfg: PpoConfig, rng) -> dict:
    """Run the configured epochs over shuffled segment minibatches.

    A non-finite loss restores the parameters and optimizer state from before
    this update and reports the offending minibatch in ``aborted``.
    """
    data = _segments(batch, cfg.segment_length)
    adv = data["advantages"]
    if cfg.normalize_advantages:
        v = adv[data["valid"]]
        data["advantages"] = np.where(data["valid"], (adv - v.mean()) / (v.std() + 1e-8), 0.0)
    n = data["h"].shape[0]
    theta = {k: t.clone() for k, t in policy.state_dict().items()}
    opt_state = _clone_opt(optimizer.state_dict())
    stats = []
    for epoch in range(cfg.epochs_per_batch):
        order = rng.permutation(n)
        for k, start in enumerate(range(0, n, cfg.batch_size)):
            idx = np.sort(order[start:start + cfg.batch_size])
            mb = {key: (val[:, idx] if val.ndim >= 2 and key not in ("h", "c") else val[idx])
                  for key, val in data.items()}
            loss, info = ppo_loss(policy, mb, cfg)
            if not torch.isfinite(loss):
                policy.load_state_dict(theta)
                optimizer.load_state_dict(opt_state)
                return {"aborted": f"epoch {epoch} minibatch {k}", "entropy": float("nan"),
                        "clip_fraction": float("nan"), "value_loss": float("nan"), "mean_ratio": float("nan"),
                        "policy_loss": float("nan")}
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            torch.nn.utils.clip_grad_norm_(policy.parameters(), cfg.max_grad_norm)
            optimizer.step()
            stats.append(info)
    if not stats:
        return {"aborted": None, "entropy": float("nan"), "clip_fraction": float("nan"),
                "value_loss": float("nan"), "mean_ratio": float("nan"), "policy_loss": float("nan")}
    try:
        policy.check_finite()
    except NonFiniteError:
        policy.load_state_dict(theta)
        optimizer.load_state_dict(opt_state)
        raise
    out = {key: float(np.mean([s[key] for s in stats])) for key in stats[0]}
    out["aborted"] = None
    return out


def _clone_opt(state: dict) -> dict:
    out = {"param_groups": [dict(g) for g in state["param_groups"]], "state": {}}
    for k, v in state["state"].items():
        out["state"][k] = {kk: (vv.clone() if torch.is_tensor(vv) else vv) for kk, vv in v.items()}
    return out


def collect_rollout(policy: RecurrentPolicy, members, steps: int, *, cfg: PpoConfig | None = None, seed: int = 0,
                    shaping: RewardShaping | None = None) -> RolloutBatch:
    cfg = cfg or PpoConfig()
    return Trainer(policy, members, cfg, seed=seed, shaping=shaping).collect(steps)


def write_metrics(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in METRIC_COLUMNS])


def _fmt(v):
    return repr(float(v)) if isinstance(v, float) else str(v)


def train(policy: RecurrentPolicy, members, cfg: PpoConfig, *, seed: int = 0, shaping=None, metrics_path=None,
          on_metrics=None) -> RecurrentPolicy:
    """Train ``policy`` for ``cfg.iterations`` iterations on ``members``."""
    if cfg.iterations <= 0:
        if metrics_path:
            write_metrics([], metrics_path)
        return policy
    trainer = Trainer(policy, members, cfg, seed=seed, shaping=shaping)
    rows = trainer.run(cfg.iterations, on_metrics)
    if metrics_path:
        write_metrics(rows, metrics_path)
    return policy
