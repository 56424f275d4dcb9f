"""Self-interpretable Gumbel-softmax surrogate (SIG).

The network sees only the current observation and a memory vector m over
``max_nodes`` entries; the next m is a Gumbel-softmax sample of the memory
logits p. With one-hot m the per-step map (n, z) -> (action dist, next-node
dist) is exactly a finite-state controller, which ``infer_fsc`` reads off.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .dataset import TrajectoryDataset
from .errors import NonFiniteError, ValidationError
from .model import Fsc, HmPomdp, Pomdp

TRUNCATE_BELOW = 1e-4
REPORT_SEQUENCES = 2048  # sequences scored for the post-training report
_MAGIC = "fscx-sig v1"


@dataclass(frozen=True)
class TemperatureSchedule:
    start: float = 1.0
    end: float = 0.1
    total_epochs: int = 1

    def __post_init__(self):
        if self.start <= 0 or self.end <= 0:
            raise ValueError("temperatures must be positive")

    def value(self, epoch: int) -> float:
        """Cosine interpolation from ``start`` (epoch 0) to ``end`` (epoch ``total_epochs``)."""
        if self.total_epochs <= 0:
            return self.end
        x = min(max(epoch / self.total_epochs, 0.0), 1.0)
        return self.end + 0.5 * (self.start - self.end) * (1.0 + math.cos(math.pi * x))


def sample_gumbel(shape, rng: np.random.Generator) -> np.ndarray:
    u = rng.random(shape)
    # keep away from 0 so both logs stay finite
    u = np.clip(u, np.finfo(np.float64).tiny, 1.0 - np.finfo(np.float64).epsneg)
    return -np.log(-np.log(u))


def gumbel_softmax(p, tau: float, g):
    """softmax((p + g) / tau) for given noise ``g``; numpy or torch in, same out."""
    if tau <= 0:
        raise ValueError("temperature must be positive")
    if torch.is_tensor(p):
        return torch.softmax((p + g) / tau, dim=-1)
    y = (np.asarray(p, dtype=np.float64) + g) / tau
    y = y - y.max(axis=-1, keepdims=True)
    e = np.exp(y)
    return e / e.sum(axis=-1, keepdims=True)


def gumbel_softmax_sample(p, tau: float, rng: np.random.Generator):
    p = np.asarray(p, dtype=np.float64)
    if not np.isfinite(p).all():
        raise ValueError("logits must be finite")
    return gumbel_softmax(p, tau, sample_gumbel(p.shape, rng))


class SigNetwork(nn.Module):
    """concat(one-hot z, m) -> dense -> dense -> GRU cell -> (action head, memory encoder).

    The GRU's previous state is an embedding of m, so memory flows only
    through the categorical bottleneck.
    """

    def __init__(self, num_observations: int, num_actions: int, max_nodes: int, *, width: int = 64,
                 hidden: int = 64, dropout: float = 0.2, seed: int = 0, dtype=torch.float32):
        super().__init__()
        if max_nodes < 1:
            raise ValueError("max_nodes must be >= 1")
        self.num_observations = int(num_observations)
        self.num_actions = int(num_actions)
        self.max_nodes = int(max_nodes)
        self.width = width
        self.hidden = hidden
        self.dropout = dropout
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.body = nn.Sequential(
                nn.Linear(num_observations + max_nodes, width), nn.Tanh(),
                nn.Linear(width, width), nn.Tanh(),
            )
            self.memory_embed = nn.Linear(max_nodes, hidden)
            self.gru = nn.GRUCell(width, hidden)
            self.action_head = nn.Sequential(nn.Linear(hidden, width), nn.Tanh(), nn.Linear(width, num_actions))
            self.memory_encoder = nn.Linear(hidden, max_nodes)
        self.to(dtype)

    @property
    def dtype(self):
        return self.memory_encoder.weight.dtype

    def initial_memory(self, batch: int) -> torch.Tensor:
        m = torch.zeros(batch, self.max_nodes, dtype=self.dtype)
        m[:, 0] = 1.0
        return m

    def step(self, obs, m, drop_mask=None):
        """(action logits, memory logits p, hidden h) for one step."""
        z = torch.nn.functional.one_hot(torch.as_tensor(obs).long(), self.num_observations).to(self.dtype)
        x = self.body(torch.cat([z, m], dim=-1))
        h_prev = torch.tanh(self.memory_embed(m))
        if drop_mask is not None:
            h_prev = h_prev * drop_mask
        h = self.gru(x, h_prev)
        return self.action_head(h), self.memory_encoder(h), h

    def unroll(self, obs, tau: float, noise, drop_masks=None):
        """Run (T, B) observations with Gumbel-softmax feedback; ``noise`` is (T, B, N)."""
        obs = torch.as_tensor(obs)
        T, B = obs.shape
        m = self.initial_memory(B)
        out = []
        for t in range(T):
            logits, p, _ = self.step(obs[t], m, None if drop_masks is None else drop_masks[t])
            out.append(logits)
            m = gumbel_softmax(p, tau, noise[t])
        return torch.stack(out)

    def save(self, path):
        header = {"format": _MAGIC, "observations": self.num_observations, "actions": self.num_actions,
                  "max_nodes": self.max_nodes, "width": self.width, "hidden": self.hidden, "dropout": self.dropout,
                  "params": [{"name": n, "shape": list(p.shape)} for n, p in self.named_parameters()]}
        data = torch.cat([p.detach().reshape(-1) for p in self.parameters()]).to(torch.float32).numpy()
        with open(path, "wb") as fh:
            fh.write((json.dumps(header) + "\n").encode())
            fh.write(data.astype("<f4").tobytes())

    @classmethod
    def load(cls, path, dtype=torch.float32) -> SigNetwork:
        with open(path, "rb") as fh:
            header = json.loads(fh.readline().decode())
            raw = fh.read()
        if header.get("format") != _MAGIC:
            raise ValueError(f"{path}: not a SIG checkpoint")
        net = cls(header["observations"], header["actions"], header["max_nodes"], width=header["width"],
                  hidden=header["hidden"], dropout=header["dropout"], dtype=dtype)
        theta = np.frombuffer(raw, dtype="<f4")
        pos = 0
        with torch.no_grad():
            for p in net.parameters():
                k = p.numel()
                if pos + k > theta.size:
                    raise ValueError(f"{path}: truncated parameter data")
                p.copy_(torch.from_numpy(theta[pos:pos + k].astype(np.float32)).reshape(p.shape))
                pos += k
        return net


@dataclass
class SequenceBatch:
    obs: np.ndarray  # (T, B)
    actions: np.ndarray  # (T, B)
    valid: np.ndarray  # (T, B) bool


def make_batch(sequences, max_length: int | None = None) -> SequenceBatch:
    seqs = [s if max_length is None else s[:max_length] for s in sequences]
    T = max(len(s) for s in seqs)
    B = len(seqs)
    obs = np.zeros((T, B), dtype=np.int64)
    act = np.zeros((T, B), dtype=np.int64)
    valid = np.zeros((T, B), dtype=bool)
    for b, s in enumerate(seqs):
        obs[: len(s), b] = s[:, 0]
        act[: len(s), b] = s[:, 1]
        valid[: len(s), b] = True
    return SequenceBatch(obs, act, valid)


def sig_loss(net: SigNetwork, batch: SequenceBatch, tau: float, noise, drop_masks=None) -> torch.Tensor:
    """Mean cross entropy of dataset actions under the action head, over valid steps."""
    logits = net.unroll(batch.obs, tau, noise, drop_masks)
    logp = torch.log_softmax(logits, dim=-1)
    picked = logp.gather(-1, torch.as_tensor(batch.actions).unsqueeze(-1)).squeeze(-1)
    valid = torch.as_tensor(batch.valid)
    return -(picked * valid).sum() / valid.sum()


@dataclass
class SigReport:
    epochs: int
    cross_entropy: float
    agreement: float


@torch.no_grad()
def agreement_rate(net: SigNetwork, data: TrajectoryDataset, *, tau: float = 0.1, seed: int = 0,
                   max_length: int | None = None) -> tuple[float, float]:
    """(cross entropy, fraction of steps where the argmax action equals the dataset action)."""
    net.eval()
    rng = np.random.default_rng(seed)
    batch = make_batch(data.sequences, max_length)
    noise = torch.as_tensor(sample_gumbel(batch.obs.shape + (net.max_nodes,), rng), dtype=net.dtype)
    logits = net.unroll(batch.obs, tau, noise)
    valid = torch.as_tensor(batch.valid)
    logp = torch.log_softmax(logits, -1)
    ce = -(logp.gather(-1, torch.as_tensor(batch.actions).unsqueeze(-1)).squeeze(-1) * valid).sum() / valid.sum()
    hit = (logits.argmax(-1) == torch.as_tensor(batch.actions)) & valid
    return float(ce), float(hit.sum() / valid.sum())


def train_sig(data: TrajectoryDataset, max_nodes: int, epochs: int, schedule: TemperatureSchedule | None = None,
              rng: np.random.Generator | int | None = 0, *, net: SigNetwork | None = None, batch_size: int = 64,
              max_length: int = 64, learning_rate: float = 3e-3, report: bool = True):
    """Clone ``data`` into a SIG network (new, or ``net`` to continue training).

    One epoch is one Adam step on ``batch_size`` sequences drawn without
    replacement (reshuffled when exhausted), each cut to ``max_length`` steps.
    Returns (net, SigReport).
    """
    if max_nodes < 1:
        raise ValueError("max_nodes must be >= 1")
    if epochs < 0:
        raise ValueError("epochs must be >= 0")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    if net is None:
        net = SigNetwork(data.num_observations, data.num_actions, max_nodes, seed=int(rng.integers(2**31)))
    elif net.max_nodes != max_nodes:
        raise ValidationError(f"network has {net.max_nodes} memory nodes, asked for {max_nodes}")
    schedule = schedule or TemperatureSchedule(total_epochs=epochs)
    opt = torch.optim.Adam(net.parameters(), lr=learning_rate)
    seqs = data.sequences
    order = rng.permutation(len(seqs))
    pos = 0
    net.train()
    for epoch in range(epochs):
        if pos >= len(order):
            order, pos = rng.permutation(len(seqs)), 0
        idx = order[pos:pos + batch_size]
        pos += batch_size
        batch = make_batch([seqs[i] for i in idx], max_length)
        T, B = batch.obs.shape
        noise = torch.as_tensor(sample_gumbel((T, B, max_nodes), rng), dtype=net.dtype)
        keep = rng.random((T, B, net.hidden)) >= net.dropout
        drop = torch.as_tensor(keep / (1.0 - net.dropout), dtype=net.dtype) if net.dropout > 0 else None
        loss = sig_loss(net, batch, schedule.value(epoch), noise, drop)
        if not torch.isfinite(loss):
            raise NonFiniteError(f"non-finite cloning loss at epoch {epoch}")
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
    net.eval()
    if not report:
        return net, None
    sub = TrajectoryDataset(data.sequences[:REPORT_SEQUENCES], data.num_observations, data.num_actions)
    ce, agree = agreement_rate(net, sub, tau=schedule.end, max_length=max_length)
    return net, SigReport(epochs, ce, agree)


def _truncate(dist: np.ndarray, floor: float) -> np.ndarray:
    d = np.where(dist < floor, 0.0, dist)
    return d / d.sum(axis=-1, keepdims=True)


@torch.no_grad()
def infer_fsc(net: SigNetwork, legal=None, *, truncate: float = TRUNCATE_BELOW) -> Fsc:
    """Read the controller off the network with one-hot memory inputs.

    ``legal`` ((Z, A) bool, e.g. ``Pomdp.legal_by_observation()``) removes
    illegal actions before renormalizing; entries below ``truncate`` are
    dropped and the rest renormalized.
    """
    net.eval()
    N, Z, A = net.max_nodes, net.num_observations, net.num_actions
    n_idx, z_idx = np.divmod(np.arange(N * Z), Z)
    m = torch.zeros(N * Z, N, dtype=net.dtype)
    m[torch.arange(N * Z), torch.as_tensor(n_idx)] = 1.0
    logits, p, _ = net.step(torch.as_tensor(z_idx), m)
    lg = logits.double().numpy()
    if legal is not None:
        mask = np.asarray(legal, dtype=bool)[z_idx]
        mask[~mask.any(axis=1)] = True
        lg = np.where(mask, lg, -np.inf)
    delta = np.exp(lg - lg.max(axis=1, keepdims=True))
    delta /= delta.sum(axis=1, keepdims=True)
    pm = p.double().numpy()
    eta = np.exp(pm - pm.max(axis=1, keepdims=True))
    eta /= eta.sum(axis=1, keepdims=True)
    if truncate > 0:
        delta, eta = _truncate(delta, truncate), _truncate(eta, truncate)
    return Fsc(delta.reshape(N, Z, A), eta.reshape(N, Z, N), 0)


def _members(model):
    if isinstance(model, HmPomdp):
        return [model.member(i) for i in range(model.num_members)]
    if isinstance(model, Pomdp):
        return [model]
    return list(model)


def reachable_nodes(fsc: Fsc, model) -> np.ndarray:
    """Sorted node ids occurring in the reachable product chain of any member."""
    from .verify import build_product

    seen = set()
    for m in _members(model):
        seen.update(np.unique(build_product(m, fsc).states[:, 1]).tolist())
    return np.array(sorted(seen), dtype=np.int64)


def prune_unreachable(fsc: Fsc, model) -> Fsc:
    """Drop nodes no reachable product pair visits; ids are compacted in order.

    Rows of kept nodes that can only move to a dropped node are never used
    on the model; their memory update becomes a self-loop.
    """
    keep = reachable_nodes(fsc, model)
    if keep.size == fsc.num_nodes:
        return fsc
    n0 = int(np.searchsorted(keep, fsc.initial_node))
    delta = np.array(fsc.action_fn[keep])
    eta = np.array(fsc.memory_fn[keep][:, :, keep])
    dropped = np.setdiff1d(np.arange(fsc.num_nodes), keep)
    # only rows never visited on the model can move to a dropped node
    lost = fsc.memory_fn[keep][:, :, dropped].sum(axis=2) > 0
    if fsc.sigma is not None:
        sigma = np.array(fsc.sigma[keep][:, :, keep])
        for n, z in zip(*np.nonzero(lost)):
            sigma[n, z] = 0.0
            sigma[n, z, n] = fsc.action_fn[keep[n], z]
        return Fsc.from_sigma(sigma, n0)
    for n, z in zip(*np.nonzero(lost)):
        eta[n, z] = 0.0
        eta[n, z, n] = 1.0
    return Fsc(delta, eta, n0)
