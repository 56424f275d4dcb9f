"""Recurrent actor-critic: one-hot observation -> dense(64) -> LSTM(32) -> dense(64) -> heads.

Parameters live in ordinary torch modules; ``flat_parameters`` and
``named_slices`` expose them as one vector for checkpoints and gradient
checks.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import NonFiniteError

HIDDEN = 32
WIDTH = 64
_MAGIC = "fscx-policy v1"


@dataclass
class HiddenState:
    h: torch.Tensor  # (B, HIDDEN)
    c: torch.Tensor

    @classmethod
    def zeros(cls, batch: int, dtype=torch.float32, size: int = HIDDEN) -> HiddenState:
        return cls(torch.zeros(batch, size, dtype=dtype), torch.zeros(batch, size, dtype=dtype))

    def masked(self, reset: torch.Tensor) -> HiddenState:
        """Zero the rows where ``reset`` is true."""
        keep = (~reset).to(self.h.dtype).unsqueeze(1)
        return HiddenState(self.h * keep, self.c * keep)

    def detach(self) -> HiddenState:
        return HiddenState(self.h.detach(), self.c.detach())

    def index(self, idx) -> HiddenState:
        return HiddenState(self.h[idx], self.c[idx])


class RecurrentPolicy(nn.Module):
    def __init__(self, num_observations: int, num_actions: int, *, seed: int = 0, dtype=torch.float32,
                 hidden: int = HIDDEN, width: int = WIDTH):
        super().__init__()
        self.num_observations = int(num_observations)
        self.num_actions = int(num_actions)
        self.hidden_size = hidden
        self.width = width
        self.encoder_in = nn.Linear(num_observations, width)
        self.lstm = nn.LSTMCell(width, hidden)
        self.encoder_out = nn.Linear(hidden, width)
        self.actor = nn.Linear(width, num_actions)
        self.critic = nn.Linear(width, 1)
        self.to(dtype)
        self.reinitialize(seed)

    @property
    def dtype(self):
        return self.actor.weight.dtype

    def reinitialize(self, seed: int = 0):
        """Orthogonal recurrent kernel, fan-in uniform dense kernels, zero biases, small actor head."""
        g = torch.Generator().manual_seed(int(seed))
        with torch.no_grad():
            for lin in (self.encoder_in, self.encoder_out, self.actor, self.critic):
                bound = 1.0 / math.sqrt(lin.in_features)
                lin.weight.copy_(torch.rand(lin.weight.shape, generator=g, dtype=self.dtype) * 2 * bound - bound)
                lin.bias.zero_()
            self.actor.weight.mul_(0.01)
            bound = 1.0 / math.sqrt(self.lstm.input_size)
            w_ih = self.lstm.weight_ih
            w_ih.copy_(torch.rand(w_ih.shape, generator=g, dtype=self.dtype) * 2 * bound - bound)
            H = self.hidden_size
            for k in range(4):
                a = torch.randn(H, H, generator=g, dtype=torch.float64)
                q, r = torch.linalg.qr(a)
                q = q * torch.sign(torch.diagonal(r)).unsqueeze(0)
                self.lstm.weight_hh[k * H:(k + 1) * H].copy_(q.to(self.dtype))
            self.lstm.bias_ih.zero_()
            self.lstm.bias_hh.zero_()

    def zero_(self):
        with torch.no_grad():
            for p in self.parameters():
                p.zero_()
        return self

    def initial_state(self, batch: int) -> HiddenState:
        return HiddenState.zeros(batch, self.dtype, self.hidden_size)

    def _encode(self, obs: torch.Tensor) -> torch.Tensor:
        return torch.nn.functional.one_hot(obs.long(), self.num_observations).to(self.dtype)

    def step(self, obs, hidden: HiddenState):
        """One time step for a batch. Returns (logits (B, A), value (B,), hidden')."""
        x = torch.tanh(self.encoder_in(self._encode(torch.as_tensor(obs))))
        h, c = self.lstm(x, (hidden.h, hidden.c))
        y = torch.tanh(self.encoder_out(h))
        return self.actor(y), self.critic(y).squeeze(-1), HiddenState(h, c)

    def forward(self, obs, hidden: HiddenState):
        return self.step(obs, hidden)

    def unroll(self, obs, hidden: HiddenState, resets=None, keep_hidden: bool = False):
        """Run a (T, B) observation block; ``resets[t]`` zeroes the state before step t.

        Returns (logits (T, B, A), values (T, B), final hidden[, per-step h list]).
        """
        obs = torch.as_tensor(obs)
        T = obs.shape[0]
        logits, values, hs = [], [], []
        for t in range(T):
            if resets is not None:
                hidden = hidden.masked(torch.as_tensor(resets[t], dtype=torch.bool))
            lg, v, hidden = self.step(obs[t], hidden)
            if keep_hidden:
                hidden.h.retain_grad()
                hs.append(hidden.h)
            logits.append(lg)
            values.append(v)
        out = (torch.stack(logits), torch.stack(values), hidden)
        return out + (hs,) if keep_hidden else out

    # -- flat view ---------------------------------------------------------------

    def named_slices(self) -> list[tuple[str, slice, tuple]]:
        out, pos = [], 0
        for name, p in self.named_parameters():
            out.append((name, slice(pos, pos + p.numel()), tuple(p.shape)))
            pos += p.numel()
        return out

    def flat_parameters(self) -> torch.Tensor:
        return torch.cat([p.detach().reshape(-1) for p in self.parameters()])

    def set_flat_parameters(self, theta):
        theta = torch.as_tensor(theta, dtype=self.dtype)
        with torch.no_grad():
            for (_, sl, shape), p in zip(self.named_slices(), self.parameters()):
                p.copy_(theta[sl].reshape(shape))

    def flat_gradient(self) -> torch.Tensor:
        return torch.cat([
            (p.grad if p.grad is not None else torch.zeros_like(p)).reshape(-1) for p in self.parameters()
        ])

    def check_finite(self):
        for name, p in self.named_parameters():
            if not torch.isfinite(p).all():
                raise NonFiniteError(f"non-finite value in parameter slice '{name}'")

    # -- checkpoints ---------------------------------------------------------------

    def save(self, path):
        header = {
            "format": _MAGIC,
            "observations": self.num_observations,
            "actions": self.num_actions,
            "hidden": self.hidden_size,
            "width": self.width,
            "params": [{"name": n, "shape": list(s)} for n, _, s in self.named_slices()],
        }
        data = self.flat_parameters().to(torch.float32).numpy().astype("<f4")
        with open(path, "wb") as fh:
            fh.write((json.dumps(header) + "\n").encode())
            fh.write(data.tobytes())

    @classmethod
    def load(cls, path, dtype=torch.float32) -> RecurrentPolicy:
        with open(path, "rb") as fh:
            header = json.loads(fh.readline().decode())
            raw = fh.read()
        if header.get("format") != _MAGIC:
            raise ValueError(f"{path}: not a policy checkpoint")
        pol = cls(header["observations"], header["actions"], dtype=dtype, hidden=header["hidden"],
                  width=header["width"])
        expected = [(n, tuple(s)) for n, _, s in pol.named_slices()]
        stored = [(p["name"], tuple(p["shape"])) for p in header["params"]]
        if expected != stored:
            raise ValueError(f"{path}: parameter layout does not match this architecture")
        theta = np.frombuffer(raw, dtype="<f4")
        if theta.size != sum(math.prod(s) for _, s in stored):
            raise ValueError(f"{path}: truncated parameter data")
        pol.set_flat_parameters(torch.from_numpy(theta.astype(np.float32)).to(dtype))
        pol.check_finite()
        return pol


def log_softmax_np(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def sample_action(logits, rng: np.random.Generator, legal=None):
    """Sample one action per row of ``logits``; returns (actions, log_probs).

    With ``legal`` (bool mask) illegal actions get zero probability and the
    log-probability is that of the masked distribution.
    """
    lg = np.asarray(logits, dtype=np.float64)
    squeeze = lg.ndim == 1
    lg = np.atleast_2d(lg)
    if not np.isfinite(lg).all():
        raise NonFiniteError("non-finite action logits")
    if legal is not None:
        lg = np.where(np.atleast_2d(legal), lg, -np.inf)
    logp = log_softmax_np(lg)
    cum = np.cumsum(np.exp(logp), axis=1)
    u = rng.random(lg.shape[0]) * cum[:, -1]
    a = np.minimum((cum <= u[:, None]).sum(axis=1), lg.shape[1] - 1)
    # never land on a zero-probability action through round-off
    bad = ~np.isfinite(logp[np.arange(a.size), a])
    if bad.any():
        a[bad] = np.argmax(logp[bad], axis=1)
    lp = logp[np.arange(a.size), a]
    return (int(a[0]), float(lp[0])) if squeeze else (a, lp)


def entropy(logits: torch.Tensor) -> torch.Tensor:
    logp = torch.log_softmax(logits, dim=-1)
    return -(logp.exp() * logp).sum(-1)


def bptt_gradient(policy: RecurrentPolicy, loss_fn, obs, hidden: HiddenState | None = None, resets=None):
    """Gradient of ``loss_fn(logits, values)`` through an unrolled segment.

    ``obs`` is (T, B). Returns the flat gradient; raises NonFiniteError naming
    the first time step whose hidden-state gradient is not finite.
    """
    obs = torch.as_tensor(obs)
    if hidden is None:
        hidden = policy.initial_state(obs.shape[1])
    policy.zero_grad(set_to_none=True)
    logits, values, _, hs = policy.unroll(obs, hidden, resets, keep_hidden=True)
    loss = loss_fn(logits, values)
    if not torch.is_tensor(loss) or not loss.requires_grad:
        return torch.zeros_like(policy.flat_parameters())
    loss.backward()
    grad = policy.flat_gradient()
    if not torch.isfinite(grad).all():
        for t, h in enumerate(hs):
            if h.grad is not None and not torch.isfinite(h.grad).all():
                raise NonFiniteError(f"non-finite gradient at time step {t}")
        raise NonFiniteError("non-finite gradient")
    return grad


class RnnPolicy:
    """Batch-policy adapter around a RecurrentPolicy (see ``fscx.sim``)."""

    def __init__(self, policy: RecurrentPolicy, seed: int = 0, masked: bool = False, greedy: bool = False):
        self.policy = policy
        self.masked = masked
        self.greedy = greedy
        self.rng = np.random.default_rng(seed)
        self.hidden = None

    def reset(self, lanes):
        self.hidden = self.policy.initial_state(lanes)

    @torch.no_grad()
    def act(self, obs, legal=None):
        logits, _, self.hidden = self.policy.step(torch.as_tensor(obs), self.hidden)
        lg = logits.double().numpy()
        mask = legal if self.masked else None
        if self.greedy:
            if mask is not None:
                lg = np.where(mask, lg, -np.inf)
            return np.argmax(lg, axis=1)
        return sample_action(lg, self.rng, mask)[0]

    def reset_lanes(self, mask):
        if np.any(mask):
            self.hidden = self.hidden.masked(torch.as_tensor(mask, dtype=torch.bool))

