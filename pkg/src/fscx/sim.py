"""Vectorized simulation of one or more POMDPs.

Every member of the simulated set is stacked into one global transition
table so that a single kernel call advances all lanes. Each lane owns an
independent counter-based random stream keyed by (seed, lane, step), so a
rollout depends only on the seed and the actions, never on scheduling.

Batch policies used with the simulator follow a small protocol:

``reset(lanes)``
    start fresh for ``lanes`` parallel episodes;
``act(obs, legal)``
    return one action id per lane given observation ids and an (L, A) mask of
    actions legal for each lane's observation;
``reset_lanes(mask)``
    forget the memory of lanes whose episode just ended.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .dataset import TrajectoryDataset
from .errors import UndefinedControllerRow, ValidationError
from .kernels import FAILED, GOAL, RUNNING, TRUNCATED
from .model import Fsc, Objective, Pomdp

MAX_STEPS = 600
DEFAULT_LANES = 256
GEOMETRIC_Q = 0.4

__all__ = [
    "BatchSimulator", "RewardShaping", "ShapingCategory", "StepResult", "allocate_simulators",
    "shape_reward", "evaluate_empirical", "sample_dataset", "FscPolicy", "UniformPolicy",
    "RUNNING", "GOAL", "TRUNCATED", "FAILED",
]


class ShapingCategory(str, enum.Enum):
    IDENTITY = "identity"
    REACHABILITY_MAX = "reachability-max"
    REWARD_MAX = "reward-max"
    REWARD_MIN = "reward-min"
    COMBINED = "combined"


@dataclass(frozen=True)
class RewardShaping:
    """Training-time reward transform.

    shaped = raw * reward_multiplier, plus ``goal_reward`` on reaching a
    target and ``truncation_penalty`` when an episode is cut off.
    """

    category: ShapingCategory = ShapingCategory.IDENTITY
    goal_reward: float = 0.0
    reward_multiplier: float = 1.0
    truncation_penalty: float = 0.0

    @classmethod
    def for_category(cls, category) -> RewardShaping:
        category = ShapingCategory(category)
        table = {
            ShapingCategory.IDENTITY: (0.0, 1.0, 0.0),
            ShapingCategory.REACHABILITY_MAX: (40.0, 0.0, 0.0),
            ShapingCategory.REWARD_MAX: (1.0, 10.0, 0.0),
            ShapingCategory.REWARD_MIN: (2.0, -10.0, 0.0),
        }
        if category not in table:
            raise ValueError("combined shaping needs explicit goal/multiplier/penalty values")
        goal, mult, trunc = table[category]
        return cls(category, goal, mult, trunc)

    @classmethod
    def for_objective(cls, objective) -> RewardShaping:
        return cls.for_category({
            Objective.REACH_PROB_MAX: ShapingCategory.REACHABILITY_MAX,
            Objective.REACH_REWARD_MAX: ShapingCategory.REWARD_MAX,
            Objective.REACH_REWARD_MIN: ShapingCategory.REWARD_MIN,
        }[Objective(objective)])

    @classmethod
    def combined(cls, goal_reward, reward_multiplier, truncation_penalty) -> RewardShaping:
        return cls(ShapingCategory.COMBINED, float(goal_reward), float(reward_multiplier), float(truncation_penalty))

    @property
    def is_identity(self) -> bool:
        return self.goal_reward == 0.0 and self.reward_multiplier == 1.0 and self.truncation_penalty == 0.0

    def apply(self, raw: np.ndarray, done: np.ndarray) -> np.ndarray:
        """Vectorized shaping; FAILED (dead end) counts as a truncation."""
        out = np.asarray(raw, dtype=np.float64) * self.reward_multiplier
        out = out + np.where(done == GOAL, self.goal_reward, 0.0)
        out = out + np.where((done == TRUNCATED) | (done == FAILED), self.truncation_penalty, 0.0)
        return out


def shape_reward(raw: float, event: str, cfg: RewardShaping) -> float:
    """Shaped reward of one transition; ``event`` is 'step', 'goal' or 'truncation'."""
    code = {"step": RUNNING, "goal": GOAL, "truncation": TRUNCATED}[event]
    return float(cfg.apply(np.array([raw]), np.array([code]))[0])


def allocate_simulators(num_members: int, total: int, q: float = GEOMETRIC_Q) -> list[int]:
    """Split ``total`` lanes over members with geometrically decaying shares.

    The newest member (last) gets total*(1-q)/(1-q^L); every earlier member gets
    q times its successor's share, floored and at least 1. The newest member
    absorbs the rounding remainder.
    """
    L, S = int(num_members), int(total)
    if L < 1:
        raise ValueError("need at least one member")
    if S < L:
        raise ValueError(f"cannot give {L} members at least one of {S} lanes")
    if not 0.0 < q < 1.0:
        raise ValueError("q must lie in (0, 1)")
    shares = [0.0] * L
    shares[-1] = S * (1.0 - q) / (1.0 - q**L)
    for i in range(L - 2, -1, -1):
        shares[i] = q * shares[i + 1]
    counts = [max(1, math.floor(x)) for x in shares[:-1]]
    # keep the newest member at least one lane
    while S - sum(counts) < 1:
        counts[counts.index(max(counts))] -= 1
    counts.append(S - sum(counts))
    return counts


@dataclass
class StepResult:
    observation: np.ndarray  # next observation (after any auto-reset)
    reward: np.ndarray  # shaped
    raw_reward: np.ndarray
    done: np.ndarray  # RUNNING / GOAL / TRUNCATED / FAILED
    replaced: np.ndarray  # bool, diagnostics only
    action: np.ndarray  # executed action
    landed: np.ndarray  # member-local state reached before any reset
    member: np.ndarray  # member id per lane
    shaped_is_raw: bool


class BatchSimulator:
    """Lanes stepping through a set of member POMDPs in lockstep.

    ``counts[i]`` lanes run member ``i``; by default all lanes run a single
    member, or the geometric allocation for several. With ``fail_dead_ends``
    (default: on for reach-prob-max) an episode entering a state from which no
    target is reachable ends immediately with code FAILED.
    """

    def __init__(self, members, counts=None, *, total_lanes: int | None = None, max_steps: int = MAX_STEPS,
                 seed: int = 0, shaping: RewardShaping | None = None, fail_dead_ends: bool | None = None):
        members = list(members) if not isinstance(members, Pomdp) else [members]
        if not members:
            raise ValidationError("simulator needs at least one member")
        base = members[0]
        for i, m in enumerate(members[1:], start=1):
            if not base.same_signature(m):
                raise ValidationError(f"simulated member {i} has a different signature")
        if counts is None:
            total = total_lanes if total_lanes is not None else DEFAULT_LANES
            counts = allocate_simulators(len(members), total)
        counts = [int(c) for c in counts]
        if len(counts) != len(members) or min(counts) < 0:
            raise ValidationError("one non-negative lane count per member required")
        if total_lanes is not None and sum(counts) != total_lanes:
            raise ValidationError(f"lane counts sum to {sum(counts)}, expected {total_lanes}")
        self.members = members
        self.counts = counts
        self.num_lanes = sum(counts)
        if self.num_lanes < 1:
            raise ValidationError("simulator has no lanes")
        self.max_steps = int(max_steps)
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.objective = base.objective
        self.shaping = shaping if shaping is not None else RewardShaping()
        if fail_dead_ends is None:
            fail_dead_ends = self.objective is Objective.REACH_PROB_MAX
        self.num_actions = base.num_actions
        self.num_observations = base.num_observations
        self._build_tables(fail_dead_ends)
        self.lane_member = np.repeat(np.arange(len(members)), counts).astype(np.int64)
        self.lane_initial = self.offsets[self.lane_member] + base.initial_state
        self.reset()

    def _build_tables(self, fail_dead_ends):
        A = self.num_actions
        S = self.members[0].num_states
        M = len(self.members)
        self.offsets = np.arange(M, dtype=np.int64) * S
        legal = np.concatenate([m.legal.ravel() for m in self.members]).astype(np.uint8)
        lg = legal.reshape(-1, A).astype(bool)
        self.legal = legal
        self.legal_ptr = np.concatenate([[0], np.cumsum(lg.sum(axis=1))]).astype(np.int64)
        self.legal_list = np.nonzero(lg)[1].astype(np.int64)
        row_ptrs, succ, cum = [0], [], []
        base_nnz = 0
        for k, m in enumerate(self.members):
            row_ptrs.append(m.row_ptr[1:] + base_nnz)
            base_nnz += m.successor.size
            succ.append(m.successor + self.offsets[k])
            # within-row running sums; the last entry of every row is exactly 1
            lens = np.diff(m.row_ptr)
            offset = np.arange(m.successor.size) - np.repeat(m.row_ptr[:-1], lens)
            within = m.probability.copy()
            for k in range(1, int(lens.max(initial=0))):
                at = np.flatnonzero(offset == k)
                within[at] += within[at - 1]
            within[m.row_ptr[1:][lens > 0] - 1] = 1.0
            cum.append(within)
        self.row_ptr = np.concatenate([np.asarray(r, dtype=np.int64).ravel() for r in row_ptrs])
        self.successor = np.concatenate(succ).astype(np.int64)
        within = np.concatenate(cum)
        row_of_entry = np.repeat(np.arange(self.row_ptr.size - 1), np.diff(self.row_ptr))
        self.cumkey = row_of_entry.astype(np.float64) + within
        self.reward = np.concatenate([m.reward.ravel() for m in self.members]).astype(np.float64)
        self.observation = np.concatenate([m.observation for m in self.members]).astype(np.int64)
        term = np.zeros(M * S, dtype=np.int8)
        for k, m in enumerate(self.members):
            block = term[k * S:(k + 1) * S]
            if fail_dead_ends:
                block[m.dead_ends()] = FAILED
            block[m.targets] = GOAL
        self.terminal = term
        self.obs_legal = self.members[0].legal_by_observation()

    def reset(self, seed: int | None = None):
        if seed is not None:
            self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        L = self.num_lanes
        self.state = self.lane_initial.copy()
        self.steps = np.zeros(L, dtype=np.int64)
        self.counter = np.zeros(L, dtype=np.uint64)
        self.raw_return = np.zeros(L)
        self.shaped_return = np.zeros(L)
        self._completed_raw: list[float] = []
        self._completed_shaped: list[float] = []
        self._completed_goal: list[bool] = []
        return self.observations()

    def observations(self) -> np.ndarray:
        return self.observation[self.state]

    def legal_mask(self) -> np.ndarray:
        """(L, A) actions legal for each lane's current observation (what an agent may know)."""
        return self.obs_legal[self.observations()]

    def local_state(self) -> np.ndarray:
        return self.state - self.offsets[self.lane_member]

    def step(self, actions) -> StepResult:
        actions = np.ascontiguousarray(actions, dtype=np.int64)
        L = self.num_lanes
        if actions.shape != (L,):
            raise ValidationError(f"got {actions.shape[0] if actions.ndim else 1} actions for {L} lanes")
        if actions.min() < 0 or actions.max() >= self.num_actions:
            raise ValidationError("action id out of range")
        exec_a = np.empty(L, dtype=np.int64)
        raw = np.empty(L)
        done = np.empty(L, dtype=np.int8)
        replaced = np.empty(L, dtype=np.uint8)
        landed = np.empty(L, dtype=np.int64)
        kernels.batch_step(
            self.state, self.steps, self.counter, actions, self.lane_initial, self.seed, self.num_actions,
            self.legal, self.legal_ptr, self.legal_list, self.row_ptr, self.cumkey, self.successor,
            self.reward, self.terminal, self.max_steps, exec_a, raw, done, replaced, landed,
        )
        shaped = self.shaping.apply(raw, done)
        self.raw_return += raw
        self.shaped_return += shaped
        fin = done != RUNNING
        if fin.any():
            self._completed_raw.extend(self.raw_return[fin].tolist())
            self._completed_shaped.extend(self.shaped_return[fin].tolist())
            self._completed_goal.extend((done[fin] == GOAL).tolist())
            self.raw_return[fin] = 0.0
            self.shaped_return[fin] = 0.0
        return StepResult(
            observation=self.observations(),
            reward=shaped,
            raw_reward=raw,
            done=done,
            replaced=replaced.astype(bool),
            action=exec_a,
            landed=landed - self.offsets[self.lane_member],
            member=self.lane_member,
            shaped_is_raw=self.shaping.is_identity,
        )

    def pop_completed(self) -> dict:
        """Returns of episodes finished since the last call."""
        out = {
            "raw": np.asarray(self._completed_raw),
            "shaped": np.asarray(self._completed_shaped),
            "goal": np.asarray(self._completed_goal, dtype=bool),
        }
        self._completed_raw, self._completed_shaped, self._completed_goal = [], [], []
        return out


# -- simple batch policies ---------------------------------------------------


class UniformPolicy:
    """Uniformly random actions, optionally restricted to the legal mask."""

    def __init__(self, num_actions: int, seed: int = 0, masked: bool = True):
        self.num_actions = num_actions
        self.masked = masked
        self.rng = np.random.default_rng(seed)

    def reset(self, lanes):
        pass

    def act(self, obs, legal):
        L = len(obs)
        weights = legal.astype(np.float64) if self.masked else np.ones((L, self.num_actions))
        return _sample_rows(weights / weights.sum(axis=1, keepdims=True), self.rng)

    def reset_lanes(self, mask):
        pass


def _sample_rows(probs: np.ndarray, rng) -> np.ndarray:
    cum = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0]) * cum[:, -1]
    idx = (cum <= u[:, None]).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)


class FscPolicy:
    """Runs a finite-state controller lane by lane."""

    def __init__(self, fsc: Fsc, seed: int = 0):
        self.fsc = fsc
        N, Z, A = fsc.num_nodes, fsc.num_observations, fsc.num_actions
        self._joint = fsc.joint().reshape(N, Z, N * A)
        self.rng = np.random.default_rng(seed)
        self.node = np.zeros(0, dtype=np.int64)

    def reset(self, lanes):
        self.node = np.full(lanes, self.fsc.initial_node, dtype=np.int64)

    def act(self, obs, legal=None):
        rows = self._joint[self.node, obs]
        totals = rows.sum(axis=1)
        if (totals <= 0).any():
            i = int(np.flatnonzero(totals <= 0)[0])
            raise UndefinedControllerRow(int(self.node[i]), int(obs[i]))
        pick = _sample_rows(rows, self.rng)
        self.node, action = np.divmod(pick, self.fsc.num_actions)
        return action

    def reset_lanes(self, mask):
        self.node[mask] = self.fsc.initial_node


# -- evaluation and data collection --------------------------------------------


@dataclass
class EmpiricalValue:
    mean: float
    stderr: float
    episodes: int
    values: np.ndarray
    goal_rate: float


def evaluate_empirical(policy, members, episodes: int = 512, *, seed: int = 0, max_steps: int = MAX_STEPS,
                       fail_dead_ends: bool | None = None) -> EmpiricalValue:
    """Monte-Carlo value of a batch policy from raw (unshaped) rewards.

    One lane per episode; members are assigned round-robin. Truncated
    episodes count as failures: value 0 for reachability, accumulated reward
    for reward objectives.
    """
    members = [members] if isinstance(members, Pomdp) else list(members)
    M = len(members)
    counts = [episodes // M + (1 if i < episodes % M else 0) for i in range(M)]
    sim = BatchSimulator(members, counts, max_steps=max_steps, seed=seed, fail_dead_ends=fail_dead_ends)
    L = sim.num_lanes
    policy.reset(L)
    obs = sim.observations()
    active = np.ones(L, dtype=bool)
    total = np.zeros(L)
    reached = np.zeros(L, dtype=bool)
    while active.any():
        res = sim.step(policy.act(obs, sim.legal_mask()))
        total += np.where(active, res.raw_reward, 0.0)
        fin = active & (res.done != RUNNING)
        reached |= fin & (res.done == GOAL)
        active &= ~fin
        policy.reset_lanes(res.done != RUNNING)
        obs = res.observation
    values = reached.astype(np.float64) if not sim.objective.is_reward else total
    n = values.size
    stderr = float(values.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return EmpiricalValue(float(values.mean()), stderr, n, values, float(reached.mean()))


def sample_dataset(policy, members, *, lanes: int = DEFAULT_LANES, steps: int = 4001, seed: int = 0,
                   counts=None, max_steps: int = MAX_STEPS) -> TrajectoryDataset:
    """Roll ``policy`` for ``steps`` steps on every lane and cut the stream into episodes."""
    members = [members] if isinstance(members, Pomdp) else list(members)
    if counts is None:
        counts = allocate_simulators(len(members), lanes)
    sim = BatchSimulator(members, counts, max_steps=max_steps, seed=seed, fail_dead_ends=False)
    L = sim.num_lanes
    policy.reset(L)
    obs = sim.observations()
    zs = np.empty((steps, L), dtype=np.int64)
    acts = np.empty((steps, L), dtype=np.int64)
    ends = np.zeros((steps, L), dtype=bool)
    for t in range(steps):
        res = sim.step(policy.act(obs, sim.legal_mask()))
        zs[t], acts[t] = obs, res.action
        ends[t] = res.done != RUNNING
        policy.reset_lanes(ends[t])
        obs = res.observation
    seqs = []
    for lane in range(L):
        cuts = np.flatnonzero(ends[:, lane]) + 1
        pairs = np.stack([zs[:, lane], acts[:, lane]], axis=1)
        for chunk in np.split(pairs, cuts):
            if len(chunk):
                seqs.append(chunk)
    meta = {"seed": seed, "lanes": L, "steps": steps, "members": len(members)}
    return TrajectoryDataset(seqs, sim.num_observations, sim.num_actions, meta)
