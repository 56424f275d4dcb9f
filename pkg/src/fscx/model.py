"""Explicit finite POMDPs, hidden-model families, and finite-state controllers.

All ids are dense integers. Transitions are stored as a CSR table whose rows
are the flattened (state, action) pairs ``s * num_actions + a``; illegal pairs
have empty rows.
"""

from __future__ import annotations

import enum
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ValidationError

PROB_TOL = 1e-9
# Row deviations below this are treated as decimal round-off and left untouched,
# so that parse(serialize(m)) is the identity.
_RENORM_FLOOR = 1e-12


class Objective(str, enum.Enum):
    REACH_PROB_MAX = "reach-prob-max"
    REACH_REWARD_MAX = "reach-reward-max"
    REACH_REWARD_MIN = "reach-reward-min"

    @property
    def is_reward(self) -> bool:
        return self is not Objective.REACH_PROB_MAX

    @property
    def maximize(self) -> bool:
        return self is not Objective.REACH_REWARD_MIN

    def worse(self, a: float, b: float) -> bool:
        """True if value ``a`` is strictly worse than ``b`` for this objective."""
        return a < b if self.maximize else a > b


def _readonly(arr):
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Pomdp:
    num_states: int
    num_actions: int
    num_observations: int
    initial_state: int
    observation: np.ndarray  # (S,) int64
    legal: np.ndarray  # (S, A) bool
    row_ptr: np.ndarray  # (S*A + 1,) int64
    successor: np.ndarray  # (nnz,) int64
    probability: np.ndarray  # (nnz,) float64
    reward: np.ndarray  # (S, A) float64
    targets: np.ndarray  # sorted int64
    objective: Objective = Objective.REACH_PROB_MAX
    name: str = ""

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "observation", _readonly(np.asarray(self.observation, dtype=np.int64)))
        set_(self, "legal", _readonly(np.asarray(self.legal, dtype=bool)))
        set_(self, "row_ptr", _readonly(np.asarray(self.row_ptr, dtype=np.int64)))
        set_(self, "successor", _readonly(np.asarray(self.successor, dtype=np.int64)))
        set_(self, "probability", _readonly(np.asarray(self.probability, dtype=np.float64)))
        set_(self, "reward", _readonly(np.asarray(self.reward, dtype=np.float64)))
        set_(self, "targets", _readonly(np.unique(np.asarray(self.targets, dtype=np.int64))))
        set_(self, "objective", Objective(self.objective))
        self._validate()

    def _validate(self):
        S, A, Z = self.num_states, self.num_actions, self.num_observations
        if S < 1 or A < 1 or Z < 1:
            raise ValidationError(f"model needs at least one state, action and observation (|S|={S}, |A|={A}, |Z|={Z})")
        if not 0 <= self.initial_state < S:
            raise ValidationError(f"initial state {self.initial_state} out of range")
        if self.observation.shape != (S,):
            raise ValidationError(f"observation map has {self.observation.shape[0]} entries, expected {S}")
        if self.observation.min() < 0 or self.observation.max() >= Z:
            bad = int(np.flatnonzero((self.observation < 0) | (self.observation >= Z))[0])
            raise ValidationError(f"observation of state {bad} out of range")
        if self.legal.shape != (S, A) or self.reward.shape != (S, A):
            raise ValidationError("legal mask and reward table must have shape (|S|, |A|)")
        empty = np.flatnonzero(~self.legal.any(axis=1))
        if empty.size:
            raise ValidationError(f"state {int(empty[0])} has no legal action")
        if self.row_ptr.shape != (S * A + 1,) or self.row_ptr[0] != 0 or self.row_ptr[-1] != self.successor.size:
            raise ValidationError("malformed transition table")
        if self.successor.size and (self.successor.min() < 0 or self.successor.max() >= S):
            raise ValidationError("transition successor out of range")
        if self.probability.size and (self.probability.min() < 0 or not np.isfinite(self.probability).all()):
            raise ValidationError("transition probabilities must be finite and non-negative")
        if not np.isfinite(self.reward).all():
            raise ValidationError("rewards must be finite")
        sums = np.add.reduceat(self.probability, self.row_ptr[:-1]) if self.probability.size else np.zeros(S * A)
        lengths = np.diff(self.row_ptr)
        sums = np.where(lengths > 0, sums, 0.0)
        for row in np.flatnonzero(self.legal.ravel()):
            if abs(sums[row] - 1.0) > PROB_TOL:
                s, a = divmod(int(row), A)
                raise ValidationError(f"row (s={s},a={a}) sums to {sums[row]:.12g}")
        if self.targets.size and (self.targets.min() < 0 or self.targets.max() >= S):
            raise ValidationError("target out of range")
        for g in self.targets:
            for a in np.flatnonzero(self.legal[g]):
                succ, prob = self.row(int(g), int(a))
                stay = prob[succ == g].sum()
                if abs(stay - 1.0) > PROB_TOL:
                    raise ValidationError(f"target {int(g)} is not absorbing under action {int(a)}")

    # -- construction -------------------------------------------------------

    @classmethod
    def build(
        cls,
        num_states: int,
        num_actions: int,
        observation,
        transitions,
        *,
        rewards=None,
        targets: Iterable[int] = (),
        objective=Objective.REACH_PROB_MAX,
        initial_state: int = 0,
        legal=None,
        num_observations: int | None = None,
        name: str = "",
    ) -> Pomdp:
        """Build a validated model from loose Python data.

        ``transitions`` is either a mapping ``(s, a) -> {s': p}`` (or a list of
        ``(s', p)`` pairs) or an iterable of ``(s, a, s', p)`` quadruples.
        ``rewards`` maps ``(s, a) -> r`` or is an (S, A) array. ``legal`` is
        None (everything legal), an (S, A) bool array, or (s, a) pairs; a state
        without any listed pair keeps all actions. Targets without rows get
        self-loops.
        """
        S, A = int(num_states), int(num_actions)
        obs = np.asarray(observation, dtype=np.int64)
        Z = int(num_observations) if num_observations is not None else int(obs.max()) + 1
        legal_mask = _legal_mask(legal, S, A)
        target_arr = np.unique(np.asarray(list(targets), dtype=np.int64))
        if target_arr.size and (target_arr.min() < 0 or target_arr.max() >= S):
            raise ValidationError("target out of range")

        rows: dict[tuple[int, int], dict[int, float]] = {}
        for (s, a), succ in _iter_rows(transitions):
            if not (0 <= s < S and 0 <= a < A):
                raise ValidationError(f"transition row (s={s},a={a}) out of range")
            if not (0 <= succ[0] < S):
                raise ValidationError(f"transition (s={s},a={a}) -> {succ[0]} out of range")
            p = float(succ[1])
            if p < 0 or not np.isfinite(p):
                raise ValidationError(f"row (s={s},a={a}) has invalid probability {succ[1]!r}")
            row = rows.setdefault((s, a), {})
            row[succ[0]] = row.get(succ[0], 0.0) + p
        for g in target_arr:
            for a in np.flatnonzero(legal_mask[g]):
                rows.setdefault((int(g), int(a)), {int(g): 1.0})

        row_ptr = np.zeros(S * A + 1, dtype=np.int64)
        succ_out: list[int] = []
        prob_out: list[float] = []
        for s in range(S):
            for a in range(A):
                flat = s * A + a
                row = rows.get((s, a))
                if row is not None and not legal_mask[s, a]:
                    raise ValidationError(f"transition row given for illegal pair (s={s},a={a})")
                if legal_mask[s, a]:
                    if not row:
                        raise ValidationError(f"row (s={s},a={a}) is empty")
                    items = sorted((k, v) for k, v in row.items() if v > 0.0)
                    total = sum(v for _, v in items)
                    dev = abs(total - 1.0)
                    if dev > PROB_TOL:
                        raise ValidationError(f"row (s={s},a={a}) sums to {total:.12g}")
                    if dev > _RENORM_FLOOR:
                        items = [(k, v / total) for k, v in items]
                    succ_out.extend(k for k, _ in items)
                    prob_out.extend(v for _, v in items)
                row_ptr[flat + 1] = len(succ_out)

        reward = np.zeros((S, A))
        if rewards is not None:
            if isinstance(rewards, Mapping):
                for (s, a), r in rewards.items():
                    if not (0 <= s < S and 0 <= a < A):
                        raise ValidationError(f"reward (s={s},a={a}) out of range")
                    reward[s, a] = float(r)
            else:
                reward = np.asarray(rewards, dtype=np.float64).reshape(S, A).copy()

        return cls(
            num_states=S,
            num_actions=A,
            num_observations=Z,
            initial_state=int(initial_state),
            observation=obs,
            legal=legal_mask,
            row_ptr=row_ptr,
            successor=np.asarray(succ_out, dtype=np.int64),
            probability=np.asarray(prob_out, dtype=np.float64),
            reward=reward,
            targets=target_arr,
            objective=Objective(objective),
            name=name,
        )

    # -- queries ------------------------------------------------------------

    def row(self, s: int, a: int) -> tuple[np.ndarray, np.ndarray]:
        flat = s * self.num_actions + a
        lo, hi = self.row_ptr[flat], self.row_ptr[flat + 1]
        return self.successor[lo:hi], self.probability[lo:hi]

    @property
    def is_target(self) -> np.ndarray:
        mask = np.zeros(self.num_states, dtype=bool)
        mask[self.targets] = True
        return mask

    def transition_matrix(self, a: int) -> sp.csr_matrix:
        """(S, S) matrix of action ``a``; rows of states where ``a`` is illegal are empty."""
        S, A = self.num_states, self.num_actions
        rows = np.repeat(np.arange(S * A), np.diff(self.row_ptr))
        s_of_row, a_of_row = np.divmod(rows, A)
        keep = a_of_row == a
        return sp.csr_matrix(
            (self.probability[keep], (s_of_row[keep], self.successor[keep])), shape=(S, S)
        )

    def legal_by_observation(self) -> np.ndarray:
        """(Z, A) mask of actions legal in every state carrying that observation.

        Observations whose states disagree on legality fall back to the union.
        """
        Z, A = self.num_observations, self.num_actions
        inter = np.ones((Z, A), dtype=bool)
        union = np.zeros((Z, A), dtype=bool)
        for z in range(Z):
            states = self.observation == z
            if states.any():
                inter[z] = self.legal[states].all(axis=0)
                union[z] = self.legal[states].any(axis=0)
            else:
                union[z] = True
        return np.where(inter.any(axis=1, keepdims=True), inter, union)

    def graph(self) -> sp.csr_matrix:
        """State-to-state adjacency over legal actions (boolean structure)."""
        S, A = self.num_states, self.num_actions
        rows = np.repeat(np.arange(S * A), np.diff(self.row_ptr)) // A
        data = np.ones(rows.size, dtype=np.int8)
        return sp.csr_matrix((data, (rows, self.successor)), shape=(S, S))

    def reachable_states(self) -> np.ndarray:
        from scipy.sparse.csgraph import breadth_first_order

        order = breadth_first_order(self.graph(), self.initial_state, directed=True, return_predecessors=False)
        return np.sort(order)

    def dead_ends(self) -> np.ndarray:
        """Mask of states from which no action sequence can reach a target."""
        graph = self.graph().astype(np.int64)
        alive = self.is_target
        frontier = alive.copy()
        while frontier.any():
            frontier = (graph @ frontier.astype(np.int64) > 0) & ~alive
            alive |= frontier
        return ~alive

    def same_signature(self, other: Pomdp) -> bool:
        return (
            self.num_states == other.num_states
            and self.num_actions == other.num_actions
            and self.num_observations == other.num_observations
            and self.initial_state == other.initial_state
            and self.objective == other.objective
            and np.array_equal(self.observation, other.observation)
            and np.array_equal(self.targets, other.targets)
            and np.array_equal(self.legal, other.legal)
        )

    def __eq__(self, other):
        if not isinstance(other, Pomdp):
            return NotImplemented
        return (
            self.same_signature(other)
            and np.array_equal(self.row_ptr, other.row_ptr)
            and np.array_equal(self.successor, other.successor)
            and np.array_equal(self.probability, other.probability)
            and np.array_equal(self.reward, other.reward)
        )

    __hash__ = None


def _legal_mask(legal, S, A) -> np.ndarray:
    if legal is None:
        return np.ones((S, A), dtype=bool)
    arr = np.asarray(legal) if not isinstance(legal, (list, tuple, set)) else None
    if arr is not None and arr.dtype == bool and arr.shape == (S, A):
        return arr.copy()
    mask = np.ones((S, A), dtype=bool)
    listed = np.zeros(S, dtype=bool)
    pairs = list(legal)
    for s, a in pairs:
        if not (0 <= s < S and 0 <= a < A):
            raise ValidationError(f"legal pair (s={s},a={a}) out of range")
        if not listed[s]:
            mask[s] = False
            listed[s] = True
        mask[s, a] = True
    return mask


def _iter_rows(transitions):
    if isinstance(transitions, Mapping):
        for (s, a), row in transitions.items():
            items = row.items() if isinstance(row, Mapping) else row
            for s2, p in items:
                yield (int(s), int(a)), (int(s2), p)
    else:
        for s, a, s2, p in transitions:
            yield (int(s), int(a)), (int(s2), p)


@dataclass(frozen=True, eq=False)
class HmPomdp:
    """A finite family of POMDPs sharing states, actions, observations and targets."""

    members: tuple[Pomdp, ...]
    name: str = ""

    def __post_init__(self):
        members = tuple(self.members)
        object.__setattr__(self, "members", members)
        if not members:
            raise ValidationError("family has no members")
        base = members[0]
        for i, m in enumerate(members[1:], start=1):
            if not base.same_signature(m):
                raise ValidationError(f"member {i} does not share S, s0, A, Z, O, G and objective with member 0")

    @property
    def num_members(self) -> int:
        return len(self.members)

    def member(self, i: int) -> Pomdp:
        return self.members[i]

    def __getattr__(self, item):
        # shared signature attributes delegate to member 0
        if item in {"num_states", "num_actions", "num_observations", "initial_state",
                    "observation", "targets", "objective", "legal", "legal_by_observation"}:
            return getattr(self.members[0], item)
        raise AttributeError(item)

    def __eq__(self, other):
        if not isinstance(other, HmPomdp):
            return NotImplemented
        return len(self.members) == len(other.members) and all(
            a == b for a, b in zip(self.members, other.members)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Fsc:
    """Stochastic Mealy controller.

    ``action_fn[n, z]`` is a distribution over actions and ``memory_fn[n, z]``
    one over next nodes. When ``sigma`` (shape (N, Z, N, A)) is present the
    controller is in combined form and ``action_fn``/``memory_fn`` are its
    marginals; evaluation uses ``sigma`` directly. An all-zero row marks an
    undefined (n, z) pair.
    """

    action_fn: np.ndarray
    memory_fn: np.ndarray
    initial_node: int = 0
    sigma: np.ndarray | None = field(default=None)

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "action_fn", _readonly(np.asarray(self.action_fn, dtype=np.float64)))
        set_(self, "memory_fn", _readonly(np.asarray(self.memory_fn, dtype=np.float64)))
        if self.sigma is not None:
            set_(self, "sigma", _readonly(np.asarray(self.sigma, dtype=np.float64)))
        self._validate()

    @classmethod
    def from_sigma(cls, sigma, initial_node: int = 0) -> Fsc:
        sigma = np.asarray(sigma, dtype=np.float64)
        action_fn, memory_fn = split_sigma(sigma)
        return cls(action_fn, memory_fn, initial_node, sigma)

    @property
    def num_nodes(self) -> int:
        return self.action_fn.shape[0]

    @property
    def num_observations(self) -> int:
        return self.action_fn.shape[1]

    @property
    def num_actions(self) -> int:
        return self.action_fn.shape[2]

    @property
    def combined(self) -> bool:
        return self.sigma is not None

    @property
    def defined(self) -> np.ndarray:
        """(N, Z) mask of pairs with a distribution."""
        return self.action_fn.sum(axis=2) > 0

    def joint(self) -> np.ndarray:
        """sigma if combined, else the product of the two functions."""
        return self.sigma if self.sigma is not None else combine_sigma(self)

    def _validate(self):
        d, m = self.action_fn, self.memory_fn
        if d.ndim != 3 or m.ndim != 3 or d.shape[:2] != m.shape[:2] or m.shape[2] != d.shape[0]:
            raise ValidationError(f"inconsistent controller shapes {d.shape} and {m.shape}")
        N = d.shape[0]
        if not 0 <= self.initial_node < N:
            raise ValidationError(f"initial node {self.initial_node} out of range")
        for name, arr in (("action", d), ("memory", m)):
            if not np.isfinite(arr).all() or arr.min() < -1e-15:
                raise ValidationError(f"{name} function has negative or non-finite entries")
            sums = arr.sum(axis=2)
            bad = (np.abs(sums - 1.0) > PROB_TOL) & (sums != 0)
            if bad.any():
                n, z = map(int, np.argwhere(bad)[0])
                raise ValidationError(f"{name} distribution at (n={n},z={z}) sums to {sums[n, z]:.12g}")
        if not np.array_equal(d.sum(axis=2) > 0, m.sum(axis=2) > 0):
            raise ValidationError("action and memory functions are defined on different (n, z) pairs")
        if self.sigma is not None and self.sigma.shape != (N, d.shape[1], N, d.shape[2]):
            raise ValidationError(f"sigma has shape {self.sigma.shape}, expected {(N, d.shape[1], N, d.shape[2])}")

    def __eq__(self, other):
        if not isinstance(other, Fsc):
            return NotImplemented
        same_sigma = (self.sigma is None and other.sigma is None) or (
            self.sigma is not None and other.sigma is not None and np.array_equal(self.sigma, other.sigma)
        )
        return (
            self.initial_node == other.initial_node
            and np.array_equal(self.action_fn, other.action_fn)
            and np.array_equal(self.memory_fn, other.memory_fn)
            and same_sigma
        )

    __hash__ = None


def combine_sigma(fsc: Fsc) -> np.ndarray:
    """sigma[n, z, n', a] = memory_fn[n, z, n'] * action_fn[n, z, a]."""
    return fsc.memory_fn[:, :, :, None] * fsc.action_fn[:, :, None, :]


def split_sigma(sigma: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Marginalize a combined controller into (action_fn, memory_fn).

    Drops any correlation between the chosen action and the next node; the
    product of the marginals equals ``sigma`` only when it factorizes.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    return sigma.sum(axis=2), sigma.sum(axis=3)


@dataclass(frozen=True, eq=False)
class ProductChain:
    """Markov chain induced by a controller on a POMDP, restricted to reachable pairs.

    Pairs are sorted by (s, n); ``initial`` is the index of (s0, n0).
    """

    states: np.ndarray  # (K, 2) int64 pairs (s, n)
    matrix: sp.csr_matrix  # (K, K) row-stochastic
    reward: np.ndarray  # (K,)
    target: np.ndarray  # (K,) bool
    num_nodes: int
    initial: int = 0

    @property
    def size(self) -> int:
        return self.states.shape[0]
