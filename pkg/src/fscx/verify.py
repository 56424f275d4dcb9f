"""Exact evaluation of finite-state controllers.

A controller running on a POMDP induces a Markov chain over (state, node)
pairs. ``build_product`` constructs the reachable part of that chain and
``solve_value`` computes reachability probabilities or expected rewards on it
with in-place Gauss-Seidel sweeps after a qualitative graph precomputation.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import breadth_first_order

from . import kernels
from .errors import (
    GoalNotAlmostSure,
    IllegalActionSupport,
    MemberError,
    NonConvergence,
    UndefinedControllerRow,
)
from .model import Fsc, HmPomdp, Objective, Pomdp, ProductChain

TOLERANCE = 1e-9
MAX_SWEEPS = 1_000_000
# Mass on an illegal action at or below this is treated as round-off and dropped.
ILLEGAL_MASS = 1e-12


@dataclass
class ValueResult:
    value: float
    values: np.ndarray  # per product state, aligned with chain.states
    objective: Objective
    iterations: int
    residual: float
    goal_probability: float
    chain_size: int
    conditional: bool = False
    diagnostics: dict = field(default_factory=dict)


def _expand(pomdp: Pomdp, joint: np.ndarray, s: np.ndarray, n: np.ndarray, check: bool):
    """All product transitions out of the pairs (s[i], n[i]).

    Returns (src, s2, n2, w, reward, mass) where ``src`` indexes the input
    pairs and ``mass`` is the legal action mass per pair.
    Targets become self-loops with zero reward.
    """
    A = pomdp.num_actions
    is_t = pomdp.is_target[s]
    z = pomdp.observation[s]
    rows = joint[n, z]  # (F, N, A)
    amass = rows.sum(axis=1)  # (F, A)
    if check:
        live = ~is_t
        undefined = live & (amass.sum(axis=1) <= 0)
        if undefined.any():
            i = int(np.flatnonzero(undefined)[0])
            raise UndefinedControllerRow(int(n[i]), int(z[i]))
        bad = live[:, None] & (amass > ILLEGAL_MASS) & ~pomdp.legal[s]
        if bad.any():
            i, a = map(int, np.argwhere(bad)[0])
            raise IllegalActionSupport(int(s[i]), int(n[i]), a, float(amass[i, a]))
    ok = pomdp.legal[s] & ~is_t[:, None]  # (F, A)
    keep = (rows > 0) & ok[:, None, :]
    src, n2, a = np.nonzero(keep)
    w = rows[src, n2, a]
    flat = s[src] * A + a
    lo = pomdp.row_ptr[flat]
    cnt = pomdp.row_ptr[flat + 1] - lo
    rep = np.repeat(np.arange(src.size), cnt)
    offs = np.arange(rep.size) - np.repeat(np.cumsum(cnt) - cnt, cnt)
    idx = lo[rep] + offs
    e_src = src[rep]
    e_s2 = pomdp.successor[idx]
    e_n2 = n2[rep]
    e_w = w[rep] * pomdp.probability[idx]
    tgt = np.flatnonzero(is_t)
    e_src = np.concatenate([e_src, tgt])
    e_s2 = np.concatenate([e_s2, s[tgt]])
    e_n2 = np.concatenate([e_n2, n[tgt]])
    e_w = np.concatenate([e_w, np.ones(tgt.size)])
    mass = np.where(ok, amass, 0.0).sum(axis=1)
    reward = np.where(ok, amass * pomdp.reward[s], 0.0).sum(axis=1)
    return e_src, e_s2, e_n2, e_w, reward, mass


def build_product(pomdp: Pomdp, fsc: Fsc) -> ProductChain:
    """Reachable product chain of ``fsc`` on ``pomdp``.

    Raises IllegalActionSupport or UndefinedControllerRow when a reachable pair
    asks the controller for something it cannot do.
    """
    if fsc.num_observations != pomdp.num_observations or fsc.num_actions != pomdp.num_actions:
        from .errors import ValidationError

        raise ValidationError(
            f"controller is for |Z|={fsc.num_observations}, |A|={fsc.num_actions}; "
            f"model has |Z|={pomdp.num_observations}, |A|={pomdp.num_actions}"
        )
    N = fsc.num_nodes
    joint = fsc.joint()
    start = pomdp.initial_state * N + fsc.initial_node
    seen = {start}
    frontier = np.array([start], dtype=np.int64)
    while frontier.size:
        s, n = np.divmod(frontier, N)
        _, s2, n2, w, _, _ = _expand(pomdp, joint, s, n, check=True)
        keys = np.unique(s2[w > 0] * N + n2[w > 0])
        new = [k for k in keys.tolist() if k not in seen]
        seen.update(new)
        frontier = np.asarray(new, dtype=np.int64)

    keys = np.array(sorted(seen), dtype=np.int64)
    s, n = np.divmod(keys, N)
    src, s2, n2, w, reward, mass = _expand(pomdp, joint, s, n, check=False)
    pos = w > 0
    src, dst, w = src[pos], np.searchsorted(keys, s2[pos] * N + n2[pos]), w[pos]
    K = keys.size
    # deterministic duplicate summation in generation order
    flat, inv = np.unique(src * K + dst, return_inverse=True)
    data = np.bincount(inv, weights=w, minlength=flat.size)
    r, c = np.divmod(flat, K)
    target = pomdp.is_target[s]
    # mass dropped on near-zero illegal actions is renormalized away
    scale = np.where(target, 1.0, mass)
    data = data / scale[r]
    reward = np.where(target, 0.0, reward / np.where(target, 1.0, mass))
    indptr = np.concatenate([[0], np.cumsum(np.bincount(r, minlength=K))])
    matrix = sp.csr_matrix((data, c, indptr), shape=(K, K))
    return ProductChain(
        states=np.stack([s, n], axis=1),
        matrix=matrix,
        reward=reward,
        target=target,
        num_nodes=N,
        initial=int(np.searchsorted(keys, start)),
    )


# -- qualitative precomputation ---------------------------------------------


def _backward(matrix: sp.csr_matrix, seeds: np.ndarray, blocked: np.ndarray | None = None) -> np.ndarray:
    """Mask of states that can reach ``seeds``, optionally never leaving a ``blocked`` state."""
    K = matrix.shape[0]
    coo = matrix.tocoo()
    keep = coo.data > 0
    if blocked is not None:
        keep &= ~blocked[coo.row]
    # reversed edges plus a virtual root K pointing at every seed
    seeds_idx = np.flatnonzero(seeds)
    rows = np.concatenate([coo.col[keep], np.full(seeds_idx.size, K)])
    cols = np.concatenate([coo.row[keep], seeds_idx])
    rev = sp.csr_matrix((np.ones(rows.size, dtype=np.int8), (rows, cols)), shape=(K + 1, K + 1))
    order = breadth_first_order(rev, K, directed=True, return_predecessors=False)
    hit = np.zeros(K + 1, dtype=bool)
    hit[order] = True
    return hit[:K]


def qualitative_sets(chain: ProductChain) -> tuple[np.ndarray, np.ndarray]:
    """(prob0, prob1) masks for reaching the chain's targets."""
    can_reach = _backward(chain.matrix, chain.target.copy())
    prob0 = ~can_reach
    can_fail = _backward(chain.matrix, prob0.copy(), blocked=chain.target)
    prob1 = ~can_fail
    return prob0, prob1


def _sweep(matrix, b, x, active, tol, max_iter):
    it, res = kernels.gauss_seidel(matrix.indptr, matrix.indices, matrix.data, b, x, active, tol, max_iter)
    if res > tol:
        raise NonConvergence(res, it)
    return it, res


def _linear(matrix, b, x, active):
    idx = np.flatnonzero(active)
    if idx.size == 0:
        return
    P = matrix.tocsr()
    sub = P[idx][:, idx]
    rest = P[idx] @ np.where(active, 0.0, x)
    lhs = sp.identity(idx.size, format="csc") - sub.tocsc()
    x[idx] = spla.spsolve(lhs, b[idx] + rest)


def reach_probabilities(chain: ProductChain, *, method="gauss-seidel", tol=TOLERANCE, max_iter=MAX_SWEEPS):
    """Per-state probability of eventually reaching a target. Returns (x, sweeps, residual)."""
    prob0, prob1 = qualitative_sets(chain)
    x = np.where(prob1, 1.0, 0.0)
    maybe = ~(prob0 | prob1)
    b = np.zeros(chain.size)
    it, res = 0, 0.0
    if maybe.any():
        if method == "linear":
            _linear(chain.matrix, b, x, maybe)
        else:
            it, res = _sweep(chain.matrix, b, x, maybe, tol, max_iter)
    return x, it, res


def _conditioned(chain: ProductChain, p: np.ndarray) -> sp.csr_matrix:
    """Transition matrix of the chain conditioned on eventually reaching a target."""
    coo = chain.matrix.tocoo()
    pos = (p[coo.row] > 0) & (p[coo.col] > 0)
    r, c = coo.row[pos], coo.col[pos]
    data = coo.data[pos] * p[c] / p[r]
    return sp.csr_matrix((data, (r, c)), shape=chain.matrix.shape)


def solve_value(
    chain: ProductChain,
    objective: Objective | str,
    *,
    method: str = "gauss-seidel",
    tol: float = TOLERANCE,
    max_iter: int = MAX_SWEEPS,
    conditional: bool = False,
) -> ValueResult:
    """Value of the initial pair under ``objective``.

    Reward objectives require the target to be reached almost surely and raise
    GoalNotAlmostSure otherwise. With ``conditional=True`` they instead report
    the expected reward conditioned on reaching a target (not the standard
    semantics; use only when the caller knows what that means).
    """
    objective = Objective(objective)
    if method not in ("gauss-seidel", "linear"):
        raise ValueError(f"unknown solver method {method!r}")
    p, it, res = reach_probabilities(chain, method=method, tol=tol, max_iter=max_iter)
    p_init = float(p[chain.initial])
    if not objective.is_reward:
        return ValueResult(p_init, p, objective, it, res, p_init, chain.size)

    if p_init < 1.0 - TOLERANCE and not conditional:
        raise GoalNotAlmostSure(p_init)
    if conditional and p_init <= 0.0:
        raise GoalNotAlmostSure(p_init)
    matrix = _conditioned(chain, p) if conditional else chain.matrix
    active = ~chain.target & (p > 0 if conditional else p >= 1.0 - TOLERANCE)
    x = np.zeros(chain.size)
    b = np.where(active, chain.reward, 0.0)
    it2, res2 = 0, 0.0
    if active.any():
        if method == "linear":
            _linear(matrix, b, x, active)
        else:
            it2, res2 = _sweep(matrix.tocsr(), b, x, active, tol, max_iter)
    return ValueResult(
        float(x[chain.initial]), x, objective, it + it2, max(res, res2), p_init, chain.size, conditional
    )


def value_of_fsc(pomdp: Pomdp, fsc: Fsc, **kwargs) -> ValueResult:
    return solve_value(build_product(pomdp, fsc), pomdp.objective, **kwargs)


# -- families ------------------------------------------------------------------


@dataclass
class RobustValue:
    value: float
    worst_index: int
    member_values: list[float]

    def __iter__(self):
        # allows ``J, worst = robust_value(...)``
        return iter((self.value, self.worst_index))


def default_threads() -> int:
    env = os.environ.get("FSCX_THREADS")
    if env:
        return max(1, int(env))
    return 1


def robust_value(hm: HmPomdp, fsc: Fsc, *, threads: int | None = None, undefined_as_worst: bool = False,
                 **kwargs) -> RobustValue:
    """Worst value of ``fsc`` over all members and the smallest index attaining it.

    "Worst" is the minimum for maximizing objectives and the maximum for
    ReachRewardMin. With ``undefined_as_worst`` a member where a reward
    objective is undefined (goal not reached almost surely) scores -inf or
    +inf instead of failing the call.
    """
    objective = hm.objective
    members = hm.members if isinstance(hm, HmPomdp) else (hm,)
    bad = -np.inf if objective.maximize else np.inf

    def one(i):
        try:
            return value_of_fsc(members[i], fsc, **kwargs).value
        except GoalNotAlmostSure as exc:
            if undefined_as_worst:
                return bad
            raise MemberError(i, exc) from exc
        except Exception as exc:
            raise MemberError(i, exc) from exc

    threads = threads or default_threads()
    if threads > 1 and len(members) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            values = list(pool.map(one, range(len(members))))
    else:
        values = [one(i) for i in range(len(members))]
    worst = 0
    for i, v in enumerate(values):
        if objective.worse(v, values[worst]):
            worst = i
    return RobustValue(float(values[worst]), worst, [float(v) for v in values])


def reachable_pairs(chain: ProductChain) -> np.ndarray:
    """Indices reachable from the initial pair (all of them, by construction)."""
    return np.sort(breadth_first_order(chain.matrix, chain.initial, directed=True, return_predecessors=False))
