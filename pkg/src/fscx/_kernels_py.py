"""Reference implementations of the hot loops.

These must stay bit-identical to ``_kernels.pyx``: same arithmetic in the same
order. The test-suite runs both backends on the same inputs and compares
outputs exactly.
"""

import numpy as np

RUNNING, GOAL, TRUNCATED, FAILED = 0, 1, 2, 3

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30, _S27, _S31, _S11 = np.uint64(30), np.uint64(27), np.uint64(31), np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0


def _mix(z):
    z = z ^ (z >> _S30)
    z = z * _M1
    z = z ^ (z >> _S27)
    z = z * _M2
    return z ^ (z >> _S31)


def lane_uniforms(seed, lanes, counters, k):
    """Counter-based uniforms in [0, 1): one independent stream per lane."""
    lanes = np.asarray(lanes, dtype=np.uint64)
    counters = np.asarray(counters, dtype=np.uint64)
    with np.errstate(over="ignore"):  # uint64 arithmetic wraps by design
        key = _mix(np.uint64(seed) + (lanes + np.uint64(1)) * _GOLDEN)
        x = _mix(key + counters * np.uint64(2) + np.uint64(k))
    return (x >> _S11).astype(np.float64) * _INV53


def batch_step(state, steps, counter, actions, lane_initial, seed, num_actions,
               legal, legal_ptr, legal_list, row_ptr, cumkey, successor, reward,
               terminal, max_steps, exec_action, raw, done, replaced, landed):
    """Advance every lane by one transition, in place.

    ``terminal[s]`` is GOAL for targets, FAILED for dead ends (or 0). Finished
    lanes are reset to ``lane_initial``; ``landed`` receives the pre-reset
    successor state.
    """
    L = state.shape[0]
    lanes = np.arange(L, dtype=np.uint64)
    A = num_actions
    s = state
    a = np.asarray(actions, dtype=np.int64)
    ok = legal[s * A + a] != 0
    u0 = lane_uniforms(seed, lanes, counter, 0)
    nleg = legal_ptr[s + 1] - legal_ptr[s]
    pick = (u0 * nleg).astype(np.int64)
    a = np.where(ok, a, legal_list[legal_ptr[s] + np.where(ok, 0, pick)])
    rows = s * A + a
    u1 = lane_uniforms(seed, lanes, counter, 1)
    key = rows.astype(np.float64) + u1
    j = np.searchsorted(cumkey, key, side="right")
    j = np.minimum(np.maximum(j, row_ptr[rows]), row_ptr[rows + 1] - 1)
    s2 = successor[j]

    exec_action[:] = a
    replaced[:] = ~ok
    raw[:] = reward[rows]
    landed[:] = s2
    counter += np.uint64(1)
    steps += 1
    term = terminal[s2]
    code = np.where(term != 0, term, np.where(steps >= max_steps, TRUNCATED, RUNNING)).astype(np.int8)
    done[:] = code
    fin = code != RUNNING
    state[:] = np.where(fin, lane_initial, s2)
    steps[fin] = 0


def gauss_seidel(indptr, indices, data, b, x, active, tol, max_iter):
    """In-place Gauss-Seidel sweeps for x = b + P x on the ``active`` rows.

    Returns (sweeps, residual) where residual is the sup-norm change of the
    last sweep.
    """
    ip = indptr.tolist()
    ix = indices.tolist()
    dv = data.tolist()
    bv = b.tolist()
    xv = x.tolist()
    rows = np.flatnonzero(active).tolist()
    residual = 0.0
    it = 0
    while it < max_iter:
        it += 1
        residual = 0.0
        for i in rows:
            acc = bv[i]
            diag = 0.0
            for k in range(ip[i], ip[i + 1]):
                c = ix[k]
                if c == i:
                    diag += dv[k]
                else:
                    acc += dv[k] * xv[c]
            denom = 1.0 - diag
            new = acc / denom if denom > 1e-300 else acc
            d = abs(new - xv[i])
            if d > residual:
                residual = d
            xv[i] = new
        if residual <= tol:
            break
    x[:] = xv
    return it, residual


def gae(rewards, values, dones, last_values, gamma, lam):
    T = rewards.shape[0]
    adv = np.zeros_like(rewards)
    last = np.zeros(rewards.shape[1])
    next_v = np.asarray(last_values, dtype=np.float64)
    for t in range(T - 1, -1, -1):
        nonterm = 1.0 - dones[t].astype(np.float64)
        delta = rewards[t] + gamma * next_v * nonterm - values[t]
        last = delta + gamma * lam * nonterm * last
        adv[t] = last
        next_v = values[t]
    return adv
