# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot loops in ``_kernels_py``.

Arithmetic mirrors the Python reference operation by operation so that both
backends produce bit-identical results.
"""

import numpy as np

from libc.math cimport fabs
from libc.stdint cimport int8_t, int64_t, uint8_t, uint64_t

RUNNING, GOAL, TRUNCATED, FAILED = 0, 1, 2, 3

cdef uint64_t _GOLDEN = 0x9E3779B97F4A7C15ULL
cdef double _INV53 = 1.0 / 9007199254740992.0


cdef inline uint64_t _mix(uint64_t z) nogil:
    z = z ^ (z >> 30)
    z = z * 0xBF58476D1CE4E5B9ULL
    z = z ^ (z >> 27)
    z = z * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline double _uniform(uint64_t seed, uint64_t lane, uint64_t counter, uint64_t k) nogil:
    cdef uint64_t key = _mix(seed + (lane + 1) * _GOLDEN)
    cdef uint64_t x = _mix(key + counter * 2 + k)
    return <double>(x >> 11) * _INV53


def lane_uniforms(seed, lanes, counters, k):
    cdef uint64_t[:] ln = np.ascontiguousarray(lanes, dtype=np.uint64)
    cdef uint64_t[:] ct = np.ascontiguousarray(counters, dtype=np.uint64)
    cdef Py_ssize_t n = ln.shape[0], i
    out = np.empty(n, dtype=np.float64)
    cdef double[:] o = out
    cdef uint64_t s = <uint64_t>seed, kk = <uint64_t>k
    for i in range(n):
        o[i] = _uniform(s, ln[i], ct[i], kk)
    return out


def batch_step(int64_t[:] state, int64_t[:] steps, uint64_t[:] counter,
               const int64_t[:] actions, const int64_t[:] lane_initial, seed, int64_t num_actions,
               const uint8_t[:] legal, const int64_t[:] legal_ptr, const int64_t[:] legal_list,
               const int64_t[:] row_ptr, const double[:] cumkey, const int64_t[:] successor,
               const double[:] reward, const int8_t[:] terminal, int64_t max_steps,
               int64_t[:] exec_action, double[:] raw, int8_t[:] done, uint8_t[:] replaced,
               int64_t[:] landed):
    cdef Py_ssize_t L = state.shape[0], i
    cdef uint64_t sd = <uint64_t>seed
    cdef int64_t s, a, row, lo, hi, mid, j, s2, nleg, pick
    cdef double u, key
    cdef int8_t code, term
    with nogil:
        for i in range(L):
            s = state[i]
            a = actions[i]
            if legal[s * num_actions + a] != 0:
                replaced[i] = 0
            else:
                u = _uniform(sd, <uint64_t>i, counter[i], 0)
                nleg = legal_ptr[s + 1] - legal_ptr[s]
                pick = <int64_t>(u * <double>nleg)
                a = legal_list[legal_ptr[s] + pick]
                replaced[i] = 1
            row = s * num_actions + a
            u = _uniform(sd, <uint64_t>i, counter[i], 1)
            key = <double>row + u
            # first j in [lo, hi) with cumkey[j] > key, clamped to the row
            lo = row_ptr[row]
            hi = row_ptr[row + 1]
            while lo < hi:
                mid = (lo + hi) >> 1
                if cumkey[mid] > key:
                    hi = mid
                else:
                    lo = mid + 1
            j = lo
            if j > row_ptr[row + 1] - 1:
                j = row_ptr[row + 1] - 1
            s2 = successor[j]
            exec_action[i] = a
            raw[i] = reward[row]
            landed[i] = s2
            counter[i] += 1
            steps[i] += 1
            term = terminal[s2]
            if term != 0:
                code = term
            elif steps[i] >= max_steps:
                code = 2
            else:
                code = 0
            done[i] = code
            if code != 0:
                state[i] = lane_initial[i]
                steps[i] = 0
            else:
                state[i] = s2


def gauss_seidel(const int64_t[:] indptr, const int64_t[:] indices, const double[:] data,
                 const double[:] b, double[:] x, const uint8_t[:] active, double tol, long max_iter):
    cdef Py_ssize_t n = x.shape[0], i, k
    cdef int64_t c
    cdef double acc, diag, denom, new, d, residual = 0.0
    cdef long it = 0
    with nogil:
        while it < max_iter:
            it += 1
            residual = 0.0
            for i in range(n):
                if active[i] == 0:
                    continue
                acc = b[i]
                diag = 0.0
                for k in range(indptr[i], indptr[i + 1]):
                    c = indices[k]
                    if c == i:
                        diag += data[k]
                    else:
                        acc += data[k] * x[c]
                denom = 1.0 - diag
                if denom > 1e-300:
                    new = acc / denom
                else:
                    new = acc
                d = fabs(new - x[i])
                if d > residual:
                    residual = d
                x[i] = new
            if residual <= tol:
                break
    return it, residual


def gae(const double[:, :] rewards, const double[:, :] values, const uint8_t[:, :] dones,
        const double[:] last_values, double gamma, double lam):
    cdef Py_ssize_t T = rewards.shape[0], L = rewards.shape[1], t, l
    out = np.zeros((T, L), dtype=np.float64)
    cdef double[:, :] adv = out
    cdef double nonterm, delta, last, next_v
    with nogil:
        for l in range(L):
            last = 0.0
            next_v = last_values[l]
            for t in range(T - 1, -1, -1):
                nonterm = 1.0 - <double>dones[t, l]
                delta = rewards[t, l] + gamma * next_v * nonterm - values[t, l]
                last = delta + gamma * lam * nonterm * last
                adv[t, l] = last
                next_v = values[t, l]
    return out
