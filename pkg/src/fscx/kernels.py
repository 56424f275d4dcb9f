"""Backend selection for the hot loops.

The compiled extension is used when it was built; otherwise, or when the
environment variable ``FSCX_PURE_PYTHON`` is set, the pure-Python reference
runs instead. Both produce identical results.
"""

import os

import numpy as np

from . import _kernels_py

if os.environ.get("FSCX_PURE_PYTHON"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:
        _impl = _kernels_py

BACKEND = "cython" if _impl is not _kernels_py else "python"

RUNNING, GOAL, TRUNCATED, FAILED = (
    _kernels_py.RUNNING,
    _kernels_py.GOAL,
    _kernels_py.TRUNCATED,
    _kernels_py.FAILED,
)


def backend_module(name=None):
    """Return the kernel module for ``name`` ('cython' or 'python'); default is the active one."""
    if name is None:
        return _impl
    if name == "python":
        return _kernels_py
    if name == "cython":
        from . import _kernels

        return _kernels
    raise ValueError(f"unknown backend {name!r}")


def lane_uniforms(seed, lanes, counters, k, backend=None):
    return backend_module(backend).lane_uniforms(seed, lanes, counters, k)


def batch_step(*args, backend=None):
    return backend_module(backend).batch_step(*args)


def gauss_seidel(indptr, indices, data, b, x, active, tol, max_iter, backend=None):
    """Sweep ``x`` in place; returns (sweeps, residual)."""
    return backend_module(backend).gauss_seidel(
        np.ascontiguousarray(indptr, dtype=np.int64),
        np.ascontiguousarray(indices, dtype=np.int64),
        np.ascontiguousarray(data, dtype=np.float64),
        np.ascontiguousarray(b, dtype=np.float64),
        x,
        np.ascontiguousarray(active, dtype=np.uint8),
        float(tol),
        int(max_iter),
    )


def gae(rewards, values, dones, last_values, gamma, lam, backend=None):
    return backend_module(backend).gae(
        np.ascontiguousarray(rewards, dtype=np.float64),
        np.ascontiguousarray(values, dtype=np.float64),
        np.ascontiguousarray(dones, dtype=np.uint8),
        np.ascontiguousarray(last_values, dtype=np.float64),
        float(gamma),
        float(lam),
    )
