"""Backend selection for the hot loops.

The compiled extension is used when it imports; set ``DELAYCAST_PURE=1`` to
force the numpy fallback. ``BACKEND`` names the active one.
"""

import os

import numpy as np

from . import _fallback

_ext = None
if not os.environ.get("DELAYCAST_PURE"):
    try:
        from . import _kernels as _ext
    except ImportError:  # extension not built
        _ext = None

BACKEND = "compiled" if _ext is not None else "python"
_impl = _ext if _ext is not None else _fallback


def backend_module(name=None):
    """Return the kernel module for ``name`` in {"compiled", "python", None}."""
    if name is None:
        return _impl
    if name == "python":
        return _fallback
    if name == "compiled":
        if _ext is None:
            raise ImportError("compiled kernels are not built")
        return _ext
    raise ValueError(f"unknown backend {name!r}")


def nearest_neighbors(X, theiler=0, backend=None):
    """Index and Euclidean distance of each row's nearest other row.

    Rows within ``theiler`` positions (``|i - j| <= theiler``) are not
    eligible, so ``theiler=0`` only excludes the point itself.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    return backend_module(backend).nearest_neighbors(X, int(theiler))


def hist2d_counts(a, b, range_a, range_b, nx, ny, backend=None):
    """Counts on a uniform ``nx x ny`` grid plus the number of points outside it."""
    a = np.ascontiguousarray(a, dtype=np.float64).ravel()
    b = np.ascontiguousarray(b, dtype=np.float64).ravel()
    return backend_module(backend).hist2d_counts(
        a, b, float(range_a[0]), float(range_a[1]),
        float(range_b[0]), float(range_b[1]), int(nx), int(ny))


def pack_mlp(weights, biases, activations):
    """Flatten layer parameters into the buffers ``mlp_rollout`` expects."""
    sizes = np.array([weights[0].shape[0]] + [W.shape[1] for W in weights],
                     dtype=np.int64)
    w_flat = np.ascontiguousarray(np.concatenate([W.ravel() for W in weights]))
    b_flat = np.ascontiguousarray(np.concatenate([b.ravel() for b in biases]))
    relu = np.array([a == "relu" for a in activations], dtype=np.intc)
    return w_flat, b_flat, sizes, relu


def mlp_rollout(weights, biases, activations, z0, d_p, n_steps, limit,
                backend=None):
    """Run the delay-register recursion for every row of ``z0``.

    Returns ``(outputs, n_valid)`` where ``outputs[b, k]`` is the newest
    block after ``k`` steps and rows past ``n_valid[b]`` are NaN.
    """
    packed = pack_mlp(weights, biases, activations)
    z0 = np.ascontiguousarray(np.atleast_2d(z0), dtype=np.float64)
    return backend_module(backend).mlp_rollout(
        *packed, z0, int(d_p), int(n_steps), float(limit))


def lorenz_dopri5(params, y0, n_out, sample_dt, config, backend=None):
    """Lorenz trajectory ``[n_out, 3]`` from ``y0`` with the package's DOPRI5."""
    mod = backend_module(backend)
    if config.method == "dopri5_adaptive" and mod is not _fallback:
        values, status, last = mod.lorenz_dopri5(
            params.sigma, params.rho, params.beta, np.ascontiguousarray(y0, dtype=np.float64),
            int(n_out), float(sample_dt), config.rtol, config.atol,
            float(config.max_step), float(config.first_step or 0.0))
        if status:
            from .errors import IntegrationError
            raise IntegrationError("Lorenz integration failed", last_time=last)
        return values
    from .dynsys import integrate_ode, lorenz_rhs
    t_end = (n_out - 1) * sample_dt
    if n_out == 1:
        return np.asarray(y0, dtype=np.float64)[None, :].copy()
    ts = integrate_ode(lambda t, y: lorenz_rhs(y, params), y0, (0.0, t_end), config,
                       sample_dt)
    return np.array(ts.values[:n_out])
