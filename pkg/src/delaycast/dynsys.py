"""Ground-truth systems and ODE integration kernels.

Lorenz-63 is integrated with an adaptive Dormand-Prince 5(4) pair; the
Kuramoto-Sivashinsky equation with Fourier-spectral ETDRK4. Both integrators
are reused elsewhere (the NODE model integrates its learned field with them).
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import IntegrationError
from .timeseries import TimeSeries


@dataclass(frozen=True)
class LorenzParams:
    sigma: float = 10.0
    rho: float = 28.0
    beta: float = 8.0 / 3.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.sigma, self.rho, self.beta)):
            raise ValueError("Lorenz parameters must be finite")


@dataclass(frozen=True)
class KseParams:
    L: float = 22.0
    n_grid: int = 64
    dt: float = 0.25

    def __post_init__(self):
        if self.n_grid % 2 or self.n_grid < 16:
            raise ValueError("n_grid must be even and >= 16")
        if not (self.L > 0 and self.dt > 0):
            raise ValueError("L and dt must be positive")


@dataclass(frozen=True)
class IntegratorConfig:
    method: str = "dopri5_adaptive"
    rtol: float = 1e-8
    atol: float = 1e-10
    max_step: float = math.inf
    first_step: float = None

    def __post_init__(self):
        if self.method not in ("rk4_fixed", "dopri5_adaptive"):
            raise ValueError(f"unknown integrator {self.method!r}")
        if not (self.rtol > 0 and self.atol > 0 and self.max_step > 0):
            raise ValueError("tolerances and max_step must be positive")


def lorenz_rhs(state, params=LorenzParams()):
    """Lorenz-63 vector field; ``state`` may carry leading batch axes."""
    s = np.asarray(state, dtype=np.float64)
    x, y, z = s[..., 0], s[..., 1], s[..., 2]
    return np.stack([params.sigma * (y - x),
                     x * (params.rho - z) - y,
                     x * y - params.beta * z], axis=-1)


# --------------------------------------------------------------------------
# explicit Runge-Kutta kernels

def rk4_step(f, t, y, h):
    k1 = f(t, y)
    k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = f(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_DP_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
# 5th-order minus embedded 4th-order weights
_DP_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])
# continuous extension: y(t + th) = y + h * sum_i k_i * (P[i] . [th, th^2, th^3, th^4])
_DP_P = np.array([
    [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])


def dopri5_step(f, t, y, h, k1=None):
    """One Dormand-Prince step. Returns (y_new, error_estimate, stages)."""
    k = [f(t, y) if k1 is None else k1]
    for i in range(1, 7):
        dy = sum(a * kj for a, kj in zip(_DP_A[i], k) if a != 0.0)
        k.append(f(t + _DP_C[i] * h, y + h * dy))
    y_new = y + h * sum(b * kj for b, kj in zip(_DP_B, k) if b != 0.0)
    err = h * sum(e * kj for e, kj in zip(_DP_E, k) if e != 0.0)
    return y_new, err, k


def _dense(y, h, k, theta):
    th = np.array([theta, theta**2, theta**3, theta**4])
    w = _DP_P @ th
    return y + h * sum(wi * ki for wi, ki in zip(w, k) if wi != 0.0)


def _error_norm(err, y, y_new, rtol, atol):
    scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
    return float(np.sqrt(np.mean((err / scale) ** 2)))


def _initial_step(f, t, y, f0, direction_span, rtol, atol, max_step):
    scale = atol + rtol * np.abs(y)
    d0 = np.sqrt(np.mean((y / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, direction_span, max_step)
    f1 = f(t + h0, y + h0 * f0)
    d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2)) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, direction_span, max_step)


def integrate_ode(rhs, y0, t_span, config=IntegratorConfig(), sample_dt=None,
                  channel_names=None, stop_norm=None):
    """Integrate ``dy/dt = rhs(t, y)`` and sample every ``sample_dt``.

    ``y0`` may have any shape; it is flattened into channels of the returned
    :class:`TimeSeries` (samples at ``t0, t0 + sample_dt, ...`` up to ``t1``).
    The adaptive method keeps the RMS of ``err / (atol + rtol |y|)`` below 1
    per accepted step and samples through its 4th-order dense output.

    ``stop_norm``: abort with :class:`IntegrationError` once ``max |y|``
    exceeds this value.
    """
    t0, t1 = map(float, t_span)
    if not t1 > t0:
        raise ValueError("t_span must be increasing")
    if sample_dt is None:
        sample_dt = t1 - t0
    if not sample_dt > 0:
        raise ValueError("sample_dt must be positive")
    y = np.array(y0, dtype=np.float64)
    shape = y.shape
    f = lambda t, v: np.asarray(rhs(t, v), dtype=np.float64)  # noqa: E731
    n_out = int(math.floor((t1 - t0) / sample_dt * (1 + 1e-12))) + 1
    out = np.empty((n_out,) + shape)
    out[0] = y
    try:
        if config.method == "rk4_fixed":
            _rk4_sampled(f, t0, y, sample_dt, n_out, config, out, stop_norm)
        else:
            _dopri5_sampled(f, t0, t1, y, sample_dt, n_out, config, out, stop_norm)
    except IntegrationError as exc:
        # every sample up to the last accepted time is already filled in
        n_ok = int(math.floor((exc.last_time - t0) / sample_dt * (1 + 1e-12))) + 1
        n_ok = min(max(n_ok, 1), n_out)
        exc.partial = TimeSeries(out[:n_ok].reshape(n_ok, -1), sample_dt, t0, channel_names)
        raise
    return TimeSeries(out.reshape(n_out, -1), sample_dt, t0, channel_names)


def _check(y, t, stop_norm):
    if not np.all(np.isfinite(y)) or (stop_norm is not None and np.max(np.abs(y)) > stop_norm):
        raise IntegrationError(f"solution diverged near t={t:.6g}", last_time=t)


def _rk4_sampled(f, t0, y, sample_dt, n_out, config, out, stop_norm):
    h_req = config.first_step or min(config.max_step, sample_dt)
    n_sub = max(1, int(math.ceil(sample_dt / h_req - 1e-9)))
    h = sample_dt / n_sub
    t = t0
    for i in range(1, n_out):
        for _ in range(n_sub):
            y_new = rk4_step(f, t, y, h)
            _check(y_new, t, stop_norm)
            y = y_new
            t += h
        t = t0 + i * sample_dt
        out[i] = y


def _dopri5_sampled(f, t0, t1, y, sample_dt, n_out, config, out, stop_norm):
    rtol, atol, max_step = config.rtol, config.atol, config.max_step
    t = t0
    k1 = f(t, y)
    h = config.first_step or _initial_step(f, t, y, k1, t1 - t0, rtol, atol, max_step)
    i_next = 1
    while i_next < n_out:
        h = min(h, max_step, t1 - t)
        if h <= 1e-12 * max(1.0, abs(t)):
            raise IntegrationError(f"step size underflow at t={t:.6g}", last_time=t)
        y_new, err, k = dopri5_step(f, t, y, h, k1)
        if np.all(np.isfinite(y_new)):
            en = _error_norm(err, y, y_new, rtol, atol)
        else:
            en = math.inf
        if en <= 1.0:
            t_new = t + h
            _check(y_new, t, stop_norm)
            while i_next < n_out and t0 + i_next * sample_dt <= t_new * (1 + 1e-14) + 1e-14:
                ts = t0 + i_next * sample_dt
                out[i_next] = y_new if ts >= t_new else _dense(y, h, k, (ts - t) / h)
                i_next += 1
            t, y = t_new, y_new
            k1 = k[6]  # FSAL
            factor = 5.0 if en == 0 else min(5.0, max(0.2, 0.9 * en ** -0.2))
            h *= factor
        else:
            h *= max(0.2, 0.9 * en ** -0.2) if math.isfinite(en) else 0.2


# --------------------------------------------------------------------------
# Lorenz data

def simulate_lorenz(params=LorenzParams(), n_samples=1, sample_dt=0.1,
                    transient_discard=0, seed=0, config=IntegratorConfig(),
                    y0=None):
    """Lorenz trajectory ``(x, y, z)`` sampled every ``sample_dt``.

    The initial condition is uniform on ``[-10, 10]^3`` from ``seed`` unless
    ``y0`` is given; the first ``transient_discard`` samples are dropped.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if y0 is None:
        y0 = np.random.default_rng(seed).uniform(-10.0, 10.0, size=3)
    total = n_samples + transient_discard
    from . import kernels
    values = kernels.lorenz_dopri5(params, np.asarray(y0, dtype=np.float64),
                                   total, sample_dt, config)
    return TimeSeries(values[transient_discard:], sample_dt,
                      transient_discard * sample_dt, ["x", "y", "z"])


# --------------------------------------------------------------------------
# Kuramoto-Sivashinsky

def kse_grid(params):
    return params.L * np.arange(params.n_grid) / params.n_grid


def kse_wavenumbers(params):
    return 2.0 * np.pi / params.L * np.arange(params.n_grid // 2 + 1)


class KseEtdrk4:
    """ETDRK4 for ``u_t = -u u_x - u_xx - u_xxxx`` in rfft space.

    The phi-function weights are evaluated by a 16-point complex contour
    mean so small ``h L`` do not cancel. Modes ``k >= n/3`` are zeroed in the
    nonlinear term (2/3 rule) and the Nyquist mode is dropped.
    """

    n_contour = 16

    def __init__(self, params):
        self.params = params
        n = params.n_grid
        q = kse_wavenumbers(params)
        self.q = q
        h = params.dt
        lin = q**2 - q**4
        self.E = np.exp(h * lin)
        self.E2 = np.exp(h * lin / 2)
        M = self.n_contour
        r = np.exp(1j * np.pi * (np.arange(1, M + 1) - 0.5) / M)
        LR = h * lin[:, None] + r[None, :]
        self.Q = h * np.real(np.mean((np.exp(LR / 2) - 1) / LR, axis=1))
        self.f1 = h * np.real(np.mean((-4 - LR + np.exp(LR) * (4 - 3 * LR + LR**2)) / LR**3, axis=1))
        self.f2 = h * np.real(np.mean((2 + LR + np.exp(LR) * (-2 + LR)) / LR**3, axis=1))
        self.f3 = h * np.real(np.mean((-4 - 3 * LR - LR**2 + np.exp(LR) * (4 - LR)) / LR**3, axis=1))
        k = np.arange(n // 2 + 1)
        self.mask = (k < n / 3.0).astype(np.float64)
        self.mask[0] = 0.0  # zero-mean subspace
        self.g = -0.5j * q * self.mask

    def nonlinear(self, v):
        u = np.fft.irfft(v * self.mask, n=self.params.n_grid)
        return self.g * np.fft.rfft(u * u)

    def step(self, v):
        Nv = self.nonlinear(v)
        a = self.E2 * v + self.Q * Nv
        Na = self.nonlinear(a)
        b = self.E2 * v + self.Q * Na
        Nb = self.nonlinear(b)
        c = self.E2 * a + self.Q * (2 * Nb - Nv)
        Nc = self.nonlinear(c)
        return self.E * v + Nv * self.f1 + 2 * (Na + Nb) * self.f2 + Nc * self.f3

    def to_spectral(self, u):
        v = np.fft.rfft(np.asarray(u, dtype=np.float64))
        v[0] = 0.0
        v[-1] = 0.0
        return v

    def to_physical(self, v):
        return np.fft.irfft(v, n=self.params.n_grid)


BLOWUP_LIMIT = 1e6


def simulate_kse(params=KseParams(), n_samples=1, sample_dt=0.25,
                 transient_discard=0, seed=0, u0=None):
    """KSE snapshots on ``params.n_grid`` points every ``sample_dt``.

    ``sample_dt`` must be an integer multiple of the solver step
    ``params.dt``. Without ``u0`` the initial field is seeded low-amplitude
    noise with its mean removed.
    """
    ratio = sample_dt / params.dt
    n_sub = int(round(ratio))
    if n_sub < 1 or abs(ratio - n_sub) > 1e-9:
        raise ValueError("sample_dt must be an integer multiple of params.dt")
    solver = KseEtdrk4(params)
    if u0 is None:
        u0 = 0.1 * np.random.default_rng(seed).standard_normal(params.n_grid)
    u0 = np.asarray(u0, dtype=np.float64)
    v = solver.to_spectral(u0 - u0.mean())
    total = n_samples + transient_discard
    out = np.empty((total, params.n_grid))
    out[0] = solver.to_physical(v)
    for i in range(1, total):
        for _ in range(n_sub):
            v = solver.step(v)
        u = solver.to_physical(v)
        if not np.all(np.abs(u) <= BLOWUP_LIMIT):
            raise IntegrationError("KSE solution blew up",
                                   last_time=(i - 1) * sample_dt)
        out[i] = u
    names = [f"u{j}" for j in range(params.n_grid)]
    return TimeSeries(out[transient_discard:], sample_dt,
                      transient_discard * sample_dt, names)


def spectral_derivatives(snapshot, L, order=1):
    """Periodic Fourier derivative along the last axis (``order`` 1 or 2)."""
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    u = np.asarray(snapshot, dtype=np.float64)
    n = u.shape[-1]
    q = 2.0 * np.pi / L * np.arange(n // 2 + 1)
    v = np.fft.rfft(u, axis=-1)
    if order == 1:
        mult = 1j * q
        if n % 2 == 0:
            mult[-1] = 0.0
    else:
        mult = -(q**2)
    return np.fft.irfft(v * mult, n=n, axis=-1)
