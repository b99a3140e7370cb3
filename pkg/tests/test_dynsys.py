import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from checks import kse_growth_rate, observed_order
from delaycast import dynsys
from delaycast.dynsys import (IntegratorConfig, KseEtdrk4, KseParams, LorenzParams,
                              dopri5_step, integrate_ode, lorenz_rhs, rk4_step,
                              simulate_kse, simulate_lorenz, spectral_derivatives)
from delaycast.errors import IntegrationError

finite = st.floats(-50, 50, allow_nan=False)


# ---------------------------------------------------------------- Lorenz field

def test_lorenz_rhs_origin_is_fixed():
    assert np.array_equal(lorenz_rhs([0.0, 0.0, 0.0]), [0.0, 0.0, 0.0])


def test_lorenz_rhs_nontrivial_fixed_point():
    c = math.sqrt(72.0)
    np.testing.assert_allclose(lorenz_rhs([c, c, 27.0]), 0.0, atol=1e-12)
    np.testing.assert_allclose(lorenz_rhs([-c, -c, 27.0]), 0.0, atol=1e-12)


def test_lorenz_rhs_unit_state():
    np.testing.assert_allclose(lorenz_rhs([1.0, 1.0, 1.0]), [0.0, 26.0, -5.0 / 3.0], rtol=1e-15)


@given(finite, finite, finite)
def test_lorenz_rhs_symmetry(x, y, z):
    a = lorenz_rhs([x, y, z])
    b = lorenz_rhs([-x, -y, z])
    np.testing.assert_allclose(b, [-a[0], -a[1], a[2]], rtol=1e-14, atol=1e-12)


def test_lorenz_rhs_batched(rng):
    s = rng.standard_normal((4, 5, 3))
    out = lorenz_rhs(s)
    assert out.shape == s.shape
    np.testing.assert_array_equal(out[2, 3], lorenz_rhs(s[2, 3]))


def test_lorenz_params_must_be_finite():
    with pytest.raises(ValueError):
        LorenzParams(sigma=float("nan"))


# ---------------------------------------------------------------- integrators

def test_dopri5_exponential_decay():
    cfg = IntegratorConfig("dopri5_adaptive", rtol=1e-8, atol=1e-10)
    ts = integrate_ode(lambda t, y: -y, [1.0], (0.0, 1.0), cfg)
    assert abs(ts.values[-1, 0] - math.exp(-1.0)) < 1e-6


def test_zero_field_keeps_constant():
    for method in ("dopri5_adaptive", "rk4_fixed"):
        cfg = IntegratorConfig(method, max_step=0.05)
        ts = integrate_ode(lambda t, y: np.zeros_like(y), [3.5, -1.0], (0.0, 2.0), cfg, 0.25)
        assert np.array_equal(ts.values, np.tile([3.5, -1.0], (9, 1)))


def test_lorenz_equilibrium_stays_put():
    c = math.sqrt(72.0)
    y0 = np.array([c, c, 27.0])
    ts = integrate_ode(lambda t, y: lorenz_rhs(y), y0, (0.0, 5.0), IntegratorConfig(), 0.5)
    np.testing.assert_allclose(ts.values, np.tile(y0, (11, 1)), atol=1e-9)


def test_sampling_grid_and_dense_output():
    # sample spacing far below the accepted step size exercises the dense output
    cfg = IntegratorConfig("dopri5_adaptive", rtol=1e-10, atol=1e-12)
    ts = integrate_ode(lambda t, y: -y, [1.0], (0.0, 2.0), cfg, 0.01)
    assert ts.n_samples == 201 and ts.dt == 0.01
    np.testing.assert_allclose(ts.values[:, 0], np.exp(-ts.times), rtol=1e-7)


def test_dopri5_matches_scipy_on_lorenz():
    scipy_integrate = pytest.importorskip("scipy.integrate")
    y0 = np.array([1.0, 2.0, 20.0])
    cfg = IntegratorConfig("dopri5_adaptive", rtol=1e-11, atol=1e-12)
    ours = integrate_ode(lambda t, y: lorenz_rhs(y), y0, (0.0, 2.0), cfg, 0.1)
    ref = scipy_integrate.solve_ivp(lambda t, y: lorenz_rhs(y), (0.0, 2.0), y0, method="DOP853",
                                    t_eval=ours.times, rtol=1e-13, atol=1e-13)
    np.testing.assert_allclose(ours.values, ref.y.T, rtol=1e-7, atol=1e-7)


def test_rk4_fourthobserved_order():
    o1, o2 = observed_order(rk4_step, 0.1)
    assert o1 >= 3.8 and o2 >= 3.8


def test_dopri5_fifthobserved_order():
    o1, o2 = observed_order(lambda f, t, y, h: dopri5_step(f, t, y, h)[0], 0.25)
    assert o1 >= 4.5 and o2 >= 4.5


def test_adaptive_error_shrinks_with_tolerance():
    errs = []
    for rtol in (1e-4, 1e-6, 1e-8):
        cfg = IntegratorConfig("dopri5_adaptive", rtol=rtol, atol=rtol * 1e-2)
        ts = integrate_ode(lambda t, y: np.array([y[1], -y[0]]), [0.0, 1.0], (0.0, 10.0), cfg)
        errs.append(abs(ts.values[-1, 0] - math.sin(10.0)))
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 1e-6


def test_blowup_raises_with_last_time():
    with pytest.raises(IntegrationError) as exc:
        integrate_ode(lambda t, y: y * y, [1.0], (0.0, 2.0), IntegratorConfig(), 0.1)
    assert exc.value.last_time is not None and 0.9 < exc.value.last_time < 1.01
    assert exc.value.to_dict()["error"] == "integration_failure"


def test_stop_norm_sentinel():
    with pytest.raises(IntegrationError):
        integrate_ode(lambda t, y: y, [1.0], (0.0, 10.0), IntegratorConfig(), 0.5, stop_norm=100.0)


def test_bad_configs_rejected():
    with pytest.raises(ValueError):
        IntegratorConfig("euler")
    with pytest.raises(ValueError):
        IntegratorConfig(rtol=0.0)
    with pytest.raises(ValueError):
        integrate_ode(lambda t, y: y, [1.0], (1.0, 0.0))


# ---------------------------------------------------------------- Lorenz data

def test_simulate_lorenz_single_sample():
    ts = simulate_lorenz(n_samples=1, seed=7)
    assert ts.values.shape == (1, 3) and np.all(np.isfinite(ts.values))


def test_simulate_lorenz_deterministic():
    a = simulate_lorenz(n_samples=500, transient_discard=100, seed=3)
    b = simulate_lorenz(n_samples=500, transient_discard=100, seed=3)
    c = simulate_lorenz(n_samples=500, transient_discard=100, seed=4)
    assert a.equals(b)
    assert not np.array_equal(a.values, c.values)


def test_simulate_lorenz_layout():
    ts = simulate_lorenz(n_samples=50, sample_dt=0.1, transient_discard=20, seed=0)
    assert ts.channel_names == ["x", "y", "z"]
    assert ts.dt == 0.1 and ts.t0 == pytest.approx(2.0)
    full = simulate_lorenz(n_samples=70, sample_dt=0.1, transient_discard=0, seed=0)
    np.testing.assert_array_equal(ts.values, full.values[20:])


def test_lorenz_attractor_confined(lorenz_long):
    # 10^5 samples at dt = 0.1 is 10^4 time units
    assert np.max(np.abs(lorenz_long.values[:, 2])) < 60.0
    assert 7.0 < lorenz_long.values[:, 0].std() < 9.0


def test_lorenz_pure_backend_agrees():
    from delaycast import kernels
    if kernels.BACKEND != "compiled":
        pytest.skip("compiled kernels not built")
    cfg = IntegratorConfig()
    y0 = np.array([-3.0, 4.0, 15.0])
    a = kernels.lorenz_dopri5(LorenzParams(), y0, 101, 0.1, cfg, backend="compiled")
    b = kernels.lorenz_dopri5(LorenzParams(), y0, 101, 0.1, cfg, backend="python")
    np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-10)


# ---------------------------------------------------------------- KSE

def test_kse_params_validation():
    with pytest.raises(ValueError):
        KseParams(n_grid=63)
    with pytest.raises(ValueError):
        KseParams(n_grid=8)
    with pytest.raises(ValueError):
        KseParams(L=-1.0)


def test_kse_zero_is_invariant():
    ts = simulate_kse(n_samples=20, u0=np.zeros(64))
    assert np.array_equal(ts.values, np.zeros((20, 64)))


def test_kse_linear_growth_rate():
    measured, rate = kse_growth_rate(L=22.0, k=2, eps=1e-6, t=1.0)
    assert abs(measured - rate) <= 0.01 * abs(rate)


def test_kse_mean_is_zero():
    ts = simulate_kse(n_samples=400, sample_dt=0.25, transient_discard=200, seed=1)
    dx = 22.0 / 64
    assert np.max(np.abs(ts.values.sum(axis=1) * dx)) <= 1e-8


def test_kse_chaotic_amplitude():
    ts = simulate_kse(n_samples=400, sample_dt=1.0, transient_discard=400, seed=2)
    assert 0.5 < ts.values.std() < 3.0
    assert ts.n_channels == 64 and ts.channel_names[0] == "u0"


def _kse_reference(u0, L, t_end):
    """Independent Fourier-Galerkin right-hand side integrated by scipy."""
    scipy_integrate = pytest.importorskip("scipy.integrate")
    n = u0.size
    kk = np.fft.fftfreq(n, d=1.0 / n)
    q = 2 * np.pi / L * kk
    keep = np.abs(kk) < n / 3.0

    def rhs(t, w):
        uh = w[:n] + 1j * w[n:]
        uh = np.where(keep, uh, 0.0)
        u = np.real(np.fft.ifft(uh))
        nl = -0.5j * q * np.fft.fft(u * u)
        nl = np.where(keep, nl, 0.0)
        du = (q**2 - q**4) * uh + nl
        return np.concatenate([du.real, du.imag])

    uh0 = np.fft.fft(u0)
    uh0[n // 2] = 0.0
    sol = scipy_integrate.solve_ivp(rhs, (0.0, t_end), np.concatenate([uh0.real, uh0.imag]),
                                    method="DOP853", rtol=1e-10, atol=1e-12)
    w = sol.y[:, -1]
    return np.real(np.fft.ifft(w[:n] + 1j * w[n:]))


def test_kse_matches_independent_solver():
    p = KseParams(L=22.0, n_grid=64, dt=0.01)
    x = dynsys.kse_grid(p)
    u0 = np.cos(2 * np.pi * x / p.L) * (1 + np.sin(2 * np.pi * x / p.L))
    u0 -= u0.mean()
    ours = simulate_kse(p, n_samples=201, sample_dt=0.01, u0=u0).values[-1]
    ref = _kse_reference(u0, p.L, 2.0)
    np.testing.assert_allclose(ours, ref, atol=1e-7)


def test_kse_step_size_convergence():
    # stiff order reduction keeps the observed order a little below four
    x = dynsys.kse_grid(KseParams())
    u0 = np.cos(2 * np.pi * x / 22.0) * (1 + np.sin(2 * np.pi * x / 22.0))
    fine = simulate_kse(KseParams(dt=0.003125), 2, 1.0, u0=u0).values[-1]
    errs = [np.abs(simulate_kse(KseParams(dt=h), 2, 1.0, u0=u0).values[-1] - fine).max()
            for h in (0.125, 0.0625, 0.03125)]
    orders = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
    assert orders[0] > 3.0 and orders[1] > 3.2


def test_kse_contour_weights_match_series():
    # for small |hL| the phi-function weights approach their Taylor limits
    solver = KseEtdrk4(KseParams(dt=0.25))
    h = 0.25
    assert solver.Q[0] == pytest.approx(h / 2, rel=1e-12)
    assert solver.f1[0] == pytest.approx(h / 6, rel=1e-12)
    assert solver.f2[0] == pytest.approx(h / 6, rel=1e-12)
    assert solver.f3[0] == pytest.approx(h / 6, rel=1e-12)


def test_kse_sample_dt_must_be_multiple():
    with pytest.raises(ValueError):
        simulate_kse(KseParams(dt=0.25), n_samples=3, sample_dt=0.3)


def test_kse_blowup_detected(monkeypatch):
    monkeypatch.setattr(dynsys, "BLOWUP_LIMIT", 1e-3)
    with pytest.raises(IntegrationError):
        simulate_kse(n_samples=5, seed=0)


def test_kse_deterministic():
    a = simulate_kse(n_samples=30, transient_discard=10, seed=5)
    b = simulate_kse(n_samples=30, transient_discard=10, seed=5)
    assert a.equals(b)


# ---------------------------------------------------------------- derivatives

def test_spectral_first_derivative_of_sine():
    L = 22.0
    x = L * np.arange(64) / 64
    d = spectral_derivatives(np.sin(2 * np.pi * x / L), L, 1)
    np.testing.assert_allclose(d, (2 * np.pi / L) * np.cos(2 * np.pi * x / L), atol=1e-10)


def test_spectral_second_derivative_of_sine():
    L = 22.0
    x = L * np.arange(64) / 64
    d = spectral_derivatives(np.sin(2 * np.pi * x / L), L, 2)
    np.testing.assert_allclose(d, -(2 * np.pi / L) ** 2 * np.sin(2 * np.pi * x / L), atol=1e-10)


def test_spectral_derivative_of_constant():
    assert np.allclose(spectral_derivatives(np.full(64, 3.0), 22.0, 1), 0.0, atol=1e-14)


def test_spectral_derivative_batched_and_order_check(rng):
    u = rng.standard_normal((7, 32))
    d = spectral_derivatives(u, 10.0, 1)
    np.testing.assert_allclose(d[3], spectral_derivatives(u[3], 10.0, 1))
    with pytest.raises(ValueError):
        spectral_derivatives(u, 10.0, 3)
