"""Short-time tracking and long-time statistics of model trajectories."""

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .dynsys import spectral_derivatives
from .errors import DegenerateSeriesError, ShapeError
from .io import write_bundle
from .models import embed_rollout, initial_delay_vectors, recon_apply_array
from .timeseries import TimeSeries

log = logging.getLogger(__name__)


@dataclass
class Histogram2D:
    edges_x: np.ndarray
    edges_y: np.ndarray
    counts: np.ndarray
    density: np.ndarray
    n_outside: int = 0

    @property
    def bin_area(self):
        return float((self.edges_x[1] - self.edges_x[0]) * (self.edges_y[1] - self.edges_y[0]))

    @property
    def n_total(self):
        return int(self.counts.sum()) + self.n_outside

    @property
    def outside_fraction(self):
        return self.n_outside / self.n_total if self.n_total else 0.0

    @property
    def range(self):
        return ((self.edges_x[0], self.edges_x[-1]), (self.edges_y[0], self.edges_y[-1]))

    def save(self, path):
        header = {"kind": "histogram2d", "edges_x": self.edges_x.tolist(),
                  "edges_y": self.edges_y.tolist(), "n_outside": self.n_outside,
                  "counts_total": int(self.counts.sum())}
        return write_bundle(path, header, self.density)


def joint_pdf(a, b, n_bins=100, range_policy="data"):
    """Density-normalized 2-D histogram on a uniform grid.

    ``range_policy`` is ``"data"`` (min/max of these samples), an explicit
    ``((lo_a, hi_a), (lo_b, hi_b))``, or a reference :class:`Histogram2D`
    whose edges are reused so model and truth share bins. The density
    integrates to 1 over the in-range samples; the outside count is kept.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size != b.size:
        raise ShapeError("joint_pdf inputs differ in length")
    if a.size == 0:
        raise ValueError("joint_pdf of empty input")
    nx, ny = (n_bins, n_bins) if np.isscalar(n_bins) else n_bins
    if isinstance(range_policy, Histogram2D):
        ex, ey = range_policy.edges_x, range_policy.edges_y
        nx, ny = ex.size - 1, ey.size - 1
    else:
        if isinstance(range_policy, str):
            if range_policy != "data":
                raise ValueError(f"unknown range_policy {range_policy!r}")
            ra, rb = (a.min(), a.max()), (b.min(), b.max())
        else:
            ra, rb = range_policy
        ra, rb = _widen(ra), _widen(rb)
        ex = np.linspace(ra[0], ra[1], nx + 1)
        ey = np.linspace(rb[0], rb[1], ny + 1)
    counts, n_out = kernels.hist2d_counts(a, b, (ex[0], ex[-1]), (ey[0], ey[-1]), nx, ny)
    area = (ex[1] - ex[0]) * (ey[1] - ey[0])
    n_in = counts.sum()
    density = counts / (n_in * area) if n_in else np.zeros(counts.shape)
    return Histogram2D(ex, ey, counts, density, n_out)


def _widen(r):
    lo, hi = float(r[0]), float(r[1])
    if hi > lo:
        return lo, hi
    pad = 0.5 * max(abs(lo), 1.0)
    return lo - pad, hi + pad


def kl_divergence(p_model, p_truth):
    """Histogram KL divergence of the model density from the truth density.

    Bins in which either density is zero contribute nothing.
    """
    if (p_model.edges_x.shape != p_truth.edges_x.shape
            or p_model.edges_y.shape != p_truth.edges_y.shape
            or not np.array_equal(p_model.edges_x, p_truth.edges_x)
            or not np.array_equal(p_model.edges_y, p_truth.edges_y)):
        raise ShapeError("histograms have different bin edges")
    p, q = p_model.density, p_truth.density
    both = (p > 0) & (q > 0)
    return float(np.sum(p[both] * np.log(p[both] / q[both])) * p_model.bin_area)


def autocorrelation(series, channel=0, max_lag=50, centered=False):
    """``C(k) = <u(t) u(t+k)> / <u^2>`` with the biased (divide-by-n) estimator.

    No mean is subtracted unless ``centered``. ``C(0)`` is exactly 1.
    """
    x = series.values[:, channel] if isinstance(series, TimeSeries) else np.asarray(series, float)
    x = np.asarray(x, dtype=np.float64)
    if centered:
        x = x - x.mean()
    if not np.any(x != 0) or (centered and x.var() == 0):
        raise DegenerateSeriesError("autocorrelation of a zero-variance series")
    n = x.size
    if n < 100 * max_lag:
        log.warning("autocorrelation: %d samples for max_lag %d (< 100x)", n, max_lag)
    max_lag = min(max_lag, n - 1)
    nfft = 1 << int(math.ceil(math.log2(2 * n)))
    f = np.fft.rfft(x, nfft)
    r = np.fft.irfft(f * np.conj(f), nfft)[:max_lag + 1]
    if not np.dot(x, x) > 0:
        # nonzero samples so small that their squares underflow
        raise DegenerateSeriesError("autocorrelation of a series with zero energy")
    r[0] = np.dot(x, x) if r[0] <= 0 else r[0]
    out = r / r[0]
    out[0] = 1.0
    return out


def _unbiased_centered_acf(x, max_lag):
    x = x - x.mean()
    n = x.size
    nfft = 1 << int(math.ceil(math.log2(2 * n)))
    f = np.fft.rfft(x, nfft)
    r = np.fft.irfft(f * np.conj(f), nfft)[:max_lag + 1]
    r = r / (n - np.arange(max_lag + 1))
    return r / r[0]


def detect_collapse(series, window, channel=0, reference_variance=None):
    """Classify the trailing ``window`` time units as chaotic, fixed_point or periodic.

    fixed_point: trailing variance below ``1e-6`` of the reference variance
    (the whole series' variance by default). periodic: the trailing
    autocorrelation (centered, unbiased, parabolic peak refinement) has a
    local maximum above 0.99 at a nonzero lag.
    """
    x = series.values[:, channel]
    n_w = max(4, int(round(window / series.dt)))
    tail = x[-n_w:]
    ref = float(np.var(x)) if reference_variance is None else float(reference_variance)
    if ref == 0 or np.var(tail) < 1e-6 * ref:
        return "fixed_point"
    c = _unbiased_centered_acf(tail, n_w // 2)
    for k in range(1, c.size - 1):
        if c[k] >= c[k - 1] and c[k] >= c[k + 1] and c[k] > c[k - 1]:
            denom = c[k - 1] - 2 * c[k] + c[k + 1]
            peak = c[k] if denom == 0 else c[k] - 0.125 * (c[k + 1] - c[k - 1]) ** 2 / denom
            if peak > 0.99:
                return "periodic"
    return "chaotic"


# --------------------------------------------------------------------------
# tracking

@dataclass
class TrackingResult:
    times: np.ndarray
    error: np.ndarray
    n_members: int
    n_divergent: int
    per_member: np.ndarray = None
    reduce: str = "mean"


def _ordered_reduce(vals, reduce):
    """Column-wise reduction that does not depend on row order."""
    out = np.full(vals.shape[1], np.nan)
    for j in range(vals.shape[1]):
        col = np.sort(vals[:, j][np.isfinite(vals[:, j])])
        if col.size == 0:
            continue
        if reduce == "mean":
            out[j] = math.fsum(col) / col.size
        elif reduce == "median":
            out[j] = float(np.median(col))
        elif reduce == "rms":
            out[j] = math.sqrt(math.fsum(col * col) / col.size)
        else:
            raise ValueError(f"unknown reduce {reduce!r}")
    return out


def tracking_anchors(truth, spec, n_ensembles, n_steps):
    """Evenly spaced window anchors in ``truth`` with full history and horizon."""
    first = spec.window
    last = truth.n_samples - 1 - n_steps * spec.n_stride
    if last - first + 1 < n_ensembles:
        raise ValueError("truth series too short for the requested ensemble")
    return np.linspace(first, last, n_ensembles).round().astype(np.int64)


def ensemble_tracking_error(model, truth, n_ensembles, horizon, reduce="mean", anchors=None):
    """Normalized error ``||u_hat(t) - u(t)|| / RMS(u)`` over an ensemble of windows.

    ``model`` needs ``spec`` and ``forecast(u_d0, n_steps) -> (outputs,
    n_valid)`` at the delay spacing. Members that leave the divergence
    sentinel count until they stop and are excluded afterwards.
    """
    spec = model.spec
    n_steps = int(round(horizon / spec.tau))
    if anchors is None:
        anchors = tracking_anchors(truth, spec, n_ensembles, n_steps)
    u_d0 = initial_delay_vectors(truth, spec, anchors)
    pred, valid = model.forecast(u_d0, n_steps)
    idx = anchors[:, None] + spec.n_stride * np.arange(n_steps + 1)[None, :]
    actual = truth.values[idx]
    rms = math.sqrt(float(np.mean(np.sum(truth.values**2, axis=1))))
    err = np.sqrt(np.sum((pred - actual) ** 2, axis=2)) / rms
    for b, nv in enumerate(valid):
        err[b, nv:] = np.nan
    return TrackingResult(np.arange(n_steps + 1) * spec.tau, _ordered_reduce(err, reduce),
                          len(anchors), int(np.sum(valid < n_steps + 1)), err, reduce)


class PersistenceForecaster:
    """Forecasts ``u_hat(t) = u(0)``."""

    def __init__(self, spec, d_p):
        self.spec = spec
        self.d_p = d_p

    def forecast(self, u_d0, n_steps):
        u = np.asarray(u_d0)[:, :self.d_p]
        return (np.repeat(u[:, None, :], n_steps + 1, axis=1),
                np.full(u.shape[0], n_steps + 1, dtype=np.int64))


class OracleForecaster:
    """Re-runs the true simulator from the full state behind each delay vector.

    ``simulate(state, n_samples, sample_dt)`` returns ``[n_samples, d_o]``.
    Delay vectors are matched to ``full`` by exact lookup of ``partial``.
    """

    def __init__(self, spec, obs, full, simulate):
        from .embedding import delay_vectors
        self.spec, self.obs, self.full, self.simulate = spec, obs, full, simulate
        partial = full.values[:, list(obs.channel_indices)]
        anchors = np.arange(spec.window, full.n_samples)
        keys = delay_vectors(partial, spec.m, spec.n_stride, anchors)
        self._lookup = {row.tobytes(): a for row, a in zip(keys, anchors)}

    def forecast(self, u_d0, n_steps):
        outs = []
        for row in np.atleast_2d(u_d0):
            a = self._lookup[np.ascontiguousarray(row).tobytes()]
            traj = self.simulate(self.full.values[a], n_steps + 1, self.spec.tau)
            outs.append(traj[:, list(self.obs.channel_indices)])
        outs = np.stack(outs)
        return outs, np.full(outs.shape[0], n_steps + 1, dtype=np.int64)


# --------------------------------------------------------------------------
# long-run statistics

@dataclass
class EvalReport:
    autocorr: np.ndarray = None
    autocorr_truth: np.ndarray = None
    lag_dt: float = None
    kl_divergence: float = None
    kl_baseline: float = None
    tracking_error: np.ndarray = None
    tracking_times: np.ndarray = None
    collapsed: bool = False
    collapse_state: str = "chaotic"
    collapse_time: float = None
    metadata: dict = field(default_factory=dict)
    histogram: Histogram2D = None

    def to_dict(self):
        arr = lambda v: None if v is None else np.asarray(v).tolist()  # noqa: E731
        return {
            "autocorr": arr(self.autocorr), "autocorr_truth": arr(self.autocorr_truth),
            "lag_dt": self.lag_dt, "kl_divergence": self.kl_divergence,
            "kl_baseline": self.kl_baseline, "tracking_error": arr(self.tracking_error),
            "tracking_times": arr(self.tracking_times), "collapsed": self.collapsed,
            "collapse_state": self.collapse_state, "collapse_time": self.collapse_time,
            "metadata": self.metadata,
        }

    def save(self, out_dir, name="report"):
        """JSON report plus CSV curves and the histogram bundle."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / f"{name}.json"]
        paths[0].write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        if self.autocorr is not None:
            p = out / f"{name}_autocorr.csv"
            write_curve_csv(p, "lag", np.arange(self.autocorr.size) * (self.lag_dt or 1.0),
                            self.autocorr)
            paths.append(p)
        if self.tracking_error is not None:
            p = out / f"{name}_tracking.csv"
            write_curve_csv(p, "t", self.tracking_times, self.tracking_error)
            paths.append(p)
        if self.histogram is not None:
            paths.append(self.histogram.save(out / f"{name}_pdf"))
        return paths


def write_curve_csv(path, xname, x, y):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([xname, "value"])
        for a, b in zip(x, y):
            w.writerow([repr(float(a)), "" if not np.isfinite(b) else repr(float(b))])


def pdf_variables(full_values, system, L=None):
    """The two variables whose joint PDF summarizes the attractor.

    Lorenz: ``(x, y)``. KSE: ``(u_x, u_xx)`` pooled over grid and time.
    """
    v = np.asarray(full_values)
    if system == "lorenz":
        return v[:, 0], v[:, 1]
    if system == "kse":
        return (spectral_derivatives(v, L, 1).ravel(), spectral_derivatives(v, L, 2).ravel())
    raise ValueError(f"unknown system {system!r}")


def matched_segment(full, duration, dt):
    """Leading ``duration`` of ``full`` sampled as close to ``dt`` as its grid allows.

    Gives the data-vs-data baseline the same trajectory length and sample
    count as the model rollout it is compared against.
    """
    stride = max(1, int(round(dt / full.dt)))
    n = int(round(duration / (stride * full.dt))) + 1
    return full.values[::stride][:n]


def long_run_statistics(model, recon, u_d0, duration, truth_full, system, L=None,
                        n_bins=100, max_lag_time=5.0, sample_dt=None, collapse_window=None,
                        truth_partial=None, baseline_full=None):
    """Roll out, reconstruct and compare statistics with the truth.

    DTS rollouts are sampled at the delay spacing, NODE trajectories at
    ``sample_dt`` (default: the delay spacing). The truth autocorrelation
    uses ``truth_partial`` when given (e.g. finer sampling), else the
    observed channels of ``truth_full``. The baseline KL uses a segment of
    ``baseline_full`` as long as the rollout, sampled at the rollout spacing.
    """
    spec = model.spec
    if model.kind == "dts":
        n_steps = int(round(duration / spec.tau))
        out, valid = model.forecast(u_d0, n_steps)
        n_ok = int(valid[0])
        partial = out[0, :n_ok]
        dt = spec.tau
        embedded = embed_rollout(partial, spec.m)
    else:
        from .models import node_integrate
        dt = sample_dt or spec.tau
        traj, _div = node_integrate(model, u_d0, duration, dt)
        n_ok = traj.n_samples
        partial = traj.values[:, :model.d_p]
        # the reconstruction consumes delay vectors at the model's spacing
        embedded = traj.values
    n_full = int(round(duration / dt)) + 1
    series = TimeSeries(partial, dt)
    report = EvalReport(lag_dt=dt)
    window = collapse_window or min(0.25 * duration, 200.0)
    diverged = n_ok < n_full
    state = "diverged" if diverged else detect_collapse(
        series, window, reference_variance=float(np.var(truth_full.values[:, model_obs(model)[0]])))
    report.collapse_state = state
    report.collapsed = state != "chaotic"
    if diverged:
        report.collapse_time = (n_ok - 1) * dt
    max_lag = int(round(max_lag_time / dt))
    if partial.shape[0] > max_lag + 1 and np.any(partial[:, 0] != 0):
        report.autocorr = autocorrelation(series, 0, max_lag)
    tp = truth_partial
    if tp is None:
        tp = TimeSeries(truth_full.values[:, model_obs(model)], truth_full.dt)
    t_lag = int(round(max_lag_time / tp.dt))
    report.autocorr_truth = autocorrelation(tp, 0, t_lag)
    if recon is not None and embedded.shape[0] > 0:
        rec = recon_apply_array(recon, embedded)
        ta, tb = pdf_variables(truth_full.values, system, L)
        p_truth = joint_pdf(ta, tb, n_bins)
        ma, mb = pdf_variables(rec, system, L)
        p_model = joint_pdf(ma, mb, range_policy=p_truth)
        report.kl_divergence = kl_divergence(p_model, p_truth)
        report.histogram = p_model
        if baseline_full is not None:
            seg = matched_segment(baseline_full, duration, dt)
            ba, bb = pdf_variables(seg, system, L)
            report.kl_baseline = kl_divergence(joint_pdf(ba, bb, range_policy=p_truth), p_truth)
            report.metadata["baseline_samples"] = int(seg.shape[0])
        report.metadata["outside_fraction"] = p_model.outside_fraction
    report.metadata.update(model_kind=model.kind, spec=spec.to_dict(), duration=duration,
                           n_bins=n_bins, n_samples=int(n_ok))
    return report


def model_obs(model):
    obs = getattr(model, "obs", None)
    if obs is None:
        return list(range(model.d_p))
    return list(obs.channel_indices)
