"""Partial observation, delay-coordinate datasets and embedding diagnostics.

Delay vectors are flattened newest-first: ``[u_p(t), u_p(t - tau), ...,
u_p(t - (m - 1) tau)]``, each block holding the ``d_p`` observed channels.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DegenerateSeriesError, EmbeddingError, NoMinimumError, ShapeError
from .io import read_bundle, write_bundle
from .timeseries import TimeSeries

FLATTENING_ORDER = "newest_first"


@dataclass(frozen=True)
class ObservationSpec:
    channel_indices: tuple

    def __post_init__(self):
        idx = tuple(int(i) for i in self.channel_indices)
        if not idx:
            raise ValueError("at least one observed channel is required")
        if len(set(idx)) != len(idx):
            raise ValueError("channel indices must be distinct")
        if min(idx) < 0:
            raise ValueError("channel indices must be non-negative")
        object.__setattr__(self, "channel_indices", idx)

    @property
    def d_p(self):
        return len(self.channel_indices)

    @classmethod
    def evenly_spaced(cls, n_channels, d_p):
        """``d_p`` grid points spaced ``n_channels / d_p`` apart, starting at 0."""
        if n_channels % d_p:
            raise ValueError("d_p must divide the number of grid points")
        return cls(tuple(range(0, n_channels, n_channels // d_p)))


@dataclass(frozen=True)
class EmbeddingSpec:
    """``m`` delay blocks spaced ``n_stride`` samples (``tau = n_stride * dt``)."""

    m: int
    n_stride: int
    dt: float

    def __post_init__(self):
        if self.m < 1 or self.n_stride < 1:
            raise ValueError("m and n_stride must be >= 1")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    @property
    def tau(self):
        return self.n_stride * self.dt

    @property
    def window(self):
        """Samples spanned by one delay vector, minus one."""
        return (self.m - 1) * self.n_stride

    @classmethod
    def from_tau(cls, m, tau, dt):
        ratio = tau / dt
        n = int(round(ratio))
        if n < 1 or abs(ratio - n) > 1e-9 * max(1.0, ratio):
            raise ValueError(f"tau={tau} is not an integer multiple of dt={dt}")
        return cls(int(m), n, float(dt))

    def to_dict(self):
        return {"m": self.m, "n_stride": self.n_stride, "dt": self.dt, "tau": self.tau,
                "flattening_order": FLATTENING_ORDER}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["m"]), int(d["n_stride"]), float(d["dt"]))


@dataclass(frozen=True)
class Normalization:
    """Per-channel affine map ``z = (x - mean) / scale``."""

    mean: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        scale = np.atleast_1d(np.asarray(self.scale, dtype=np.float64))
        if mean.shape != scale.shape:
            raise ShapeError("mean and scale shapes differ")
        if not np.all(scale > 0):
            raise DegenerateSeriesError("normalization scale must be positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "scale", scale)

    @classmethod
    def identity(cls, n):
        return cls(np.zeros(n), np.ones(n))

    def tile(self, m):
        """Repeat the channel statistics for ``m`` newest-first delay blocks."""
        return Normalization(np.tile(self.mean, m), np.tile(self.scale, m))

    def apply(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.scale

    def invert(self, z):
        return np.asarray(z, dtype=np.float64) * self.scale + self.mean

    def to_dict(self):
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["mean"]), np.array(d["scale"]))


def normalize_fit(data):
    """Column means and standard deviations of ``data`` (array or TimeSeries)."""
    values = data.values if isinstance(data, TimeSeries) else np.asarray(data, dtype=np.float64)
    values = values.reshape(values.shape[0], -1)
    std = values.std(axis=0)
    if np.any(std == 0):
        raise DegenerateSeriesError("zero-variance channel cannot be normalized")
    return Normalization(values.mean(axis=0), std)


def normalize_apply(x, norm):
    return norm.apply(x)


def normalize_invert(z, norm):
    return norm.invert(z)


# --------------------------------------------------------------------------

def project(series, obs):
    """Keep only the observed channels."""
    n = series.n_channels
    if max(obs.channel_indices) >= n:
        raise ShapeError(f"channel index out of range for {n} channels")
    idx = list(obs.channel_indices)
    names = None if series.channel_names is None else [series.channel_names[i] for i in idx]
    return TimeSeries(series.values[:, idx], series.dt, series.t0, names)


def delay_vectors(values, m, n_stride, anchors):
    """Newest-first delay vectors of ``values[n, d]`` at the given anchor rows."""
    values = np.asarray(values)
    anchors = np.asarray(anchors, dtype=np.int64)
    cols = [values[anchors - j * n_stride] for j in range(m)]
    return np.concatenate(cols, axis=1)


@dataclass
class DelayDataset:
    inputs: np.ndarray
    targets: np.ndarray
    spec: EmbeddingSpec
    target_mode: str
    anchors: np.ndarray
    input_norm: Normalization = None
    target_norm: Normalization = None
    meta: dict = field(default_factory=dict)

    @property
    def n_pairs(self):
        return self.inputs.shape[0]

    def normalized(self):
        """``(inputs, targets)`` in normalized coordinates."""
        x = self.inputs if self.input_norm is None else self.input_norm.apply(self.inputs)
        y = self.targets if self.target_norm is None else self.target_norm.apply(self.targets)
        return x, y

    def save(self, path):
        header = {
            "kind": "delay_dataset",
            "spec": self.spec.to_dict(),
            "target_mode": self.target_mode,
            "input_width": self.inputs.shape[1],
            "target_width": self.targets.shape[1],
            "anchors": self.anchors.tolist(),
            "input_norm": None if self.input_norm is None else self.input_norm.to_dict(),
            "target_norm": None if self.target_norm is None else self.target_norm.to_dict(),
            "meta": self.meta,
        }
        return write_bundle(path, header, np.hstack([self.inputs, self.targets]))

    @classmethod
    def load(cls, path):
        header, arr = read_bundle(path)
        w = header["input_width"]
        norm = lambda d: None if d is None else Normalization.from_dict(d)  # noqa: E731
        return cls(arr[:, :w].copy(), arr[:, w:].copy(), EmbeddingSpec.from_dict(header["spec"]),
                   header["target_mode"], np.array(header["anchors"], dtype=np.int64),
                   norm(header["input_norm"]), norm(header["target_norm"]), header.get("meta", {}))


def build_embedding(series, spec, horizon_stride=None, target_mode="next_partial",
                    aux=None, n_sequence=None):
    """Delay-vector inputs paired with targets.

    target_mode
        ``"next_partial"``: ``u_p(t + horizon_stride * dt)`` (default horizon
        is one delay, ``n_stride``).
        ``"full_state"``: ``aux(t)``, the time-aligned full state.
        ``"embedded_sequence"``: the ``n_sequence`` successive delay vectors
        at one-sample spacing, flattened step-major.
    """
    if abs(series.dt - spec.dt) > 1e-12 * spec.dt:
        raise EmbeddingError("series dt differs from the embedding dt")
    values = series.values
    n = series.n_samples
    if target_mode == "next_partial":
        h = spec.n_stride if horizon_stride is None else int(horizon_stride)
    elif target_mode == "full_state":
        if aux is None:
            raise EmbeddingError("full_state targets need the aux full-state series")
        if aux.dt != series.dt or aux.t0 != series.t0 or aux.n_samples != n:
            raise EmbeddingError("aux series is not time-aligned with the partial series")
        h = 0
    elif target_mode == "embedded_sequence":
        if not n_sequence or n_sequence < 1:
            raise EmbeddingError("embedded_sequence targets need n_sequence >= 1")
        h = int(n_sequence)
    else:
        raise ValueError(f"unknown target_mode {target_mode!r}")
    n_pairs = n - spec.window - h
    if n_pairs < 1:
        raise EmbeddingError(f"series of {n} samples too short for window {spec.window} "
                             f"and horizon {h}")
    anchors = np.arange(spec.window, spec.window + n_pairs)
    inputs = delay_vectors(values, spec.m, spec.n_stride, anchors)
    if target_mode == "next_partial":
        targets = values[anchors + h]
    elif target_mode == "full_state":
        targets = aux.values[anchors]
    else:
        targets = np.concatenate(
            [delay_vectors(values, spec.m, spec.n_stride, anchors + i) for i in range(1, h + 1)],
            axis=1)
    return DelayDataset(np.ascontiguousarray(inputs), np.ascontiguousarray(targets), spec,
                        target_mode, anchors, meta={"horizon_stride": h})


# --------------------------------------------------------------------------
# embedding-parameter diagnostics

def _quantile_bins(x, n_bins):
    order = np.argsort(x, kind="stable")
    ranks = np.empty(x.size, dtype=np.int64)
    ranks[order] = np.arange(x.size)
    return ranks * n_bins // x.size


def mutual_information(series, channel=0, max_lag=20, n_bins=16):
    """Histogram mutual information (nats) between ``u(t)`` and ``u(t + lag)``.

    Samples are assigned to ``n_bins`` equiprobable bins by rank; lag 0
    therefore returns the entropy of that binning.
    """
    if n_bins < 2:
        raise ValueError("n_bins must be >= 2")
    x = series.values[:, channel] if isinstance(series, TimeSeries) else np.asarray(series, float)
    if np.ptp(x) == 0:
        raise DegenerateSeriesError("mutual information of a constant series is undefined")
    if max_lag >= x.size:
        raise ValueError("max_lag must be smaller than the series length")
    bins = _quantile_bins(x, n_bins)
    mi = np.empty(max_lag + 1)
    for lag in range(max_lag + 1):
        a, b = bins[:x.size - lag], bins[lag:]
        joint = np.bincount(a * n_bins + b, minlength=n_bins * n_bins).reshape(n_bins, n_bins)
        p = joint / joint.sum()
        pa, pb = p.sum(axis=1), p.sum(axis=0)
        nz = p > 0
        mi[lag] = float(np.sum(p[nz] * np.log(p[nz] / np.outer(pa, pb)[nz])))
    return mi


def first_minimum(curve):
    """Index of the first local minimum.

    A plateau counts as part of the descent: the minimum is where the
    curve first rises again after having strictly decreased.
    """
    c = np.asarray(curve, dtype=np.float64)
    if c.size < 3:
        raise ValueError("curve needs at least 3 points")
    run_start = 0
    for i in range(c.size - 1):
        if c[i + 1] > c[i]:
            if c[run_start] > c[i]:
                return i
            run_start = i + 1
    raise NoMinimumError("curve has no local minimum")


def false_nearest_neighbors(series, channel_set=None, n_stride=1, m_max=6, rtol_fnn=10.0,
                            atol_fnn=2.0, max_points=10_000, theiler=0, backend=None):
    """Fraction of false nearest neighbors for embedding dimensions ``1..m_max``.

    A nearest neighbor in ``m`` delays is false when adding the next delay
    block grows the distance by more than ``rtol_fnn`` times the current
    distance, or the ``m + 1`` distance exceeds ``atol_fnn`` times the
    attractor size (RMS distance of the observed channels from their mean).
    The same anchor points, at most ``max_points`` of them evenly spaced,
    are used for every ``m``.
    """
    if m_max < 2:
        raise ValueError("m_max must be >= 2")
    values = series.values if channel_set is None else project(series, channel_set).values
    n = values.shape[0]
    if np.any(values.std(axis=0) == 0):
        raise DegenerateSeriesError("false nearest neighbors of a constant series")
    first = m_max * n_stride
    if n - first < 2:
        raise EmbeddingError("series too short for the requested m_max")
    anchors = np.arange(first, n)
    if max_points and anchors.size > max_points:
        anchors = anchors[np.linspace(0, anchors.size - 1, max_points).round().astype(np.int64)]
    r_att = math.sqrt(float(np.sum(values.var(axis=0))))
    fractions = np.empty(m_max)
    for m in range(1, m_max + 1):
        X = delay_vectors(values, m, n_stride, anchors)
        nn, dist = kernels.nearest_neighbors(X, theiler, backend=backend)
        new_block = values[anchors - m * n_stride] - values[anchors[nn] - m * n_stride]
        extra = np.sqrt(np.sum(new_block**2, axis=1))
        with np.errstate(divide="ignore", invalid="ignore"):
            growth = np.where(dist > 0, extra / dist, np.where(extra > 0, np.inf, 0.0))
        false = (growth > rtol_fnn) | (np.sqrt(dist**2 + extra**2) / r_att > atol_fnn)
        fractions[m - 1] = false.mean()
    return fractions
