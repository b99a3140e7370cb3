"""Uniformly sampled multivariate trajectories."""

from dataclasses import dataclass, field

import numpy as np

from .io import read_bundle, write_bundle


@dataclass(frozen=True)
class TimeSeries:
    """``values[n_samples, n_channels]`` sampled every ``dt`` from ``t0``."""

    values: np.ndarray
    dt: float
    t0: float = 0.0
    channel_names: list = field(default=None)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError(f"values must be [n_samples, n_channels], got {v.shape}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not np.all(np.isfinite(v)):
            raise ValueError("values contain NaN or Inf")
        names = self.channel_names
        if names is not None:
            names = [str(n) for n in names]
            if len(names) != v.shape[1]:
                raise ValueError("channel_names length does not match n_channels")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "dt", float(self.dt))
        object.__setattr__(self, "t0", float(self.t0))
        object.__setattr__(self, "channel_names", names)

    @property
    def n_samples(self):
        return self.values.shape[0]

    @property
    def n_channels(self):
        return self.values.shape[1]

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(self.n_samples)

    def __len__(self):
        return self.n_samples

    def slice(self, start=0, stop=None):
        """Sub-series over sample indices ``[start, stop)`` with shifted ``t0``."""
        start, stop, _ = slice(start, stop).indices(self.n_samples)
        return TimeSeries(self.values[start:stop], self.dt, self.t0 + start * self.dt,
                          self.channel_names)

    def split(self, train_fraction=0.8):
        """Chronological train/test split; nothing is shuffled across the cut."""
        cut = int(round(train_fraction * self.n_samples))
        return self.slice(0, cut), self.slice(cut, None)

    def header(self):
        return {
            "n_samples": self.n_samples,
            "n_channels": self.n_channels,
            "dt": self.dt,
            "t0": self.t0,
            "channel_names": self.channel_names,
        }

    def save(self, path, extra=None):
        header = self.header()
        header["kind"] = "timeseries"
        if extra:
            header.update(extra)
        return write_bundle(path, header, self.values)

    @classmethod
    def load(cls, path):
        header, arr = read_bundle(path)
        return cls(arr.reshape(header["n_samples"], header["n_channels"]),
                   header["dt"], header["t0"], header.get("channel_names"))

    def equals(self, other):
        """Bit-exact equality of values and metadata."""
        return (self.dt == other.dt and self.t0 == other.t0
                and self.channel_names == other.channel_names
                and self.values.shape == other.values.shape
                and self.values.tobytes() == other.values.tobytes())
