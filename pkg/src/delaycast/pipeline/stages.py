"""Library-level building blocks shared by the CLI verbs and figure sweeps.

Nothing here touches the manifest; these functions take a resolved config
and in-memory series and return models or plain result dicts.
"""

import math
from dataclasses import dataclass

import numpy as np

from .. import dynsys, models, nn
from .. import evaluation as ev
from ..embedding import EmbeddingSpec, ObservationSpec, project

CHANNEL_NAMES = {"lorenz": ("x", "y", "z")}


@dataclass(frozen=True)
class Cell:
    """One point of a training sweep."""

    kind: str
    m: int
    tau: float
    seed: int
    channels: tuple = None

    @property
    def name(self):
        obs = "" if self.channels is None else "_c" + "-".join(str(c) for c in self.channels)
        return f"{self.kind}{obs}_m{self.m}_tau{self.tau:g}_s{self.seed}"


def simulate(cfg, seed=None, n_samples=None, sample_dt=None, transient_discard=None):
    sc = cfg["system"]
    seed = sc["seed"] if seed is None else seed
    n = sc["n_samples"] if n_samples is None else n_samples
    dt = sc["sample_dt"] if sample_dt is None else sample_dt
    disc = sc["transient_discard"] if transient_discard is None else transient_discard
    params = sc.get("params", {})
    if sc["kind"] == "lorenz":
        return dynsys.simulate_lorenz(dynsys.LorenzParams(**params), n, dt, disc, seed)
    return dynsys.simulate_kse(dynsys.KseParams(**params), n, dt, disc, seed)


def observation(cfg, n_channels, channels=None):
    if channels is not None:
        return ObservationSpec(tuple(channels))
    o = cfg["observation"]
    if "channels" in o:
        return ObservationSpec(tuple(o["channels"]))
    return ObservationSpec.evenly_spaced(n_channels, o["evenly_spaced"])


def spec_for(m, tau, dt):
    return EmbeddingSpec.from_tau(m, tau, dt)


def train_config(cfg, kind, seed):
    t = dict(cfg["train"][kind])
    for k in ("hidden", "n_multistep", "damping", "rk4_substeps"):
        t.pop(k, None)
    return nn.TrainConfig(seed=int(seed), **t)


def cells(cfg, kinds=None):
    kinds = [k for k in cfg["models"] if kinds is None or k in kinds]
    return [Cell(k, m, tau, s) for k in kinds for m in cfg["embedding"]["m"]
            for tau in cfg["embedding"]["tau"] for s in cfg["seeds"]]


def train_cell(cfg, cell, full, obs=None):
    """Train the model described by ``cell`` on the simulated ``full`` series."""
    obs = obs or observation(cfg, full.n_channels, cell.channels)
    partial = project(full, obs)
    spec = spec_for(cell.m, cell.tau, full.dt)
    tc = train_config(cfg, cell.kind, cell.seed)
    hidden = tuple(cfg["train"][cell.kind]["hidden"])
    if cell.kind == "dts":
        return models.dts_train(partial, spec, tc, hidden=hidden, obs=obs)
    if cell.kind == "recon":
        return models.recon_train(partial, full, spec, tc, hidden=hidden, obs=obs)
    if cell.kind == "node":
        t = cfg["train"]["node"]
        return models.node_train(partial, spec, t.get("n_multistep", 2), t.get("damping", 1e-3),
                                 tc, hidden=hidden, obs=obs, substeps=t.get("rk4_substeps", 1))
    raise ValueError(f"unknown model kind {cell.kind!r}")


def loss_summary(model, full, max_points=5000):
    """Train/test one-step losses in raw units for any model kind."""
    if model.kind != "node":
        return {"train_mse": model.meta["train_mse"], "test_mse": model.meta["test_mse"]}
    partial = project(full, model.obs)
    train, test = partial.split()
    n = max_points + model.spec.window + model.spec.n_stride
    return {"train_mse": models.node_loss_prime(model, train.slice(0, n)),
            "test_mse": models.node_loss_prime(model, test.slice(0, n))}


def acf_max_deviation(report, t_max):
    """Max |C_model - C_truth| over lags ``<= t_max`` on the model's lag grid."""
    if report.autocorr is None:
        return math.inf
    n_model = min(report.autocorr.size, int(round(t_max / report.lag_dt)) + 1)
    truth_dt = report.metadata.get("truth_lag_dt", report.lag_dt)
    ratio = report.lag_dt / truth_dt
    k = int(round(ratio))
    if abs(ratio - k) > 1e-9 or k < 1:
        raise ValueError("model lag spacing is not a multiple of the truth lag spacing")
    truth = report.autocorr_truth[::k]
    n = min(n_model, truth.size)
    return float(np.max(np.abs(report.autocorr[:n] - truth[:n])))


def evaluate_model(cfg, model, full, recon=None, baseline_full=None, fine_partial=None,
                   anchor=None):
    """Tracking and long-run statistics for a trained DTS or NODE model.

    Initial conditions come from the test split of ``full``.
    """
    e = cfg["evaluation"]
    system = cfg["system"]["kind"]
    L = cfg["system"].get("params", {}).get("L")
    partial = project(full, model.obs)
    _, test_p = partial.split()
    tracking = ev.ensemble_tracking_error(model, test_p, e["n_ensembles"], e["horizon"],
                                          reduce="median")
    u0 = models.initial_delay_vectors(
        test_p, model.spec, [model.spec.window if anchor is None else anchor])
    sample_dt = e.get("node_sample_dt") if model.kind == "node" else None
    truth_partial = fine_partial if fine_partial is not None else partial
    rep = ev.long_run_statistics(model, recon, u0, e["duration"], full, system, L,
                                 e["n_bins"], e["max_lag_time"], sample_dt=sample_dt,
                                 truth_partial=truth_partial, baseline_full=baseline_full)
    rep.tracking_times = tracking.times
    rep.tracking_error = tracking.error
    rep.metadata["truth_lag_dt"] = truth_partial.dt
    rep.metadata["n_divergent_members"] = tracking.n_divergent
    rep.metadata["acf_max_deviation"] = acf_max_deviation(rep, e["max_lag_time"])
    return rep


def select_best(scored):
    """Pick ``(seed, model, report)`` with the best long-run statistics.

    Seeds whose long rollout stayed chaotic come first; among those the
    lowest reconstructed-PDF KL wins, ties going to the smaller seed. A
    collapsed orbit can score a low, even negative, KL because bins that
    the truth never visits drop out of the sum, so KL alone is not enough.
    """
    def key(item):
        seed, _, rep = item
        kl = rep.kl_divergence if rep.kl_divergence is not None else math.inf
        return (rep.collapse_state != "chaotic", kl, seed)
    return min(scored, key=key)


def select_tau(recon_by_tau):
    """Delay spacing whose reconstruction map has the lowest test MSE.

    ``recon_by_tau`` maps tau to a trained reconstruction model. The target
    is the full state at the same instant for every tau, so the losses are
    comparable; ties go to the smaller tau.
    """
    return min(recon_by_tau, key=lambda tau: (recon_by_tau[tau].meta["test_mse"], tau))


def tracking_at(report, t):
    i = int(np.argmin(np.abs(report.tracking_times - t)))
    return float(report.tracking_error[i])
