"""Figure sweeps. Each target writes plot-ready CSV (and histogram bundles).

Targets and their sweeps:

fig2   Lorenz one-step losses vs m for u_p = x, y, z (dts, node, recon)
fig3   Lorenz ensemble tracking error, u_p = x (m=3) and y (m=4)
fig4   Lorenz autocorrelation of the observable, truth vs dts vs node
fig5   Lorenz joint PDF P(x, y) and its KL divergence vs m
fig6   KSE one-step losses vs (d_p, m)
fig7   KSE ensemble tracking error at d_p * m = 16
fig8   KSE autocorrelation at d_p * m = 16
fig11  KSE L=44 joint PDFs of (u_x, u_xx) at d_p * m = 32

Models are cached under the run's ``models/`` directory, so figures that
share a sweep reuse each other's training. Within a (kind, u_p, m, tau)
group the seed whose reconstructed joint PDF has the lowest KL divergence
is the one shown in trajectory-level figures, preferring seeds whose long
rollout did not collapse.
"""

import csv
import math
from pathlib import Path

import numpy as np

from .. import evaluation as ev
from .. import models
from ..embedding import ObservationSpec, build_embedding, project
from ..io import companion_files
from . import config as cfgmod
from . import stages
from .run import Run

KSE_DP_SWEEP = ((1, 16, 1.5), (2, 8, 1.5), (4, 4, 4.0), (8, 2, 4.0))
KSE44_DP_SWEEP = ((4, 8, 1.25), (8, 4, 2.5), (16, 2, 2.5))
LORENZ_OBS = ((0, 3), (1, 4))  # (channel, m) pairs shown in trajectory figures
LORENZ_NAMES = ("x", "y", "z")


class Figure:
    def __init__(self, run):
        self.run = run
        self.cfg = run.cfg
        self.dir = run.dir("reproduce", self.name)
        self._reports = {}

    name = None
    paths = None

    def rows(self, fname, header, rows):
        p = self.dir / fname
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)
        self.paths.append(p)

    def model(self, kind, channels, m, tau, seed):
        return self.run.get_model(stages.Cell(kind, m, tau, seed, tuple(channels)))

    def report(self, kind, channels, m, tau, seed):
        key = (kind, tuple(channels), m, tau, seed)
        if key not in self._reports:
            model = self.model(kind, channels, m, tau, seed)
            recon = self.model("recon", channels, m, tau, seed)
            run = self.run
            self._reports[key] = (model, stages.evaluate_model(
                self.cfg, model, run.series("full"), recon, run.series("baseline"),
                run.fine_partial(model.obs)))
        return self._reports[key]

    def best(self, kind, channels, m, tau):
        """``(seed, model, report)`` chosen by :func:`stages.select_best`."""
        return stages.select_best([(seed,) + self.report(kind, channels, m, tau, seed)
                                   for seed in self.cfg["seeds"]])

    def tracking_rows(self, label, model):
        """Mean and median ensemble tracking error over the test split."""
        e = self.cfg["evaluation"]
        _, test = project(self.run.series("full"), model.obs).split()
        mean = ev.ensemble_tracking_error(model, test, e["n_ensembles"], e["horizon"], "mean")
        med = ev.ensemble_tracking_error(model, test, e["n_ensembles"], e["horizon"], "median")
        return [label + (model.kind, _f(t), _f(a), _f(b))
                for t, a, b in zip(mean.times, mean.error, med.error)]

    def acf_rows(self, label, rep, source):
        if rep.autocorr is None:
            return []
        lags = np.arange(rep.autocorr.size) * rep.lag_dt
        return [label + (source, _f(t), _f(c)) for t, c in zip(lags, rep.autocorr)]

    def truth_acf_rows(self, label, rep):
        dt = rep.metadata["truth_lag_dt"]
        return [label + ("truth", _f(k * dt), _f(c)) for k, c in enumerate(rep.autocorr_truth)]

    def recon_true_kl(self, recon):
        """KL of the reconstruction applied to true test-split delay vectors."""
        run, cfg = self.run, self.cfg
        system, L = cfg["system"]["kind"], cfg["system"].get("params", {}).get("L")
        full = run.series("full")
        _, test = project(full, recon.obs).split()
        ds = build_embedding(test, recon.spec)
        rec = models.recon_apply_array(recon, ds.inputs)
        p_truth = ev.joint_pdf(*ev.pdf_variables(full.values, system, L), cfg["evaluation"]["n_bins"])
        p_model = ev.joint_pdf(*ev.pdf_variables(rec, system, L), range_policy=p_truth)
        return ev.kl_divergence(p_model, p_truth)

    def baseline_kl(self):
        cfg = self.cfg
        system, L = cfg["system"]["kind"], cfg["system"].get("params", {}).get("L")
        p_truth = ev.joint_pdf(*ev.pdf_variables(self.run.series("full").values, system, L),
                               cfg["evaluation"]["n_bins"])
        base = ev.joint_pdf(*ev.pdf_variables(self.run.series("baseline").values, system, L),
                            range_policy=p_truth)
        return p_truth, ev.kl_divergence(base, p_truth)

    def build(self):
        raise NotImplementedError


def _f(v):
    if v is None:
        return ""
    v = float(v)
    return repr(v) if math.isfinite(v) else ""


def _kinds(cfg, allowed):
    return [k for k in cfg["models"] if k in allowed]


class Fig2(Figure):
    name = "fig2"

    def build(self):
        cfg, tau = self.cfg, self.cfg["embedding"]["tau"][0]
        full = self.run.series("full")
        rows = []
        for ch in range(3):
            for m in cfg["embedding"]["m"]:
                for seed in cfg["seeds"]:
                    for kind in _kinds(cfg, ("dts", "node", "recon")):
                        loss = stages.loss_summary(self.model(kind, (ch,), m, tau, seed), full)
                        rows.append((LORENZ_NAMES[ch], m, seed, kind, _f(loss["train_mse"]),
                                     _f(loss["test_mse"])))
        self.rows("fig2_losses.csv", ["u_p", "m", "seed", "kind", "train_mse", "test_mse"], rows)


class Fig3(Figure):
    name = "fig3"

    def build(self):
        tau, h = self.cfg["embedding"]["tau"][0], self.cfg["evaluation"]["horizon"]
        full = self.run.series("full")
        err, traj = [], []
        for ch, m in LORENZ_OBS:
            for kind in _kinds(self.cfg, ("dts", "node")):
                seed, model, _ = self.best(kind, (ch,), m, tau)
                err += self.tracking_rows((LORENZ_NAMES[ch], m, seed), model)
                _, test = project(full, model.obs).split()
                a = model.spec.window
                n = int(round(h / tau))
                out, _valid = model.forecast(models.initial_delay_vectors(test, model.spec, [a]), n)
                truth = test.values[a + model.spec.n_stride * np.arange(n + 1), 0]
                traj += [(LORENZ_NAMES[ch], m, seed, kind, _f(k * tau), _f(u), _f(p))
                         for k, (u, p) in enumerate(zip(truth, out[0, :, 0]))]
        self.rows("fig3_tracking.csv", ["u_p", "m", "seed", "kind", "t", "mean", "median"], err)
        self.rows("fig3_trajectory.csv",
                  ["u_p", "m", "seed", "kind", "t", "truth", "prediction"], traj)


class Fig4(Figure):
    name = "fig4"

    def build(self):
        tau = self.cfg["embedding"]["tau"][0]
        rows = []
        for ch, m in LORENZ_OBS:
            label = (LORENZ_NAMES[ch], m)
            for i, kind in enumerate(_kinds(self.cfg, ("dts", "node"))):
                _, _, rep = self.best(kind, (ch,), m, tau)
                if i == 0:
                    rows += self.truth_acf_rows(label, rep)
                rows += self.acf_rows(label, rep, kind)
        self.rows("fig4_autocorr.csv", ["u_p", "m", "source", "lag", "C"], rows)


class Fig5(Figure):
    name = "fig5"

    def build(self):
        cfg, tau = self.cfg, self.cfg["embedding"]["tau"][0]
        p_truth, kl_base = self.baseline_kl()
        self.paths += companion_files(p_truth.save(self.dir / "fig5_pdf_data"))
        for ch, m in LORENZ_OBS:
            if "dts" in cfg["models"]:
                _, _, rep = self.best("dts", (ch,), m, tau)
                if rep.histogram is not None:
                    self.paths += companion_files(rep.histogram.save(
                        self.dir / f"fig5_pdf_dts_{LORENZ_NAMES[ch]}_m{m}"))
        rows = []
        for ch in (0, 1):
            for m in cfg["embedding"]["m"]:
                for kind in _kinds(cfg, ("dts", "node")):
                    seed, _, rep = self.best(kind, (ch,), m, tau)
                    rows.append((LORENZ_NAMES[ch], m, kind, seed, _f(rep.kl_divergence),
                                 _f(kl_base)))
                kls = [(self.recon_true_kl(self.model("recon", (ch,), m, tau, s)), s)
                       for s in cfg["seeds"]]
                kl, seed = min(kls)
                rows.append((LORENZ_NAMES[ch], m, "recon_true", seed, _f(kl), _f(kl_base)))
        self.rows("fig5_kl.csv", ["u_p", "m", "kind", "seed", "kl", "kl_baseline"], rows)


def _kse_channels(d_p, n_grid):
    return ObservationSpec.evenly_spaced(n_grid, d_p).channel_indices


class Fig6(Figure):
    name = "fig6"

    def build(self):
        cfg, tau = self.cfg, self.cfg["embedding"]["tau"][0]
        full = self.run.series("full")
        rows = []
        for d_p in (1, 2, 4, 8):
            ch = _kse_channels(d_p, full.n_channels)
            for m in range(1, 16 // d_p + 1):
                for seed in cfg["seeds"]:
                    for kind in _kinds(cfg, ("dts", "node", "recon")):
                        if kind == "node" and d_p * m != 16:
                            continue
                        loss = stages.loss_summary(self.model(kind, ch, m, tau, seed), full)
                        rows.append((d_p, m, _f(tau), seed, kind, _f(loss["train_mse"]),
                                     _f(loss["test_mse"])))
        self.rows("fig6_losses.csv",
                  ["d_p", "m", "tau", "seed", "kind", "train_mse", "test_mse"], rows)


class Fig7(Figure):
    name = "fig7"

    def build(self):
        n_grid = self.run.series("full").n_channels
        rows = []
        for d_p, m, tau in KSE_DP_SWEEP:
            for kind in _kinds(self.cfg, ("dts", "node")):
                seed, model, _ = self.best(kind, _kse_channels(d_p, n_grid), m, tau)
                rows += self.tracking_rows((d_p, m, _f(tau), seed), model)
        self.rows("fig7_tracking.csv",
                  ["d_p", "m", "tau", "seed", "kind", "t", "mean", "median"], rows)


class Fig8(Figure):
    name = "fig8"

    def build(self):
        n_grid = self.run.series("full").n_channels
        rows = []
        for d_p, m, tau in KSE_DP_SWEEP:
            label = (d_p, m, _f(tau))
            for i, kind in enumerate(_kinds(self.cfg, ("dts", "node"))):
                _, _, rep = self.best(kind, _kse_channels(d_p, n_grid), m, tau)
                if i == 0:
                    rows += self.truth_acf_rows(label, rep)
                rows += self.acf_rows(label, rep, kind)
        self.rows("fig8_autocorr.csv", ["d_p", "m", "tau", "source", "lag", "C"], rows)


class Fig11(Figure):
    name = "fig11"

    def build(self):
        n_grid = self.run.series("full").n_channels
        p_truth, kl_base = self.baseline_kl()
        self.paths += companion_files(p_truth.save(self.dir / "fig11_pdf_data"))
        rows = []
        for d_p, m, tau in KSE44_DP_SWEEP:
            ch = _kse_channels(d_p, n_grid)
            for kind in _kinds(self.cfg, ("dts", "node")):
                seed, _, rep = self.best(kind, ch, m, tau)
                rows.append((d_p, m, _f(tau), kind, seed, _f(rep.kl_divergence), _f(kl_base)))
                if rep.histogram is not None:
                    self.paths += companion_files(rep.histogram.save(
                        self.dir / f"fig11_pdf_{kind}_dp{d_p}_m{m}"))
        self.rows("fig11_kl.csv", ["d_p", "m", "tau", "kind", "seed", "kl", "kl_baseline"], rows)


FIGURES = {
    "fig2": ("lorenz", None, Fig2), "fig3": ("lorenz", None, Fig3),
    "fig4": ("lorenz", None, Fig4), "fig5": ("lorenz", None, Fig5),
    "fig6": ("kse", 22.0, Fig6), "fig7": ("kse", 22.0, Fig7), "fig8": ("kse", 22.0, Fig8),
    "fig11": ("kse", 44.0, Fig11),
}


def reproduce(figure, resolve_config, out, force=False):
    """Run one figure target.

    ``resolve_config(system, L)`` returns the validated config. Each distinct
    config gets its own run directory ``<out>/<name>-<hash12>``, so figures
    sharing a config share data and models.
    """
    system, L, cls = FIGURES[figure]
    cfg = resolve_config(system, L)
    run = Run(cfg, Path(out) / f"{cfg.get('name', system)}-{cfgmod.config_hash(cfg)[:12]}", force)
    stage = f"reproduce:{figure}"
    if run.up_to_date(stage):
        return {"status": "skipped", "stage": stage, "run_dir": str(run.out)}
    run.ensure_simulated()
    fig = cls(run)
    fig.paths = []
    fig.build()
    run.finish(stage, fig.paths, {"figure": figure})
    return {"status": "ok", "stage": stage, "run_dir": str(run.out),
            "artifacts": [str(p) for p in fig.paths]}
