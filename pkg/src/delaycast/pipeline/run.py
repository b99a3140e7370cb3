"""Run directory handling and the stage verbs behind the CLI.

Layout under ``--out``::

    manifest.json
    config.json
    data/       full, baseline and (Lorenz) finely sampled truth series
    embed/      MI / FNN analysis and one delay dataset per (m, tau)
    models/     trained models and their loss histories
    rollouts/   forecast trajectories
    eval/       per-model reports and summary.csv
    reproduce/  figure bundles
"""

import csv
import json
import logging
import os
from pathlib import Path

import numpy as np

from .. import models
from ..embedding import (build_embedding, false_nearest_neighbors, first_minimum,
                         mutual_information, project)
from ..errors import ArtifactError
from ..io import companion_files
from ..timeseries import TimeSeries
from . import config as cfgmod
from . import stages
from .manifest import RunManifest

log = logging.getLogger(__name__)

FINE_MAX_SAMPLES = 200_000


def thread_record():
    return {"DELAYCAST_THREADS": os.environ.get("DELAYCAST_THREADS")}


class Run:
    """A resolved config bound to an output directory and its manifest."""

    def __init__(self, cfg, out, force=False):
        self.cfg = cfg
        self.out = Path(out)
        self.force = force
        self.hash = cfgmod.config_hash(cfg)
        self.manifest = RunManifest.open(self.out, self.hash, force=force)
        self.manifest.threads = thread_record()
        self._cache = {}

    def path(self, *parts):
        p = self.out.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def dir(self, *parts):
        p = self.out.joinpath(*parts)
        p.mkdir(parents=True, exist_ok=True)
        return p

    def write_config(self):
        p = self.path("config.json")
        p.write_text(cfgmod.dumps(self.cfg))
        return p

    def up_to_date(self, stage):
        return not self.force and self.manifest.stage_valid(stage)

    def finish(self, stage, paths, params=None):
        self.manifest.record(stage, paths, params)
        self.manifest.save()

    # ------------------------------------------------------------------
    # data access

    def series(self, name):
        if name not in self._cache:
            self.manifest.require("simulate")
            p = self.out / "data" / f"{name}.json"
            if not p.exists():
                raise ArtifactError(f"no {name} series in this run", artifact=str(p))
            self._cache[name] = TimeSeries.load(p)
        return self._cache[name]

    def ensure_simulated(self):
        if not self.manifest.stage_valid("simulate"):
            simulate(self)

    def fine_partial(self, obs):
        p = self.out / "data" / "fine.json"
        if not p.exists():
            return None
        return project(self.series("fine"), obs)

    def model_path(self, cell):
        return self.out / "models" / f"{cell.name}.json"

    def get_model(self, cell, full=None):
        """Trained model for ``cell``: reuse a saved one, else train and save it."""
        p = self.model_path(cell)
        if p.exists() and not self.force:
            return models.load_model(p)
        model = stages.train_cell(self.cfg, cell, full if full is not None else self.series("full"))
        save_model_files(self, cell, model)
        return model


def save_model_files(run, cell, model):
    p = run.path("models", f"{cell.name}.json")
    paths = companion_files(models.save_model(model, p))
    h = model.meta.get("history")
    if h is not None:
        hp = run.path("models", f"{cell.name}_history.csv")
        h.to_csv(hp)
        paths.append(hp)
    return paths


def _result(stage, paths=(), status="ok", **extra):
    d = {"status": status, "stage": stage, "artifacts": [str(p) for p in paths]}
    d.update(extra)
    return d


# ----------------------------------------------------------------------
# verbs

def simulate(run):
    stage = "simulate"
    if run.up_to_date(stage):
        return _result(stage, status="skipped")
    cfg = run.cfg
    sc = cfg["system"]
    names = [n for n in (stages.CHANNEL_NAMES.get(sc["kind"]) or ())]
    paths = [run.write_config()]
    full = stages.simulate(cfg)
    paths += companion_files(full.save(run.path("data", "full.json"), {"role": "truth"}))
    base = stages.simulate(cfg, seed=sc.get("baseline_seed", sc["seed"] + 1000))
    paths += companion_files(base.save(run.path("data", "baseline.json"), {"role": "baseline"}))
    fdt = sc.get("fine_sample_dt")
    if fdt:
        n_fine = min(FINE_MAX_SAMPLES, int(round(sc["n_samples"] * sc["sample_dt"] / fdt)))
        disc = int(round(sc["transient_discard"] * sc["sample_dt"] / fdt))
        fine = stages.simulate(cfg, seed=sc.get("baseline_seed", sc["seed"] + 1000) + 1,
                               n_samples=n_fine, sample_dt=fdt, transient_discard=disc)
        paths += companion_files(fine.save(run.path("data", "fine.json"), {"role": "fine_truth"}))
    run._cache.clear()
    run.finish(stage, paths, {"n_samples": full.n_samples, "channels": names})
    return _result(stage, paths)


def embed(run):
    stage = "embed"
    run.manifest.require("simulate")
    if run.up_to_date(stage):
        return _result(stage, status="skipped")
    cfg, e = run.cfg, run.cfg["embedding"]
    full = run.series("full")
    obs = stages.observation(cfg, full.n_channels)
    partial = project(full, obs)
    mi = mutual_information(partial, 0, e.get("mi_max_lag", 20), e.get("mi_bins", 16))
    lag = first_minimum(mi)
    fnn = false_nearest_neighbors(partial, None, lag, e.get("fnn_m_max", 6),
                                  e.get("fnn_rtol", 10.0), e.get("fnn_atol", 2.0),
                                  e.get("fnn_max_points", 10_000))
    below = [i + 1 for i, f in enumerate(fnn) if f < 0.01]
    analysis = {"mi_first_minimum_lag": int(lag), "tau": lag * full.dt,
                "fnn_fraction": [float(f) for f in fnn],
                "fnn_dimension": below[0] if below else None,
                "observation": list(obs.channel_indices)}
    paths = [run.path("embed", "analysis.json")]
    paths[0].write_text(json.dumps(analysis, indent=2, sort_keys=True))
    paths.append(_write_rows(run.path("embed", "mi.csv"), ["lag", "mi"],
                             [(k, repr(float(v))) for k, v in enumerate(mi)]))
    paths.append(_write_rows(run.path("embed", "fnn.csv"), ["m", "fraction"],
                             [(k + 1, repr(float(v))) for k, v in enumerate(fnn)]))
    for m in e["m"]:
        for tau in e["tau"]:
            spec = stages.spec_for(m, tau, full.dt)
            ds = build_embedding(partial, spec)
            paths += companion_files(ds.save(run.path("embed", f"ds_m{m}_tau{tau:g}.json")))
    run.finish(stage, paths, analysis)
    return _result(stage, paths, analysis=analysis)


def train(run, kinds=None):
    kinds = list(kinds or run.cfg["models"])
    run.manifest.require("simulate")
    results = []
    for kind in kinds:
        stage = f"train:{kind}"
        if run.up_to_date(stage):
            results.append(_result(stage, status="skipped"))
            continue
        full = run.series("full")
        paths, rows = [], []
        for cell in stages.cells(run.cfg, [kind]):
            model = stages.train_cell(run.cfg, cell, full)
            paths += save_model_files(run, cell, model)
            loss = stages.loss_summary(model, full)
            rows.append((cell.name, cell.m, repr(cell.tau), cell.seed,
                         repr(loss["train_mse"]), repr(loss["test_mse"])))
        paths.append(_write_rows(run.path("models", f"{kind}_losses.csv"),
                                 ["cell", "m", "tau", "seed", "train_mse", "test_mse"], rows))
        run.finish(stage, paths, {"n_models": len(rows)})
        results.append(_result(stage, paths))
    return results[0] if len(results) == 1 else {"status": "ok", "stages": results}


def rollout(run, model_path, duration, anchor=None, sample_dt=None):
    model_path = Path(model_path)
    stem = model_path.name[:-5] if model_path.name.endswith(".json") else model_path.name
    if not model_path.name.endswith(".json"):
        model_path = model_path.with_name(stem + ".json")
    tag = f"{stem}_T{duration:g}"
    if anchor is not None:
        tag += f"_a{int(anchor)}"
    if sample_dt is not None:
        tag += f"_dt{sample_dt:g}"
    stage = f"rollout:{tag}"
    if run.up_to_date(stage):
        return _result(stage, status="skipped")
    model = models.load_model(model_path)
    if model.kind == "recon":
        raise ArtifactError("rollout needs a dts or node model", model=str(model_path))
    full = run.series("full")
    _, test = project(full, model.obs).split()
    a = model.spec.window if anchor is None else int(anchor)
    u0 = models.initial_delay_vectors(test, model.spec, [a])[0]
    if model.kind == "dts":
        ser, divergent = models.dts_rollout(model, u0, int(round(duration / model.spec.tau)))
    else:
        ser, divergent = models.node_integrate(model, u0, duration, sample_dt or model.spec.tau)
    paths = companion_files(ser.save(run.path("rollouts", f"{tag}.json"),
                                     {"model": stem, "divergent": bool(divergent), "anchor": a}))
    run.finish(stage, paths, {"divergent": bool(divergent), "n_samples": ser.n_samples})
    return _result(stage, paths, divergent=bool(divergent))


def evaluate(run):
    stage = "evaluate"
    cfg = run.cfg
    kinds = [k for k in cfg["models"] if k in ("dts", "node")]
    for k in cfg["models"]:
        run.manifest.require(f"train:{k}")
    if run.up_to_date(stage):
        return _result(stage, status="skipped")
    full, base = run.series("full"), run.series("baseline")
    rows, paths = [], []
    for cell in stages.cells(cfg, kinds):
        model = models.load_model(run.model_path(cell))
        rcell = stages.Cell("recon", cell.m, cell.tau, cell.seed)
        recon = models.load_model(run.model_path(rcell)) if "recon" in cfg["models"] else None
        rep = stages.evaluate_model(cfg, model, full, recon, base, run.fine_partial(model.obs))
        paths += [q for f in rep.save(run.dir("eval", cell.name), "report")
                  for q in (companion_files(f) if f.name.endswith("_pdf.json") else [f])]
        rows.append((cell.name, cell.kind, cell.m, repr(cell.tau), cell.seed,
                     _fmt(stages.tracking_at(rep, 1.0)), _fmt(rep.tracking_error[-1]),
                     _fmt(rep.kl_divergence), _fmt(rep.kl_baseline), rep.collapse_state,
                     _fmt(rep.metadata["acf_max_deviation"])))
    paths.append(_write_rows(run.path("eval", "summary.csv"),
                             ["cell", "kind", "m", "tau", "seed", "tracking_t1",
                              "tracking_horizon", "kl", "kl_baseline", "collapse_state",
                              "acf_max_deviation"], rows))
    run.finish(stage, paths, {"n_reports": len(rows)})
    return _result(stage, paths)


def _fmt(v):
    if v is None:
        return ""
    v = float(v)
    return repr(v) if np.isfinite(v) else ""


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path
