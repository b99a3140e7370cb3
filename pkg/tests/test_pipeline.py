import csv
import json
import subprocess
import sys

import jsonschema
import pytest
from hypothesis import given
from hypothesis import strategies as st

from delaycast.errors import ArtifactError
from delaycast.pipeline import RunManifest, config_hash, preset_config, resolve
from delaycast.pipeline import config as cfgmod
from delaycast.pipeline.cli import main

TINY = {
    "system": {"kind": "lorenz", "n_samples": 3000, "transient_discard": 100,
               "fine_sample_dt": 0.01},
    "embedding": {"m": [1, 2], "fnn_max_points": 500, "fnn_m_max": 4},
    "seeds": [0],
    "train": {"dts": {"epochs": 2, "hidden": [8, 8]}, "recon": {"epochs": 2, "hidden": [8, 8]},
              "node": {"epochs": 4, "hidden": [8, 8], "lr_decay_every": 2}},
    "evaluation": {"n_ensembles": 20, "horizon": 1.0, "duration": 50.0, "max_lag_time": 2.0},
}


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY))
    return path


def cli(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, (json.loads(out) if code == 0 else None), err


# ---------------------------------------------------------------- config

@pytest.mark.parametrize("system,preset", [("lorenz", "desk"), ("lorenz", "paper"),
                                           ("kse", "desk"), ("kse", "paper")])
def test_presets_validate(system, preset):
    cfg = preset_config(system, preset)
    cfgmod.validate(cfg)
    assert cfg["preset"] == preset and cfg["system"]["kind"] == system


def test_paper_presets_budgets():
    lor = preset_config("lorenz", "paper")
    assert lor["system"]["n_samples"] == 500_000 and lor["system"]["sample_dt"] == 0.1
    assert lor["train"]["dts"]["epochs"] == 1000 and lor["train"]["dts"]["hidden"] == [200, 200]
    assert lor["train"]["node"]["batch_size"] == 100
    kse = preset_config("kse", "paper", L=44.0)
    assert kse["system"]["params"]["L"] == 44.0 and kse["train"]["dts"]["hidden"][0] == 512


def test_desk_preset_matches_acceptance_scale():
    lor = preset_config("lorenz", "desk")
    assert lor["system"]["n_samples"] == 100_000
    assert lor["train"]["dts"]["epochs"] == 200 and lor["train"]["dts"]["hidden"] == [64, 64]
    node = lor["train"]["node"]
    assert node["epochs"] == 5000 and node["n_multistep"] == 2 and node["damping"] == 1e-3


def test_config_round_trip():
    cfg = resolve(TINY, None, None)
    assert cfgmod.parse(cfgmod.dumps(cfg)) == cfg
    assert config_hash(cfgmod.parse(cfgmod.dumps(cfg))) == config_hash(cfg)


@given(st.integers(1, 10**6), st.sampled_from([[0], [1, 2], [3, 4, 5]]),
       st.floats(1e-4, 1.0))
def test_config_round_trip_property(n, seeds, lr):
    cfg = resolve({"system": {"n_samples": n}, "seeds": seeds, "train": {"dts": {"lr0": lr}}},
                  "desk", "lorenz")
    assert cfgmod.parse(cfgmod.dumps(cfg)) == cfg


def test_hash_changes_with_content():
    a = resolve(TINY, None, None)
    b = resolve(dict(TINY, seeds=[1]), None, None)
    assert config_hash(a) != config_hash(b)


@pytest.mark.parametrize("bad", [
    {"system": {"n_samples": 0}},
    {"seeds": []},
    {"embedding": {"m": [0]}},
    {"train": {"dts": {"lr0": -1}}},
    {"unknown_section": 1},
    {"observation": {"channels": [0], "evenly_spaced": 2}},
])
def test_schema_rejects(bad):
    with pytest.raises(jsonschema.ValidationError):
        resolve(bad, None, "lorenz")


def test_cli_reports_invalid_config(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"system": {"n_samples": -3}}))
    code, _, err = cli(capsys, "simulate", "--config", path, "--out", tmp_path / "r")
    assert code == 1
    assert json.loads(err)["error"] == "config_invalid"


# ---------------------------------------------------------------- manifest

def test_manifest_refuses_foreign_config(tmp_path):
    m = RunManifest.open(tmp_path, "a" * 64)
    (tmp_path / "x.txt").write_text("hi")
    m.record("simulate", [tmp_path / "x.txt"])
    m.save()
    with pytest.raises(ArtifactError):
        RunManifest.open(tmp_path, "b" * 64)
    fresh = RunManifest.open(tmp_path, "b" * 64, force=True)
    assert fresh.stages == {}


def test_manifest_detects_modified_artifact(tmp_path):
    m = RunManifest.open(tmp_path, "a" * 64)
    f = tmp_path / "x.txt"
    f.write_text("hi")
    m.record("simulate", [f])
    assert m.stage_valid("simulate")
    f.write_text("changed")
    assert not m.stage_valid("simulate")
    with pytest.raises(ArtifactError):
        m.require("simulate")


def test_manifest_records_environment(tmp_path):
    m = RunManifest.open(tmp_path, "c" * 64)
    m.save()
    d = json.loads((tmp_path / "manifest.json").read_text())
    for key in ("config_hash", "git_describe", "created", "threads", "stages"):
        assert key in d


# ---------------------------------------------------------------- CLI workflow

def test_full_workflow(tmp_path, tiny_config, capsys):
    out = tmp_path / "run"
    common = ["--config", tiny_config, "--out", out]

    code, res, _ = cli(capsys, "simulate", *common)
    assert code == 0 and res["status"] == "ok"
    assert (out / "data" / "full.json").exists() and (out / "data" / "full.f64").exists()

    code, res, _ = cli(capsys, "embed", *common)
    assert code == 0
    analysis = json.loads((out / "embed" / "analysis.json").read_text())
    assert 1 <= analysis["mi_first_minimum_lag"] <= 3

    code, res, err = cli(capsys, "embed", *common)
    assert code == 0 and "skip:" in err

    code, res, _ = cli(capsys, "train", *common)
    assert code == 0
    assert sorted(p.name for p in (out / "models").glob("*.json")) == sorted(
        f"{k}_m{m}_tau0.1_s0.json" for k in ("dts", "node", "recon") for m in (1, 2))

    code, res, _ = cli(capsys, "evaluate", *common)
    assert code == 0
    with open(out / "eval" / "summary.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert {r["kind"] for r in rows} == {"dts", "node"} and len(rows) == 4
    assert all(r["kl"] for r in rows)

    model = out / "models" / "dts_m2_tau0.1_s0.json"
    code, res, _ = cli(capsys, "rollout", *common, "--model", model, "--duration", 5)
    assert code == 0
    node = out / "models" / "node_m2_tau0.1_s0.json"
    code, res, _ = cli(capsys, "rollout", *common, "--model", node, "--duration", 1,
                       "--sample-dt", 0.01)
    assert code == 0

    RunManifest.load(out).validate()


def test_foreign_config_refused_then_forced(tmp_path, tiny_config, capsys):
    out = tmp_path / "run"
    assert cli(capsys, "simulate", "--config", tiny_config, "--out", out)[0] == 0
    other = tmp_path / "other.json"
    other.write_text(json.dumps(dict(TINY, seeds=[3])))
    code, _, err = cli(capsys, "simulate", "--config", other, "--out", out)
    assert code == 1 and json.loads(err)["error"] == "artifact_error"
    code, _, _ = cli(capsys, "simulate", "--config", other, "--out", out, "--force")
    assert code == 0


def test_missing_upstream_stage(tmp_path, tiny_config, capsys):
    code, _, err = cli(capsys, "train", "--config", tiny_config, "--out", tmp_path / "r")
    assert code == 1 and json.loads(err)["status"] == "error"


def test_monotone_mi_is_reported(tmp_path, capsys):
    path = tmp_path / "mono.json"
    path.write_text(json.dumps(dict(TINY, embedding=dict(TINY["embedding"], mi_max_lag=2))))
    out = tmp_path / "r"
    assert cli(capsys, "simulate", "--config", path, "--out", out)[0] == 0
    code, _, err = cli(capsys, "embed", "--config", path, "--out", out)
    assert code == 1 and json.loads(err)["error"] == "no_minimum"


def test_same_config_gives_same_checksums(tmp_path, tiny_config, capsys):
    sums = []
    for name in ("a", "b"):
        out = tmp_path / name
        for verb in ("simulate", "embed", "train"):
            assert cli(capsys, verb, "--config", tiny_config, "--out", out)[0] == 0
        sums.append(RunManifest.load(out).checksums())
    assert sums[0] == sums[1] and sums[0]


def test_reproduce_fig2_columns(tmp_path, tiny_config, capsys):
    code, res, _ = cli(capsys, "reproduce", "fig2", "--config", tiny_config, "--out", tmp_path)
    assert code == 0
    csv_path = next(tmp_path.glob("*/reproduce/fig2/fig2_losses.csv"))
    with open(csv_path) as fh:
        rows = list(csv.DictReader(fh))
    assert set(rows[0]) == {"u_p", "m", "seed", "kind", "train_mse", "test_mse"}
    assert {r["u_p"] for r in rows} >= {"x"}


def test_reproduce_rejects_wrong_system(tmp_path, tiny_config, capsys):
    code, _, err = cli(capsys, "reproduce", "fig6", "--config", tiny_config, "--out", tmp_path)
    assert code == 1 and json.loads(err)["error"] == "config_invalid"


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "delaycast.pipeline.cli", "--help"],
                         capture_output=True, text=True)
    assert out.returncode == 0
    for verb in ("simulate", "embed", "train", "rollout", "evaluate", "reproduce"):
        assert verb in out.stdout


def test_select_best_skips_collapsed_seeds():
    from types import SimpleNamespace

    from delaycast.pipeline.stages import select_best

    rep = lambda kl, state: SimpleNamespace(kl_divergence=kl, collapse_state=state)  # noqa: E731
    scored = [(0, "a", rep(0.2, "chaotic")), (1, "b", rep(-0.3, "periodic")),
              (2, "c", rep(0.1, "chaotic")), (3, "d", rep(0.1, "chaotic"))]
    assert select_best(scored)[0] == 2
    # with every seed collapsed the KL ranking still decides
    assert select_best([(0, "a", rep(0.5, "fixed_point")), (1, "b", rep(None, "diverged"))])[0] == 0


def test_select_tau_prefers_lowest_recon_loss():
    from types import SimpleNamespace

    from delaycast.pipeline.stages import select_tau

    rec = lambda mse: SimpleNamespace(meta={"test_mse": mse})  # noqa: E731
    assert select_tau({1.5: rec(0.03), 4.0: rec(0.01)}) == 4.0
    assert select_tau({4.0: rec(0.01), 1.5: rec(0.01)}) == 1.5
