"""Run manifest: which stages ran, under which config, producing which files."""

import json
import os
import subprocess
import time
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import ArtifactError
from ..io import sha256_file

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1


def git_describe():
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=here,
                             capture_output=True, text=True, timeout=10)
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() if out.returncode == 0 and out.stdout.strip() else "unknown"


def _now():
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


@dataclass
class RunManifest:
    root: Path
    config_hash: str
    git: str = field(default_factory=git_describe)
    created: str = field(default_factory=_now)
    updated: str = None
    threads: dict = field(default_factory=dict)
    stages: dict = field(default_factory=dict)

    @property
    def path(self):
        return Path(self.root) / MANIFEST_NAME

    # -- persistence
    def to_dict(self):
        return {"manifest_version": MANIFEST_VERSION, "config_hash": self.config_hash,
                "git_describe": self.git, "created": self.created, "updated": self.updated,
                "threads": self.threads, "stages": self.stages}

    def save(self):
        self.updated = _now()
        Path(self.root).mkdir(parents=True, exist_ok=True)
        tmp = self.path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        os.replace(tmp, self.path)

    @classmethod
    def load(cls, root):
        p = Path(root) / MANIFEST_NAME
        d = json.loads(p.read_text())
        if d.get("manifest_version") != MANIFEST_VERSION:
            raise ArtifactError(f"unsupported manifest version in {p}")
        return cls(Path(root), d["config_hash"], d.get("git_describe", "unknown"),
                   d.get("created"), d.get("updated"), d.get("threads", {}), d.get("stages", {}))

    @classmethod
    def open(cls, root, config_hash, force=False):
        """Load the manifest under ``root`` or start one.

        A manifest written for a different config is refused unless
        ``force``, in which case its stage records are dropped.
        """
        p = Path(root) / MANIFEST_NAME
        if not p.exists():
            return cls(Path(root), config_hash)
        m = cls.load(root)
        if m.config_hash != config_hash:
            if not force:
                raise ArtifactError(
                    f"{p} was written for config {m.config_hash[:12]}, current config is "
                    f"{config_hash[:12]}; pass --force to overwrite")
            return cls(Path(root), config_hash)
        return m

    # -- stages
    def record(self, stage, paths, params=None):
        root = Path(self.root)
        arts = {}
        for p in paths:
            rel = Path(p).resolve().relative_to(root.resolve()).as_posix()
            arts[rel] = sha256_file(p)
        self.stages[stage] = {"artifacts": dict(sorted(arts.items())), "params": params or {},
                              "completed": _now()}

    def stage_valid(self, stage):
        """True when ``stage`` is recorded and every artifact matches its checksum."""
        rec = self.stages.get(stage)
        if rec is None:
            return False
        for rel, digest in rec["artifacts"].items():
            p = Path(self.root) / rel
            if not p.exists() or sha256_file(p) != digest:
                return False
        return True

    def require(self, stage):
        """Raise unless ``stage`` has valid artifacts."""
        if stage not in self.stages:
            raise ArtifactError(f"missing upstream stage {stage!r}; run it first",
                                stage=stage)
        if not self.stage_valid(stage):
            raise ArtifactError(f"artifacts of stage {stage!r} are missing or modified",
                                stage=stage)

    def artifacts(self, stage):
        return [Path(self.root) / rel for rel in self.stages[stage]["artifacts"]]

    def validate(self):
        bad = [s for s in self.stages if not self.stage_valid(s)]
        if bad:
            raise ArtifactError(f"stale or missing artifacts in stages {bad}", stages=bad)

    def checksums(self):
        """``{stage: {artifact: sha256}}``, the part that must be reproducible."""
        return {s: dict(r["artifacts"]) for s, r in sorted(self.stages.items())}
