"""Run manifests: config echo, checks and a hashed file inventory, written atomically."""
from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field, asdict
from pathlib import Path as FsPath
from typing import Optional

from ..paths import _json_default

MANIFEST_NAME = "manifest.json"


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: Optional[float] = None
    threshold: Optional[float] = None
    detail: str = ""

    def __post_init__(self):
        self.passed = bool(self.passed)
        if self.value is not None:
            self.value = float(self.value)


@dataclass
class RunManifest:
    config: dict
    version: str
    wall_time: float
    checks: list = field(default_factory=list)
    files: list = field(default_factory=list)
    seed_scheme: str = ""
    threads: int = 1

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks)

    def to_json(self) -> str:
        return json.dumps(asdict(self) | {"passed": self.passed}, indent=2, sort_keys=True,
                          default=_json_default) + "\n"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def atomic_write(path, text: str) -> None:
    """Write through a temporary file in the same directory and rename over the target."""
    path = FsPath(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def inventory(out_dir, names) -> list[dict]:
    out_dir = FsPath(out_dir)
    return [{"path": n, "sha256": sha256_file(out_dir / n), "bytes": (out_dir / n).stat().st_size}
            for n in sorted(names)]


def write_manifest(out_dir, manifest: RunManifest) -> FsPath:
    target = FsPath(out_dir) / MANIFEST_NAME
    atomic_write(target, manifest.to_json())
    return target


def read_manifest(out_dir) -> dict:
    with open(FsPath(out_dir) / MANIFEST_NAME, encoding="utf-8") as fh:
        return json.load(fh)
