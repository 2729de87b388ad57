"""Run manifests: enough recorded state to re-execute a command and check
that it reproduces the same artifacts."""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import __version__
from .corpus import sha256_file

SCHEMA_VERSION = 1
MANIFEST_NAME = "manifest.json"

# CSV columns that carry wall-clock time and are left out of artifact digests
VOLATILE_COLUMNS = ("wallclock_s",)


def artifact_digest(path: str | Path) -> str:
    """sha256 of a file; for CSVs, of the content without wall-clock columns."""
    path = Path(path)
    if path.suffix != ".csv":
        return sha256_file(path)
    rows = list(csv.reader(io.StringIO(path.read_text())))
    if not rows:
        return hashlib.sha256(b"").hexdigest()
    keep = [k for k, name in enumerate(rows[0]) if name not in VOLATILE_COLUMNS]
    body = "\n".join(",".join(r[k] for k in keep) for r in rows)
    return hashlib.sha256(body.encode()).hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    seeds: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)  # path -> sha256
    outputs: dict = field(default_factory=dict)  # path relative to out dir -> digest
    extra: dict = field(default_factory=dict)
    tool_version: str = __version__
    schema_version: int = SCHEMA_VERSION

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def write(self, out_dir: str | Path) -> Path:
        path = Path(out_dir) / MANIFEST_NAME
        path.write_text(self.to_json() + "\n")
        return path

    @classmethod
    def read(cls, path: str | Path) -> "RunManifest":
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        d = json.loads(path.read_text())
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported manifest schema {d.get('schema_version')}")
        return cls(**d)


def hash_inputs(paths) -> dict:
    return {str(p): sha256_file(p) for p in paths if p}


def hash_outputs(out_dir: str | Path, paths) -> dict:
    out_dir = Path(out_dir)
    return {str(Path(p).relative_to(out_dir)): artifact_digest(p) for p in sorted(map(str, paths))}
