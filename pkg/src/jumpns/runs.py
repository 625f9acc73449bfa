"""
Run registry: content-addressed output directories.

A run id is the SHA-256 of the command name, the canonical config and the
code-version tag, so identical inputs always land in the same directory and
any change to the solver sources yields a fresh id. Inside a run directory
``manifest.json`` lists the SHA-256 of every output file; ``record.json``
holds the same manifest plus timestamps and the config echo and is itself
excluded from the manifest, so two runs with identical inputs have identical
manifests.
"""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
import shutil
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import __version__

_PACKAGE_DIR = Path(__file__).resolve().parent


@lru_cache(maxsize=1)
def code_version_tag() -> str:
    """``<version>+<digest of the package sources and frozen benchmarks>``."""
    h = hashlib.sha256()
    files = sorted(list(_PACKAGE_DIR.rglob("*.py")) + list(_PACKAGE_DIR.rglob("*.toml")))
    for path in files:
        h.update(path.relative_to(_PACKAGE_DIR).as_posix().encode())
        h.update(b"\0")
        h.update(path.read_bytes())
    return f"{__version__}+{h.hexdigest()[:12]}"


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_json_default)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")


def make_run_id(command: str, config: dict) -> str:
    payload = canonical_json({"command": command, "config": config, "code": code_version_tag()})
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


@dataclass
class RunRecord:
    run_id: str
    command: str
    directory: Path
    config: dict
    started: str
    finished: str | None = None
    manifest: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "command": self.command,
            "code_version": code_version_tag(),
            "started": self.started,
            "finished": self.finished,
            "config": self.config,
            "manifest": self.manifest,
            "summary": self.summary,
        }


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def open_run(out_root, command: str, config: dict) -> RunRecord:
    """Create (or reset) the directory for this run."""
    run_id = make_run_id(command, config)
    directory = Path(out_root) / f"{command}-{run_id}"
    if directory.exists():
        shutil.rmtree(directory)
    directory.mkdir(parents=True)
    return RunRecord(run_id, command, directory, config, _now())


def close_run(record: RunRecord, summary: dict) -> RunRecord:
    """Write ``summary.json``, ``manifest.json`` and ``record.json``."""
    record.summary = summary
    write_json(record.directory / "summary.json", summary)
    files = sorted(p for p in record.directory.rglob("*")
                   if p.is_file() and p.name not in ("manifest.json", "record.json"))
    record.manifest = {p.relative_to(record.directory).as_posix(): file_sha256(p) for p in files}
    write_json(record.directory / "manifest.json", record.manifest)
    record.finished = _now()
    write_json(record.directory / "record.json", record.to_dict())
    return record
