"""Run manifests: what a command read, what it wrote, and with which config."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from .concepts import CONCEPT_SET_VERSION


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _checksums(paths):
    out = {}
    for p in paths:
        p = Path(p)
        if p.is_dir():
            for f in sorted(q for q in p.rglob("*") if q.is_file()):
                out[str(f)] = sha256_file(f)
        elif p.exists():
            out[str(p)] = sha256_file(p)
    return out


@dataclass
class RunManifest:
    command: str
    config: dict
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    timestamp: str = ""
    concept_set_version: int = CONCEPT_SET_VERSION

    def to_json(self) -> str:
        return json.dumps(
            {
                "command": self.command,
                "config": self.config,
                "concept_set_version": self.concept_set_version,
                "inputs": self.inputs,
                "outputs": self.outputs,
                "timestamp": self.timestamp,
            },
            sort_keys=True,
            indent=1,
        )


def write_manifest(path, command: str, config: dict, inputs=(), outputs=()) -> RunManifest:
    """Checksum every input and output file and write the manifest to ``path``."""
    m = RunManifest(
        command=command,
        config=config,
        inputs=_checksums(inputs),
        outputs=_checksums(outputs),
        timestamp=datetime.now(timezone.utc).isoformat(timespec="seconds"),
    )
    Path(path).write_text(m.to_json() + "\n", encoding="utf-8")
    return m
