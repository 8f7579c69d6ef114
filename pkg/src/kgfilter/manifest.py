"""Run manifests: what produced an output file."""

from __future__ import annotations

import hashlib
import json
import os
import platform
from dataclasses import dataclass, field
from datetime import datetime, timezone

from . import __version__


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    inputs: dict[str, str] = field(default_factory=dict)
    seed: int | None = None
    tool_version: str = __version__
    started_at: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())
    finished_at: str | None = None
    outputs: list[str] = field(default_factory=list)

    @property
    def run_id(self) -> str:
        """Content hash of everything that determines the outputs."""
        payload = json.dumps(
            {"command": self.command, "config": self.config, "inputs": self.inputs,
             "seed": self.seed, "version": self.tool_version},
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]

    def add_input(self, name: str, path) -> None:
        self.inputs[name] = file_digest(path)

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "command": self.command,
            "tool_version": self.tool_version,
            "config": self.config,
            "inputs": self.inputs,
            "seed": self.seed,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "outputs": self.outputs,
            "python": platform.python_version(),
        }

    def write(self, path) -> None:
        self.finished_at = datetime.now(timezone.utc).isoformat()
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
