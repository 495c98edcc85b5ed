"""Deterministic report emission for the command-line tools.

Every command produces three files in its output directory: a
human-diffable text report, a machine-readable JSON duplicate of the
same content, and a run manifest. The manifest carries the command,
the fully resolved configuration, input digests, the seed, and the
tool version; the run id is a digest over exactly those fields, so a
rerun with the same manifest reproduces the reports byte for byte.
Wall-clock time lives only in the manifest, in its own field, and is
excluded from the id.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

__all__ = ["TOOL_VERSION", "dumps_json", "file_digest", "RunManifest",
           "write_outputs", "format_float"]

TOOL_VERSION = "hiercm 0.1.0"


def dumps_json(payload) -> str:
    """Canonical JSON text: sorted keys, two-space indent, newline."""
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def format_float(value: float) -> str:
    """Shortest round-tripping decimal; text reports stay diffable."""
    return repr(float(value))


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config: Dict            # fully resolved options, flags included
    model_hash: str         # digest of the primary input artifact
    seed: int
    inputs: Dict[str, str] = field(default_factory=dict)  # path -> digest
    tool_version: str = TOOL_VERSION
    wall_clock_s: Optional[float] = None

    @property
    def run_id(self) -> str:
        stable = {
            "command": self.command,
            "config": self.config,
            "model_hash": self.model_hash,
            "seed": self.seed,
            "inputs": self.inputs,
            "tool_version": self.tool_version,
        }
        text = json.dumps(stable, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]

    def payload(self) -> Dict:
        return {
            "run_id": self.run_id,
            "command": self.command,
            "config": self.config,
            "model_hash": self.model_hash,
            "seed": self.seed,
            "inputs": self.inputs,
            "tool_version": self.tool_version,
            "wall_clock_s": self.wall_clock_s,
        }


def write_outputs(out_dir, manifest: RunManifest, text_lines: List[str],
                  payload: Dict) -> Dict[str, Path]:
    """Emit report.txt / report.json / manifest.json under `out_dir`.

    The JSON report duplicates the text report's content and points back
    at its manifest through the run id; the text report's first line
    does the same.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    body = dict(payload)
    body["run_id"] = manifest.run_id
    text = "\n".join([f"run {manifest.run_id} ({manifest.command})",
                      *text_lines]) + "\n"
    paths = {
        "report_txt": out / "report.txt",
        "report_json": out / "report.json",
        "manifest": out / "manifest.json",
    }
    paths["report_txt"].write_text(text, encoding="utf-8")
    paths["report_json"].write_text(dumps_json(body), encoding="utf-8")
    paths["manifest"].write_text(dumps_json(manifest.payload()),
                                 encoding="utf-8")
    return paths
