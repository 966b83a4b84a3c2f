"""Run manifests: a JSON sidecar per CLI output recording what produced it.

The manifest holds the resolved configuration, content digests of every
input consumed and output written, the seed, the tool version, and wall
times.  Output digests are reproducible given identical inputs and seed;
the manifest itself contains timings and is not.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from typing import Mapping

from . import __version__


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def manifest_path_for(output_path) -> str:
    return f"{output_path}.manifest.json"


@dataclass
class RunManifest:
    """Provenance record written beside a CLI output file."""

    command: str
    config: Mapping
    seed: int | None
    version: str = __version__
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    started_unix: float = field(default_factory=time.time)
    elapsed_seconds: float = 0.0

    def add_input(self, path) -> None:
        self.inputs[str(path)] = sha256_file(path)

    def add_output(self, path) -> None:
        self.outputs[str(path)] = sha256_file(path)

    def write(self, output_path) -> str:
        """Finalize timings and write beside ``output_path``."""
        self.elapsed_seconds = time.time() - self.started_unix
        target = manifest_path_for(output_path)
        with open(target, "w", encoding="utf-8") as fh:
            json.dump(
                {
                    "command": self.command,
                    "config": dict(self.config),
                    "seed": self.seed,
                    "version": self.version,
                    "inputs": self.inputs,
                    "outputs": self.outputs,
                    "started_unix": self.started_unix,
                    "elapsed_seconds": self.elapsed_seconds,
                },
                fh, indent=2, sort_keys=True,
            )
            fh.write("\n")
        return target
