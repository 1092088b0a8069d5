"""Run manifests: enough provenance to rerun any command byte-for-byte.

A manifest records the command, its canonical argument map (input paths
absolute, output names relative), the seed string as the user gave it,
and SHA-256 digests of every input and output. Rerunning re-executes the
recorded command into a fresh directory and compares digests, so drift in
either inputs or behavior is caught rather than silently accepted.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional

TOOL_NAME = "flashflow-lab"

MANIFEST_NAME = "manifest.json"


def sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass(frozen=True)
class RunManifest:
    tool: str
    version: str
    command: str
    args: dict
    seed: Optional[str]
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "tool": self.tool,
            "version": self.version,
            "command": self.command,
            "args": self.args,
            "seed": self.seed,
            "inputs": self.inputs,
            "outputs": self.outputs,
        }


def manifest_from_json_dict(data: dict) -> RunManifest:
    return RunManifest(
        tool=data["tool"],
        version=data["version"],
        command=data["command"],
        args=data["args"],
        seed=data.get("seed"),
        inputs=dict(data.get("inputs", {})),
        outputs=dict(data.get("outputs", {})),
    )


def save_manifest(path: str, manifest: RunManifest) -> None:
    with open(path, "w") as fh:
        json.dump(manifest.to_json_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_manifest(path: str) -> RunManifest:
    with open(path) as fh:
        data = json.load(fh)
    if data.get("tool") != TOOL_NAME:
        raise ValueError(f"not a {TOOL_NAME} manifest: tool={data.get('tool')!r}")
    return manifest_from_json_dict(data)


def verify_inputs(manifest: RunManifest) -> list[str]:
    """Return human-readable digest mismatches for the recorded inputs."""
    problems = []
    for path, expected in sorted(manifest.inputs.items()):
        try:
            actual = sha256_file(path)
        except OSError as exc:
            problems.append(f"input {path}: unreadable ({exc})")
            continue
        if actual != expected:
            problems.append(
                f"input {path}: digest {actual[:12]}... != recorded {expected[:12]}..."
            )
    return problems


def diff_outputs(manifest: RunManifest, other: RunManifest) -> list[str]:
    """Compare two runs' output digests, name by name."""
    problems = []
    names = sorted(set(manifest.outputs) | set(other.outputs))
    for name in names:
        a = manifest.outputs.get(name)
        b = other.outputs.get(name)
        if a is None:
            problems.append(f"output {name}: only present in rerun")
        elif b is None:
            problems.append(f"output {name}: missing from rerun")
        elif a != b:
            problems.append(f"output {name}: digest changed")
    return problems
