"""Run manifests: every output directory gets exactly one manifest.json.

Reruns with identical inputs and seeds reproduce every field except the
timestamp, so diffing two manifests (minus "timestamp") verifies
reproducibility.
"""

from __future__ import annotations

import hashlib
import json
from datetime import datetime, timezone
from pathlib import Path

MANIFEST_NAME = "manifest.json"


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def config_digest(config: object) -> str:
    payload = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def build_manifest(
    command: list[str],
    version: str,
    seed: int | None,
    config: object,
    inputs: list[str | Path],
    outputs: list[str],
    status: str = "complete",
    error: str | None = None,
) -> dict:
    manifest = {
        "command": list(command),
        "toolkit_version": version,
        "seed": seed,
        "config_digest": config_digest(config),
        "input_digests": {str(p): file_digest(p) for p in sorted(str(p) for p in inputs)},
        "outputs": sorted(outputs),
        "status": status,
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }
    if error is not None:
        manifest["error"] = error
    return manifest


def write_manifest(out_dir: str | Path, manifest: dict) -> Path:
    path = Path(out_dir) / MANIFEST_NAME
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return path
