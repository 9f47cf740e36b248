"""Run manifests: every CLI invocation records its inputs, seeds and output
hashes beside the outputs so any run can be reproduced exactly."""
from __future__ import annotations

import hashlib
import json
import sys
import time
from pathlib import Path

from . import __version__

MANIFEST_NAME = "manifest.json"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, subcommand: str, argv: list[str], seed: int | None,
                   inputs: list[str], outputs: list[str], extra: dict | None = None) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        "tool": "greenwave",
        "version": __version__,
        "python": sys.version.split()[0],
        "subcommand": subcommand,
        "argv": list(argv),
        "seed": seed,
        "inputs": {str(p): sha256_file(p) for p in inputs if Path(p).is_file()},
        "outputs": {str(p): sha256_file(p) for p in outputs if Path(p).is_file()},
        "wall_time_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    if extra:
        payload.update(extra)
    path = out_dir / MANIFEST_NAME
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
