"""Checkpoint files: ``checkpoint.bin`` holds the arrays, ``checkpoint.json`` describes them."""

from __future__ import annotations

import json
import os
from pathlib import Path

from .. import nncore as nn
from ..errors import CheckpointError
from ..orchestrator import PolicySnapshot

BIN_NAME = "checkpoint.bin"
JSON_NAME = "checkpoint.json"


def atomic_write(path: Path, data: bytes) -> None:
    """Write to a sibling temp file and rename, so readers never see a partial file."""
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(data)
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)


def save_checkpoint(out_dir: Path, snapshot: PolicySnapshot, arrays: dict, info: dict) -> Path:
    """Arrays first, then the description; the description names the version it belongs to."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    blob = nn.save_arrays(arrays)
    atomic_write(out_dir / BIN_NAME, blob)
    doc = {**info, "version": snapshot.version, "meta": snapshot.meta()}
    atomic_write(out_dir / JSON_NAME, json.dumps(doc, indent=1).encode())
    return out_dir


def _paths(path: str | Path) -> tuple[Path, Path]:
    p = Path(path)
    if p.is_dir():
        return p / JSON_NAME, p / BIN_NAME
    if p.suffix == ".bin":
        return p.with_suffix(".json"), p
    return p, p.with_suffix(".bin")


def load_checkpoint(path: str | Path) -> tuple[PolicySnapshot, dict]:
    """``(policy, description)``; any missing, corrupt or inconsistent file raises CheckpointError."""
    json_path, bin_path = _paths(path)
    try:
        doc = json.loads(json_path.read_text())
        blob = bin_path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror or exc}") from None
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"checkpoint description {json_path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or "meta" not in doc or "config" not in doc:
        raise CheckpointError(f"checkpoint description {json_path} lacks meta or config")
    arrays = nn.load_arrays(blob)
    snapshot = PolicySnapshot.from_arrays(doc["meta"], arrays, int(doc.get("version", 0)))
    return snapshot, doc
