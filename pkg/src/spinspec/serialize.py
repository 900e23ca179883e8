"""Artifact serialization: canonical JSON, digests, and meta blocks.

Every artifact the command-line tools write embeds a ``meta`` block with the
tool version, a digest of the effective configuration, and the digests of
the input files it was computed from, so results can be audited and stale
inputs detected.  Serialization is deterministic: identical content yields
byte-identical files (no timestamps, stable key order, plain Python floats).
"""

import hashlib
import json
from pathlib import Path

from . import __version__
from .errors import InvalidParameterError

TOOL_NAME = "spinspec"


def canonical_json(obj) -> str:
    """Key-sorted, whitespace-free JSON used for hashing configurations."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_digest(config: dict) -> str:
    """SHA-256 hex digest of a configuration mapping."""
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()


def file_digest(path) -> str:
    """SHA-256 hex digest of a file's bytes."""
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def verify_file_digest(path, expected_hex: str) -> None:
    """Abort (InvalidParameterError) when a declared input digest mismatches."""
    actual = file_digest(path)
    if actual != expected_hex.lower():
        raise InvalidParameterError(
            f"input digest mismatch for {path}: declared {expected_hex}, "
            f"recomputed {actual}"
        )


def meta_block(config: dict, inputs: dict | None = None) -> dict:
    """Provenance block embedded in every JSON artifact."""
    meta = {
        "tool": TOOL_NAME,
        "version": __version__,
        "config": config,
        "config_digest": config_digest(config),
    }
    if inputs:
        meta["inputs"] = {
            str(name): {"path": str(path), "sha256": file_digest(path)}
            for name, path in inputs.items()
        }
    return meta


def write_json_artifact(path, payload: dict) -> None:
    """Deterministic JSON write (byte-identical for identical content)."""
    Path(path).write_text(json.dumps(payload, indent=1) + "\n")


def read_json_artifact(path) -> dict:
    """Load a JSON artifact, mapping missing files to InvalidParameterError."""
    p = Path(path)
    if not p.exists():
        raise InvalidParameterError(f"input file not found: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise InvalidParameterError(f"malformed JSON in {p}: {exc}") from exc
