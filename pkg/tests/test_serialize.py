"""Tests for canonical JSON, digests, and artifact IO."""

import json

import pytest

import spinspec
from spinspec.errors import InvalidParameterError
from spinspec.serialize import (
    canonical_json,
    config_digest,
    file_digest,
    meta_block,
    read_json_artifact,
    verify_file_digest,
    write_json_artifact,
)


def test_canonical_json_sorted_and_compact():
    assert canonical_json({"b": 1, "a": [1, 2]}) == '{"a":[1,2],"b":1}'


def test_config_digest_order_independent():
    d1 = config_digest({"x": 1, "y": [2, 3]})
    d2 = config_digest({"y": [2, 3], "x": 1})
    assert d1 == d2
    assert len(d1) == 64
    assert int(d1, 16) >= 0
    assert config_digest({"x": 2, "y": [2, 3]}) != d1


def test_file_digest_and_verification(tmp_path):
    f = tmp_path / "data.txt"
    f.write_text("hello\n")
    digest = file_digest(f)
    assert len(digest) == 64
    verify_file_digest(f, digest)
    verify_file_digest(f, digest.upper())  # case-insensitive
    with pytest.raises(InvalidParameterError):
        verify_file_digest(f, "0" * 64)
    with pytest.raises(FileNotFoundError):
        file_digest(tmp_path / "absent.txt")


def test_meta_block_contents(tmp_path):
    f = tmp_path / "input.json"
    f.write_text("{}")
    meta = meta_block({"alpha": 1}, {"peaks": str(f)})
    assert meta["tool"] == "spinspec"
    assert meta["version"] == spinspec.__version__
    assert meta["config"] == {"alpha": 1}
    assert meta["config_digest"] == config_digest({"alpha": 1})
    assert meta["inputs"]["peaks"]["path"] == str(f)
    assert meta["inputs"]["peaks"]["sha256"] == file_digest(f)

    no_inputs = meta_block({"alpha": 1})
    assert "inputs" not in no_inputs


def test_artifact_roundtrip(tmp_path):
    path = tmp_path / "artifact.json"
    payload = {"meta": {"tool": "spinspec"}, "values": [1.5, 2.5]}
    write_json_artifact(path, payload)
    text = path.read_text()
    assert text.endswith("\n")
    assert read_json_artifact(path) == payload
    # byte-identical rewrite
    write_json_artifact(path, payload)
    assert path.read_text() == text


def test_read_artifact_errors(tmp_path):
    with pytest.raises(InvalidParameterError):
        read_json_artifact(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(InvalidParameterError):
        read_json_artifact(bad)
