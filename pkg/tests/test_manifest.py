"""Tests for run manifests: digests, round trips, and drift detection."""

from __future__ import annotations

import hashlib
import json

import pytest

from flashflow_lab.manifest import (
    RunManifest,
    TOOL_NAME,
    diff_outputs,
    load_manifest,
    manifest_from_json_dict,
    save_manifest,
    sha256_file,
    verify_inputs,
)


def _manifest(**overrides) -> RunManifest:
    base = dict(
        tool=TOOL_NAME,
        version="0.1.0",
        command="analyze",
        args={"metric": ["nce"]},
        seed=None,
        inputs={},
        outputs={},
    )
    base.update(overrides)
    return RunManifest(**base)


class TestSha256File:
    def test_matches_hashlib(self, tmp_path):
        path = tmp_path / "blob.bin"
        payload = b"flashflow" * 1000
        path.write_bytes(payload)
        assert sha256_file(str(path)) == hashlib.sha256(payload).hexdigest()

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty"
        path.write_bytes(b"")
        assert sha256_file(str(path)) == hashlib.sha256(b"").hexdigest()


class TestRoundTrip:
    def test_save_load(self, tmp_path):
        manifest = _manifest(
            seed="ab" * 32,
            inputs={"/data/archive.csv": "0" * 64},
            outputs={"result.csv": "1" * 64, "plot.png": "2" * 64},
        )
        path = tmp_path / "manifest.json"
        save_manifest(str(path), manifest)
        assert load_manifest(str(path)) == manifest

    def test_json_dict_round_trip(self):
        manifest = _manifest(outputs={"a.csv": "3" * 64})
        assert manifest_from_json_dict(manifest.to_json_dict()) == manifest

    def test_foreign_tool_rejected(self, tmp_path):
        path = tmp_path / "manifest.json"
        path.write_text(json.dumps({"tool": "other-tool", "version": "1"}))
        with pytest.raises(ValueError):
            load_manifest(str(path))


class TestVerifyInputs:
    def test_clean_inputs_pass(self, tmp_path):
        path = tmp_path / "in.csv"
        path.write_text("t,value\n")
        manifest = _manifest(inputs={str(path): sha256_file(str(path))})
        assert verify_inputs(manifest) == []

    def test_changed_input_reported(self, tmp_path):
        path = tmp_path / "in.csv"
        path.write_text("t,value\n")
        manifest = _manifest(inputs={str(path): sha256_file(str(path))})
        path.write_text("t,value\n0,1\n")
        problems = verify_inputs(manifest)
        assert len(problems) == 1
        assert str(path) in problems[0]

    def test_missing_input_reported(self, tmp_path):
        manifest = _manifest(inputs={str(tmp_path / "gone.csv"): "0" * 64})
        problems = verify_inputs(manifest)
        assert len(problems) == 1
        assert "unreadable" in problems[0]


class TestDiffOutputs:
    def test_identical_outputs(self):
        a = _manifest(outputs={"x.csv": "4" * 64})
        b = _manifest(outputs={"x.csv": "4" * 64})
        assert diff_outputs(a, b) == []

    def test_changed_digest(self):
        a = _manifest(outputs={"x.csv": "4" * 64})
        b = _manifest(outputs={"x.csv": "5" * 64})
        assert diff_outputs(a, b) == ["output x.csv: digest changed"]

    def test_missing_and_extra(self):
        a = _manifest(outputs={"x.csv": "4" * 64})
        b = _manifest(outputs={"y.csv": "4" * 64})
        problems = diff_outputs(a, b)
        assert any("x.csv" in p and "missing" in p for p in problems)
        assert any("y.csv" in p and "only present" in p for p in problems)
