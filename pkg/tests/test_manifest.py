# ABOUTME: Tests for run manifests written next to command outputs
"""Tests for staci.manifest"""

import json
from pathlib import Path

from staci import __version__
from staci.harness import ExperimentConfig, Mode
from staci.manifest import MANIFEST_NAME, RunManifest


class TestRunManifest:
    def test_serializes_dataclasses_and_enums(self):
        manifest = RunManifest(
            command="run",
            config=ExperimentConfig(mode=Mode.OFFLINE, seeds=(0, 1)),
            inputs={"data": Path("/data/obs.csv")},
        )
        data = manifest.to_dict()
        assert data["config"]["mode"] == "offline"
        assert data["config"]["seeds"] == [0, 1]
        assert data["inputs"]["data"] == "/data/obs.csv"
        assert data["version"] == __version__
        assert data["created_at"].endswith("+00:00")

    def test_write(self, tmp_path):
        path = RunManifest(command="simulate", seeds=[3]).write(tmp_path)
        assert path == tmp_path / MANIFEST_NAME
        data = json.loads(path.read_text())
        assert data["command"] == "simulate"
        assert data["seeds"] == [3]
