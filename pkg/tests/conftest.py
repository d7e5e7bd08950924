import shutil
import tempfile
from pathlib import Path

import numpy as np
import pytest

from staci.config import Config
from staci.network import Segment, Site, build_network
from staci.simgen import SimConfig, figure1_network


@pytest.fixture(autouse=True)
def isolated_xdg(tmp_path, monkeypatch):
    """Keep config, state and output lookups inside the test's temp directory"""
    monkeypatch.setenv("XDG_CONFIG_HOME", str(tmp_path / "xdg-config"))
    monkeypatch.setenv("XDG_STATE_HOME", str(tmp_path / "xdg-state"))
    monkeypatch.delenv("STACI_OUTPUT_DIR", raising=False)


@pytest.fixture
def temp_config_dir():
    """Create a temporary config directory for tests"""
    temp_dir = tempfile.mkdtemp()
    yield temp_dir
    shutil.rmtree(temp_dir)


@pytest.fixture
def test_config(temp_config_dir):
    """Config read from an empty config.toml in a temp directory"""
    config_file = Path(temp_config_dir) / "config.toml"
    config_file.write_text("")
    return Config(config_file=config_file)


@pytest.fixture
def figure1():
    """The five-segment, ten-site reference network"""
    return figure1_network()


@pytest.fixture
def line_network():
    """One straight unit-length segment with sites at arc 0.2 and 0.7"""
    segment = Segment(id="a", polyline=((0.0, 0.0), (1.0, 0.0)), weight=1.0)
    sites = [Site(1, "a", 0.2), Site(2, "a", 0.7)]
    return build_network([segment], sites)


@pytest.fixture
def parallel_network():
    """Two headwaters draining into an outlet, with sites only on the headwaters"""
    segments = [
        Segment("h1", ((0.0, 1.0), (0.5, 0.5)), 1.0, "out"),
        Segment("h2", ((1.0, 1.0), (0.5, 0.5)), 1.0, "out"),
        Segment("out", ((0.5, 0.5), (0.5, 0.0)), 2.0),
    ]
    sites = [Site(1, "h1", 0.5), Site(2, "h2", 0.5)]
    return build_network(segments, sites)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def coarse_sim():
    """Coarse discretization that keeps simulations fast in unit tests"""
    return SimConfig(theta=(0.0, 0.0), n_steps=600, subintervals_per_segment=20, seed=7)
