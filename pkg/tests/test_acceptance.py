# ABOUTME: Monte Carlo reproductions of the coverage, adaptivity and efficiency guarantees
# ABOUTME: Marked slow; each test simulates thousands of steps over several seeds
"""Statistical acceptance tests for the full pipeline"""

from dataclasses import replace

import numpy as np
import pytest

from staci.forecaster import fit_ar
from staci.harness import (
    Dataset,
    ExperimentConfig,
    Method,
    Mode,
    SimulatedData,
    compute_metrics,
    run_experiment,
    run_replication,
)
from staci.simgen import SimConfig, figure1_network, simulate

pytestmark = pytest.mark.slow

TEN_SEEDS = tuple(range(10))


@pytest.fixture(scope="module")
def network():
    return figure1_network()


@pytest.fixture(scope="module")
def exchangeable(network):
    """Pure tail-up noise: 600 train, 300 calibration and 5000 test rows per seed"""
    sim = SimConfig(theta=(0.0, 0.0), n_steps=6000, subintervals_per_segment=100)
    cfg = ExperimentConfig(
        train_fraction=0.1, n_cal=300, n_test=5000, alpha=0.05, mode=Mode.OFFLINE, seeds=TEN_SEEDS
    )
    return SimulatedData(network, sim), cfg


def test_exchangeable_coverage(network, exchangeable):
    source, cfg = exchangeable
    report = run_experiment(source, network, cfg, Method.GT)
    assert 0.93 <= report.coverage <= 0.97


def test_precision_ellipsoid_beats_sphere(network, exchangeable):
    source, cfg = exchangeable
    gt = run_experiment(source, network, cfg, Method.GT)
    sphere = run_experiment(source, network, cfg, Method.SPHERE)
    assert gt.coverage >= 0.94
    assert sphere.coverage >= 0.94
    assert gt.efficiency < sphere.efficiency


@pytest.mark.parametrize("gamma,check", [(0.01, "on_target"), (0.0, "undercovers")])
def test_aci_under_noise_shift(network, gamma, check):
    """Noise doubles halfway through the test horizon"""
    cfg = ExperimentConfig(
        train_fraction=0.1, n_cal=300, n_test=5000, alpha=0.05, gamma=gamma, mode=Mode.OFFLINE
    )
    split = cfg.split(6000)
    sim = SimConfig(
        theta=(0.0, 0.0),
        n_steps=6000,
        subintervals_per_segment=100,
        shift_at=split.cal_end + split.n_test // 2,
        shift_scale=2.0,
    )
    output = simulate(network, sim)
    data = Dataset(output.observations, true_covariance=output.true_covariance)
    report = compute_metrics(run_replication(data, network, cfg, Method.SPHERE).trace)
    miss_rate = 1.0 - report.coverage
    if check == "on_target":
        assert abs(miss_rate - 0.05) <= 0.01
    else:
        assert miss_rate > 0.06


def test_topology_weight_raises_coverage(network):
    sim = SimConfig(theta=(0.7, 0.3), n_steps=2000, subintervals_per_segment=100)
    base = ExperimentConfig(
        train_fraction=0.3, n_cal=300, n_test=1000, alpha=0.05, gamma=0.0, seeds=TEN_SEEDS
    )
    source = SimulatedData(network, sim)
    sample_only = run_experiment(source, network, replace(base, lam=0.0), "staci")
    topology = run_experiment(source, network, replace(base, lam=1.0), "staci")
    assert topology.coverage >= sample_only.coverage


def test_simulator_matches_true_covariance(network):
    output = simulate(network, SimConfig(n_steps=50_000, subintervals_per_segment=20))
    truth = output.true_covariance
    noise = output.noise
    empirical = np.cov(noise, rowvar=False)
    n = noise.shape[0]
    std_err = np.sqrt((np.outer(np.diag(truth), np.diag(truth)) + truth**2) / n)

    connected = network.flow_structure.connected
    assert np.all(truth[~connected] == 0.0)
    z = np.abs(empirical - truth)[connected] / std_err[connected]
    assert np.mean(z <= 3.0) >= 0.95
    assert z.max() <= 4.5


def test_ar_recovery_from_simulation(network):
    sim = SimConfig(theta=(0.7, 0.3), n_steps=5000, subintervals_per_segment=50)
    output = simulate(network, sim)
    model = fit_ar(output.observations, 2)
    np.testing.assert_allclose(model.coeffs, [0.7, 0.3], atol=0.05)
