# ABOUTME: Experiment harness: data splits, calibration, online/offline test loops and metrics
# ABOUTME: Runs one method over seeded replications and reports coverage and efficiency
"""Conformal experiment orchestration"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Protocol

import numpy as np
import pandas as pd

from staci.conformal import (
    RegionSpec,
    aci_update,
    build_region,
    calibrate,
    contains,
    region_volume_scaled,
    requantile,
)
from staci.covariance import (
    ResidualWindow,
    ScoreMatrix,
    blend,
    center_residuals,
    invert_pd,
    sample_covariance,
)
from staci.exceptions import ExperimentError, ValidationError
from staci.forecaster import (
    PredictionSeries,
    PredictionSource,
    fit_ar,
    predict_series,
    residuals,
)
from staci.network import StreamNetwork
from staci.simgen import SimConfig, SimOutput, simulate
from staci.tailup import TailUpParams, fit_tailup, tailup_covariance, tailup_loss
from staci.utils import write_table_csv

logger = logging.getLogger(__name__)

RESULT_COLUMNS = [
    "method",
    "lambda",
    "n_cal",
    "gamma",
    "mode",
    "seed",
    "coverage",
    "efficiency",
    "n_fullspace",
]
TRACE_COLUMNS = ["t", "alpha_t", "threshold", "covered", "volume_scaled"]


class Mode(str, Enum):
    ONLINE = "online"
    OFFLINE = "offline"


class Method(str, Enum):
    """Region constructions compared by the harness."""

    STACI = "staci"
    SAMPLE = "sample"
    SPHERE = "sphere"
    SQUARE = "square"
    GT = "gt"

    @property
    def blends(self) -> bool:
        return self in (Method.STACI, Method.SAMPLE)

    @property
    def reads_lambda(self) -> bool:
        return self is Method.STACI

    def effective_lambda(self, lam: float) -> float:
        return 0.0 if self is Method.SAMPLE else lam


@dataclass(frozen=True)
class ExperimentConfig:
    train_fraction: float = 0.6
    n_cal: int = 300
    n_test: int | None = None
    alpha: float = 0.05
    lam: float = 0.5
    gamma: float = 0.0
    mode: Mode = Mode.ONLINE
    refit_every: int = 1
    seeds: tuple[int, ...] = tuple(range(10))
    ar_order: int = 2
    ar_shared: bool = True
    ar_intercept: bool = True
    sample_ridge: float = 1e-6
    tailup_grid_points: int = 50
    tailup_grid_span: float = 100.0
    tailup_params: TailUpParams | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        problems = []
        if not 0.0 < self.train_fraction < 1.0:
            problems.append(f"train_fraction must be in (0, 1), got {self.train_fraction}")
        if self.n_cal < 2:
            problems.append(f"n_cal must be >= 2, got {self.n_cal}")
        if self.n_test is not None and self.n_test < 1:
            problems.append(f"n_test must be >= 1, got {self.n_test}")
        if not 0.0 < self.alpha < 1.0:
            problems.append(f"alpha must be in (0, 1), got {self.alpha}")
        if not 0.0 <= self.lam <= 1.0:
            problems.append(f"lambda must be in [0, 1], got {self.lam}")
        if self.gamma < 0:
            problems.append(f"gamma must be >= 0, got {self.gamma}")
        if self.refit_every < 1:
            problems.append(f"refit_every must be >= 1, got {self.refit_every}")
        if not self.seeds:
            problems.append("at least one seed is required")
        if self.ar_order < 1:
            problems.append(f"ar_order must be >= 1, got {self.ar_order}")
        if self.sample_ridge < 0:
            problems.append(f"sample_ridge must be >= 0, got {self.sample_ridge}")
        if problems:
            raise ValidationError(f"Invalid experiment config: {'; '.join(problems)}")

    def split(self, n_steps: int) -> "Split":
        """Train prefix, then the n_cal calibration rows, then the test horizon."""
        train_end = math.floor(self.train_fraction * n_steps)
        cal_end = train_end + self.n_cal
        test_end = n_steps if self.n_test is None else cal_end + self.n_test
        if test_end > n_steps or test_end <= cal_end:
            raise ExperimentError(
                f"Split needs {train_end} train + {self.n_cal} calibration + "
                f"{self.n_test if self.n_test is not None else 'some'} test rows, "
                f"data has {n_steps}",
                recovery_hint="Lower --ncal/--ntest or the train fraction",
            )
        return Split(train_end=train_end, cal_end=cal_end, test_end=test_end)


@dataclass(frozen=True)
class Split:
    train_end: int
    cal_end: int
    test_end: int

    @property
    def n_cal(self) -> int:
        return self.cal_end - self.train_end

    @property
    def n_test(self) -> int:
        return self.test_end - self.cal_end


@dataclass(frozen=True)
class Dataset:
    """Observations in site order, optional external forecasts and optional true covariance."""

    observations: np.ndarray
    predictions: np.ndarray | None = None
    true_covariance: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.observations.ndim != 2:
            raise ValidationError("observations must be a T x I matrix")
        if self.predictions is not None and self.predictions.shape != self.observations.shape:
            raise ValidationError(
                f"predictions have shape {self.predictions.shape}, "
                f"observations {self.observations.shape}"
            )
        n_sites = self.observations.shape[1]
        if self.true_covariance is not None and self.true_covariance.shape != (n_sites, n_sites):
            raise ValidationError(f"true covariance must be {n_sites}x{n_sites}")


class DataSource(Protocol):
    def for_seed(self, seed: int) -> Dataset: ...


@dataclass(frozen=True)
class StaticData:
    """The same dataset for every seed (seeds only label replications)."""

    dataset: Dataset

    def for_seed(self, seed: int) -> Dataset:
        return self.dataset


@dataclass(frozen=True)
class SimulatedData:
    """A fresh simulation per seed, so replications resample the data-generating process."""

    net: StreamNetwork
    sim: SimConfig

    def for_seed(self, seed: int) -> Dataset:
        output = _simulate_cached(self.net, replace(self.sim, seed=seed))
        return Dataset(
            observations=output.observations, true_covariance=output.true_covariance
        )


@lru_cache(maxsize=16)
def _simulate_cached(net: StreamNetwork, sim: SimConfig) -> SimOutput:
    return simulate(net, sim)


@dataclass(frozen=True)
class StepRecord:
    t: int
    alpha_t: float
    threshold: float
    covered: bool
    volume_scaled: float


@dataclass(frozen=True)
class MetricsReport:
    """Coverage and efficiency over a trace, or averaged over per-seed reports."""

    coverage: float
    efficiency: float
    n_fullspace: int
    n_steps: int
    trace: tuple[StepRecord, ...] = ()
    per_seed: dict[int, "MetricsReport"] = field(default_factory=dict)
    tailup_params: TailUpParams | None = None

    @property
    def fullspace_excluded(self) -> bool:
        """True when full-space regions were left out of the efficiency mean."""
        return self.n_fullspace > 0

    @property
    def coverage_variance(self) -> float:
        return _variance([r.coverage for r in self.per_seed.values()])

    @property
    def efficiency_variance(self) -> float:
        return _variance([r.efficiency for r in self.per_seed.values()])


def _variance(values: list[float]) -> float:
    return float(np.var(values, ddof=1)) if len(values) > 1 else 0.0


@dataclass(frozen=True)
class ReplicationResult:
    seed: int
    trace: tuple[StepRecord, ...]
    initial_score_matrix: ScoreMatrix | None = None
    tailup_params: TailUpParams | None = None
    topology_covariance: np.ndarray | None = None
    prediction_source: PredictionSource = PredictionSource.INTERNAL_AR


def _forecasts(data: Dataset, split: Split, cfg: ExperimentConfig) -> PredictionSeries:
    """One-step forecasts for the calibration and test rows."""
    if data.predictions is not None:
        return PredictionSeries(
            predictions=data.predictions[split.train_end : split.test_end],
            source=PredictionSource.EXTERNAL_FILE,
        )
    if split.train_end <= cfg.ar_order + 1:
        raise ExperimentError(
            f"Training split of {split.train_end} rows is too short for AR({cfg.ar_order})"
        )
    train = data.observations[: split.train_end]
    model = fit_ar(train, cfg.ar_order, shared=cfg.ar_shared, intercept=cfg.ar_intercept)
    rms = float(np.sqrt(np.mean(residuals(model, train) ** 2)))
    logger.debug(f"AR({cfg.ar_order}) in-sample residual RMS {rms:.4g}")
    return PredictionSeries(
        predictions=predict_series(model, data.observations, split.train_end, split.test_end),
        source=PredictionSource.INTERNAL_AR,
    )


class _Replication:
    """State of one seeded run: score matrix, calibration window and working level."""

    def __init__(
        self, data: Dataset, net: StreamNetwork, cfg: ExperimentConfig, method: Method, seed: int
    ):
        self.cfg = cfg
        self.method = method
        self.seed = seed
        self.split = cfg.split(data.observations.shape[0])
        self.targets = data.observations[self.split.train_end : self.split.test_end]
        series = _forecasts(data, self.split, cfg)
        self.forecasts = series.predictions
        self.prediction_source = series.source
        self.raw = self.targets - self.forecasts
        self.lam = method.effective_lambda(cfg.lam)
        self.params: TailUpParams | None = None
        self.topo_cov: np.ndarray | None = None

        cal_raw = self.raw[: self.split.n_cal]
        centered, epsilon_bar = center_residuals(cal_raw)
        self.spec = self._initial_spec(centered, net, data)
        self.initial_matrix = self.spec.score_matrix
        self.state = calibrate(centered, self.spec, epsilon_bar)
        self.window = ResidualWindow(self.split.n_cal, cal_raw)

    def _initial_spec(self, centered: np.ndarray, net: StreamNetwork, data: Dataset) -> RegionSpec:
        alpha = self.cfg.alpha
        match self.method:
            case Method.SPHERE:
                return RegionSpec.sphere(centered.shape[1], alpha)
            case Method.SQUARE:
                return RegionSpec.square(alpha)
            case Method.GT:
                if data.true_covariance is None:
                    raise ExperimentError(
                        "The gt method needs the true covariance",
                        recovery_hint="Pass --true-cov with the simulator's true_covariance.csv",
                    )
                precision = invert_pd(data.true_covariance, 0.0)
                return RegionSpec.ellipsoid(
                    ScoreMatrix.from_matrix(precision, provenance="ground-truth"), alpha
                )

        sample_cov = sample_covariance(centered)
        if self.lam > 0 and self.cfg.tailup_params is not None:
            self.params = self.cfg.tailup_params
            loss = tailup_loss(net, sample_cov, self.params)
            logger.info(f"Using fixed tail-up parameters {self.params} (l1 loss {loss:.6g})")
        elif self.lam > 0:
            self.params = fit_tailup(
                net,
                sample_cov,
                grid_points=self.cfg.tailup_grid_points,
                grid_span=self.cfg.tailup_grid_span,
            )
        if self.params is not None:
            self.topo_cov = tailup_covariance(net, self.params).matrix
        return RegionSpec.ellipsoid(self._blend(sample_cov), alpha)

    def _blend(self, sample_cov: np.ndarray) -> ScoreMatrix:
        return blend(sample_cov, self.topo_cov, self.lam, self.cfg.sample_ridge)

    def _refit(self, alpha_t: float) -> None:
        centered, epsilon_bar = center_residuals(self.window.as_array())
        if self.method.blends:
            self.spec = self.spec.with_matrix(self._blend(sample_covariance(centered)))
        self.state = calibrate(centered, self.spec, epsilon_bar, alpha_t)

    def run(self) -> ReplicationResult:
        cfg = self.cfg
        n_cal = self.split.n_cal
        alpha_t = cfg.alpha
        trace = []
        for step in range(self.split.n_test):
            row = n_cal + step
            region = build_region(self.forecasts[row], self.state, self.spec)
            covered = contains(region, self.targets[row])
            trace.append(
                StepRecord(
                    t=self.split.cal_end + step,
                    alpha_t=alpha_t,
                    threshold=region.threshold_value,
                    covered=covered,
                    volume_scaled=region_volume_scaled(region),
                )
            )
            alpha_t = aci_update(alpha_t, covered, cfg.alpha, cfg.gamma)

            if cfg.mode is Mode.ONLINE:
                self.window.push(self.raw[row])
                if (step + 1) % cfg.refit_every == 0:
                    self._refit(alpha_t)
                    continue
            if alpha_t != self.state.alpha_t:
                self.state = requantile(self.state, alpha_t)

        return ReplicationResult(
            seed=self.seed,
            trace=tuple(trace),
            initial_score_matrix=self.initial_matrix,
            tailup_params=self.params,
            topology_covariance=self.topo_cov,
            prediction_source=self.prediction_source,
        )


def run_replication(
    data: Dataset, net: StreamNetwork, cfg: ExperimentConfig, method: Method, seed: int = 0
) -> ReplicationResult:
    """Calibrate on the most recent n_cal residuals and walk the test horizon once.

    Online mode slides the residual window by one per step and every refit_every steps
    recenters it, re-estimates the sample covariance, re-blends A (tail-up parameters stay
    frozen) and rescores. Offline mode keeps A and the scores fixed and only moves the
    quantile with alpha_t.
    """
    method = Method(method)
    return _Replication(data, net, cfg, method, seed).run()


def compute_metrics(trace: tuple[StepRecord, ...] | list[StepRecord]) -> MetricsReport:
    """Coverage and mean volume_scaled; full-space steps count as covered but not toward volume."""
    if not trace:
        raise ExperimentError("Cannot compute metrics from an empty trace")
    covered = np.array([r.covered for r in trace], dtype=float)
    volumes = np.array([r.volume_scaled for r in trace], dtype=float)
    fullspace = np.isposinf(volumes)
    n_fullspace = int(fullspace.sum())
    if np.isnan(volumes).any():
        raise ExperimentError("Region volumes contain NaN; check the inputs for bad values")

    coverage = float(covered.mean())
    efficiency = float(volumes[~fullspace].mean()) if n_fullspace < len(trace) else math.inf
    if n_fullspace:
        logger.warning(
            f"{n_fullspace} of {len(trace)} steps had full-space regions; "
            "they are excluded from efficiency"
        )
    return MetricsReport(
        coverage=coverage,
        efficiency=efficiency,
        n_fullspace=n_fullspace,
        n_steps=len(trace),
        trace=tuple(trace),
    )


def _replicate(
    source: DataSource, net: StreamNetwork, cfg: ExperimentConfig, method: Method, seed: int
) -> ReplicationResult:
    return run_replication(source.for_seed(seed), net, cfg, method, seed)


def run_experiment(
    data: DataSource | Dataset,
    net: StreamNetwork,
    cfg: ExperimentConfig,
    method: Method | str,
    jobs: int = 1,
) -> MetricsReport:
    """Run every seed in cfg.seeds and average the per-seed metrics."""
    method = Method(method)
    source = StaticData(data) if isinstance(data, Dataset) else data

    if jobs > 1 and len(cfg.seeds) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_replicate, source, net, cfg, method, s) for s in cfg.seeds]
            results = [f.result() for f in futures]
    else:
        results = [_replicate(source, net, cfg, method, s) for s in cfg.seeds]

    per_seed = {}
    for result in results:
        per_seed[result.seed] = replace(
            compute_metrics(result.trace), tailup_params=result.tailup_params
        )
        report = per_seed[result.seed]
        logger.info(
            f"{method.value} seed {result.seed}: coverage {report.coverage:.4f}, "
            f"efficiency {report.efficiency:.4f}"
        )
    return aggregate(per_seed)


def aggregate(per_seed: dict[int, MetricsReport]) -> MetricsReport:
    if not per_seed:
        raise ExperimentError("No replications to aggregate")
    reports = list(per_seed.values())
    finite = [r.efficiency for r in reports if math.isfinite(r.efficiency)]
    return MetricsReport(
        coverage=float(np.mean([r.coverage for r in reports])),
        efficiency=float(np.mean(finite)) if finite else math.inf,
        n_fullspace=sum(r.n_fullspace for r in reports),
        n_steps=sum(r.n_steps for r in reports),
        per_seed=dict(sorted(per_seed.items())),
    )


def result_row(
    method: Method, cfg: ExperimentConfig, seed: int, report: MetricsReport
) -> dict[str, object]:
    """One results-table row; lambda is the configured value (only staci reads it)."""
    return {
        "method": Method(method).value,
        "lambda": cfg.lam,
        "n_cal": cfg.n_cal,
        "gamma": cfg.gamma,
        "mode": cfg.mode.value,
        "seed": seed,
        "coverage": report.coverage,
        "efficiency": report.efficiency,
        "n_fullspace": report.n_fullspace,
    }


def results_frame(rows: list[dict[str, object]]) -> pd.DataFrame:
    return pd.DataFrame(rows, columns=RESULT_COLUMNS)


def trace_frame(trace: tuple[StepRecord, ...] | list[StepRecord]) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "t": [r.t for r in trace],
            "alpha_t": [r.alpha_t for r in trace],
            "threshold": [r.threshold for r in trace],
            "covered": [int(r.covered) for r in trace],
            "volume_scaled": [r.volume_scaled for r in trace],
        },
        columns=TRACE_COLUMNS,
    )


def write_results(
    out_dir: str | Path, method: Method, cfg: ExperimentConfig, report: MetricsReport
) -> list[Path]:
    """Write results.csv plus one trace_seed<N>.csv per replication.

    Replications that used the tail-up model also get tailup_params_seed<N>.txt, which
    `staci run --tailup-params` reads back.
    """
    out_dir = Path(out_dir)
    rows = [result_row(method, cfg, seed, r) for seed, r in report.per_seed.items()]
    written = [out_dir / "results.csv"]
    write_table_csv(written[0], results_frame(rows))
    for seed, seed_report in report.per_seed.items():
        path = out_dir / f"trace_seed{seed}.csv"
        write_table_csv(path, trace_frame(seed_report.trace))
        written.append(path)
        if seed_report.tailup_params is not None:
            params_path = out_dir / f"tailup_params_seed{seed}.txt"
            seed_report.tailup_params.save(params_path)
            written.append(params_path)
    return written

