# ABOUTME: Synthetic tail-up observations on a stream network with an AR temporal mean
# ABOUTME: Discretized stochastic integration plus the exact covariance of the discretized noise
"""Ground-truth tail-up simulator"""

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from staci.exceptions import ValidationError
from staci.network import Segment, Site, StreamNetwork, build_network
from staci.utils import write_matrix_csv, write_table_csv

logger = logging.getLogger(__name__)

MIN_BURN_IN = 50


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings.

    theta holds the AR coefficients (theta_1 multiplies Y_{t-1}). shift_at, counted after
    burn-in, multiplies the spatial noise by shift_scale from that step on.
    """

    theta: tuple[float, ...] = (0.0, 0.0)
    n_steps: int = 5000
    subintervals_per_segment: int = 300
    headwater_extension_factor: float = 10.0
    seed: int = 0
    kernel_range: float = 1.0
    shift_at: int | None = None
    shift_scale: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "theta", tuple(float(t) for t in self.theta))
        if self.n_steps < 1:
            raise ValidationError(f"n_steps must be >= 1, got {self.n_steps}")
        if self.subintervals_per_segment < 1:
            raise ValidationError(
                f"subintervals_per_segment must be >= 1, got {self.subintervals_per_segment}"
            )
        if self.headwater_extension_factor < 0:
            raise ValidationError(
                f"headwater_extension_factor must be >= 0, got {self.headwater_extension_factor}"
            )
        if not self.kernel_range > 0:
            raise ValidationError(f"kernel_range must be positive, got {self.kernel_range}")
        if self.shift_at is not None and not 0 <= self.shift_at <= self.n_steps:
            raise ValidationError(f"shift_at must be in [0, n_steps], got {self.shift_at}")
        if not self.shift_scale > 0:
            raise ValidationError(f"shift_scale must be positive, got {self.shift_scale}")
        if sum(abs(t) for t in self.theta) >= 1.0:
            logger.warning(
                f"AR coefficients {self.theta} have sum |theta| >= 1; the mean is not stationary"
            )

    @property
    def burn_in(self) -> int:
        return max(len(self.theta), MIN_BURN_IN)


@dataclass
class SimOutput:
    observations: np.ndarray
    true_covariance: np.ndarray
    config: SimConfig
    noise: np.ndarray
    burn_in: int = 0
    columns: list[str] = field(default_factory=list)


FIGURE1_ENDPOINTS = {
    "r1": ((0.0, 1.0), (0.3, 0.5)),
    "r2": ((0.5, 0.8), (0.3, 0.5)),
    "r3": ((0.3, 0.5), (0.2, 0.1)),
    "r4": ((0.6, 0.6), (0.2, 0.1)),
    "r5": ((0.2, 0.1), (0.4, 0.0)),
}
FIGURE1_WEIGHTS = {"r1": 0.35, "r2": 0.5, "r3": 0.85, "r4": 0.15, "r5": 1.0}
FIGURE1_DOWNSTREAM = {"r1": "r3", "r2": "r3", "r3": "r5", "r4": "r5", "r5": None}


def figure1_network() -> StreamNetwork:
    """Five-segment reference network with a site at the start and middle of each segment."""
    segments = [
        Segment(
            id=seg_id,
            polyline=FIGURE1_ENDPOINTS[seg_id],
            weight=FIGURE1_WEIGHTS[seg_id],
            downstream_id=FIGURE1_DOWNSTREAM[seg_id],
        )
        for seg_id in FIGURE1_ENDPOINTS
    ]
    sites = []
    for seg_id in FIGURE1_ENDPOINTS:
        for arc in (0.0, 0.5):
            sites.append(Site(id=len(sites) + 1, segment_id=seg_id, arc_position=arc))
    return build_network(segments, sites)


@dataclass(frozen=True)
class _Discretization:
    """Sub-intervals of the network (headwater extensions included) and their site loadings."""

    lengths: np.ndarray
    loadings: np.ndarray

    @property
    def n_intervals(self) -> int:
        return self.lengths.size


def _discretize(net: StreamNetwork, cfg: SimConfig) -> _Discretization:
    seg_ids: list[str] = []
    midpoints: list[float] = []
    lengths: list[float] = []

    k = cfg.subintervals_per_segment
    for seg_id, seg in net.segments.items():
        step = seg.length / k
        seg_ids += [seg_id] * k
        midpoints += list((np.arange(k) + 0.5) * step)
        lengths += [step] * k

        if cfg.headwater_extension_factor > 0 and net.is_headwater(seg_id):
            extension = cfg.headwater_extension_factor * seg.length
            n_ext = max(1, round(cfg.headwater_extension_factor * k))
            ext_step = extension / n_ext
            seg_ids += [seg_id] * n_ext
            midpoints += list(-extension + (np.arange(n_ext) + 0.5) * ext_step)
            lengths += [ext_step] * n_ext

    seg_arr = np.array(seg_ids)
    mid_arr = np.array(midpoints)
    len_arr = np.array(lengths)
    weights = np.array([net.segment(s).weight for s in seg_ids])

    loadings = np.zeros((net.n_sites, len(seg_ids)))
    for i, site in enumerate(net.sites):
        site_seg = net.segment(site.segment_id)
        site_offset = site.arc_position * site_seg.length
        site_weight = site_seg.weight

        distance = np.full(len(seg_ids), np.nan)
        own = (seg_arr == site.segment_id) & (mid_arr <= site_offset)
        distance[own] = site_offset - mid_arr[own]
        for up_id in net.ancestors(site.segment_id):
            up_len = net.segment(up_id).length
            between = net.path_length(up_id, up_len, site.segment_id, 0.0)
            on_seg = seg_arr == up_id
            distance[on_seg] = (up_len - mid_arr[on_seg]) + between + site_offset

        upstream = ~np.isnan(distance)
        loadings[i, upstream] = np.exp(-distance[upstream] / cfg.kernel_range) * np.sqrt(
            weights[upstream] / site_weight
        )

    return _Discretization(lengths=len_arr, loadings=loadings)


def true_covariance(net: StreamNetwork, cfg: SimConfig) -> np.ndarray:
    """Exact covariance of the discretized noise field across sites."""
    disc = _discretize(net, cfg)
    return _covariance(disc)


def _covariance(disc: _Discretization) -> np.ndarray:
    cov = (disc.loadings * disc.lengths) @ disc.loadings.T
    cov = 0.5 * (cov + cov.T)
    if np.any(np.diag(cov) <= 0):
        logger.warning("Some sites have no upstream sub-intervals; true covariance is singular")
    return cov


def simulate(net: StreamNetwork, cfg: SimConfig) -> SimOutput:
    """Generate observations Y_t = sum_i theta_i Y_{t-i} + eps_t with tail-up noise eps_t.

    Each time step draws its increments from its own child of SeedSequence(seed), so a step's
    noise does not depend on the order in which steps are generated.
    """
    disc = _discretize(net, cfg)
    burn_in = cfg.burn_in
    total = cfg.n_steps + burn_in
    scales = np.sqrt(disc.lengths)
    step_seeds = np.random.SeedSequence(cfg.seed).spawn(total)

    noise = np.empty((total, net.n_sites))
    for t, step_seed in enumerate(step_seeds):
        increments = np.random.default_rng(step_seed).standard_normal(disc.n_intervals) * scales
        noise[t] = disc.loadings @ increments
    if cfg.shift_at is not None:
        noise[burn_in + cfg.shift_at :] *= cfg.shift_scale

    theta = np.asarray(cfg.theta)
    order = theta.size
    observations = np.zeros((total, net.n_sites))
    for t in range(total):
        mean = np.zeros(net.n_sites)
        for lag in range(1, min(order, t) + 1):
            mean += theta[lag - 1] * observations[t - lag]
        observations[t] = mean + noise[t]

    if not np.isfinite(observations).all():
        logger.warning("Simulated observations overflowed; reduce n_steps or the AR coefficients")

    logger.info(
        f"Simulated {cfg.n_steps} steps ({burn_in} burn-in dropped) over {net.n_sites} sites "
        f"with {disc.n_intervals} sub-intervals"
    )
    return SimOutput(
        observations=observations[burn_in:],
        true_covariance=_covariance(disc),
        config=cfg,
        noise=noise[burn_in:],
        burn_in=burn_in,
        columns=net.site_columns(),
    )


def observations_frame(values: np.ndarray, columns: list[str]) -> pd.DataFrame:
    frame = pd.DataFrame(values, columns=columns)
    frame.insert(0, "t", np.arange(len(frame)))
    return frame


def write_outputs(output: SimOutput, out_dir: str | Path) -> dict[str, Path]:
    """Write observations.csv and true_covariance.csv; returns the written paths."""
    out_dir = Path(out_dir)
    paths = {
        "observations": out_dir / "observations.csv",
        "true_covariance": out_dir / "true_covariance.csv",
    }
    write_table_csv(paths["observations"], observations_frame(output.observations, output.columns))
    write_matrix_csv(paths["true_covariance"], output.true_covariance)
    return paths

