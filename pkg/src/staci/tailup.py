# ABOUTME: Topology-induced tail-up covariance for sites on a stream network
# ABOUTME: Builds the exponential tail-up matrix and fits (sigma2, phi) by l1 loss
"""Tail-up exponential covariance model"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import linalg
from scipy.optimize import minimize_scalar

from staci.exceptions import CovarianceError, ValidationError
from staci.network import StreamNetwork
from staci.utils import read_key_values, write_key_values

logger = logging.getLogger(__name__)

PD_JITTER = 1e-8


@dataclass(frozen=True)
class TailUpParams:
    """Scale sigma2 and exponential range phi of the tail-up model."""

    sigma2: float
    phi: float

    def __post_init__(self) -> None:
        for name in ("sigma2", "phi"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValidationError(f"TailUpParams.{name} must be positive, got {value}")

    def save(self, path: str | Path) -> None:
        write_key_values(Path(path), {"sigma2": self.sigma2, "phi": self.phi})

    @classmethod
    def load(cls, path: str | Path) -> "TailUpParams":
        values = read_key_values(Path(path))
        missing = {"sigma2", "phi"} - set(values)
        if missing:
            raise ValidationError(f"{path}: missing tail-up parameters {sorted(missing)}")
        return cls(sigma2=values["sigma2"], phi=values["phi"])


@dataclass(frozen=True)
class TopologyCovariance:
    matrix: np.ndarray
    params: TailUpParams
    jittered: bool = False


class _PairTerms:
    """Weight ratios and distances oriented upstream-to-downstream for every site pair."""

    def __init__(self, net: StreamNetwork):
        structure = net.flow_structure
        weights = np.array([net.site_weight(site) for site in net.sites])
        ratio = np.sqrt(weights[:, None] / weights[None, :])
        self.connected = structure.connected
        self.ratio = np.where(structure.upstream, ratio, ratio.T)
        self.distance = np.where(self.connected, structure.distance, 0.0)

    def kernel(self, phi: float) -> np.ndarray:
        """Correlation-scale matrix sqrt(w(u)/w(v)) exp(-d/phi); zero off the connected pairs."""
        with np.errstate(over="ignore", divide="ignore", under="ignore"):
            decay = np.exp(-self.distance / phi)
        k = np.where(self.connected, self.ratio * decay, 0.0)
        np.fill_diagonal(k, 1.0)
        return k


def _factorizes(matrix: np.ndarray) -> bool:
    try:
        linalg.cho_factor(matrix, lower=True)
    except linalg.LinAlgError:
        return False
    return True


def tailup_covariance(net: StreamNetwork, params: TailUpParams) -> TopologyCovariance:
    """Topology covariance for all site pairs, verified positive definite."""
    matrix = params.sigma2 * _PairTerms(net).kernel(params.phi)
    if _factorizes(matrix):
        return TopologyCovariance(matrix=matrix, params=params)

    jittered = matrix + PD_JITTER * params.sigma2 * np.eye(net.n_sites)
    if _factorizes(jittered):
        logger.warning(f"Tail-up covariance needed diagonal jitter for {params}")
        return TopologyCovariance(matrix=jittered, params=params, jittered=True)

    raise CovarianceError(
        f"Tail-up covariance is not positive definite for {params}",
        recovery_hint="Check that the flow weights satisfy additivity at every confluence",
    )


def _weighted_median(values: np.ndarray, weights: np.ndarray) -> float:
    order = np.argsort(values, kind="stable")
    cum = np.cumsum(weights[order])
    idx = int(np.searchsorted(cum, 0.5 * cum[-1]))
    return float(values[order][idx])


def _profile(terms: _PairTerms, targets: np.ndarray, phi: float) -> tuple[float, float]:
    """l1-optimal sigma2 for a fixed phi and the loss it attains."""
    k = terms.kernel(phi)[terms.connected]
    live = k > 0
    sigma2 = _weighted_median(targets[live] / k[live], k[live])
    if not (math.isfinite(sigma2) and sigma2 > 0):
        return math.inf, math.nan
    return float(np.abs(sigma2 * k - targets).sum()), sigma2


def tailup_loss(net: StreamNetwork, sample_cov: np.ndarray, params: TailUpParams) -> float:
    """l1 distance to sample_cov over the diagonal and flow-connected pairs."""
    terms = _PairTerms(net)
    model = params.sigma2 * terms.kernel(params.phi)
    return float(np.abs(model - sample_cov)[terms.connected].sum())


def fit_tailup(
    net: StreamNetwork,
    sample_cov: np.ndarray,
    grid_points: int = 50,
    grid_span: float = 100.0,
) -> TailUpParams:
    """Fit (sigma2, phi) to a sample covariance by l1 loss.

    phi is searched on a log grid over [mean_distance / grid_span, mean_distance * grid_span]
    with sigma2 profiled out as a weighted median; the grid winner is then refined by a bounded
    Brent search between its neighbours. Ties go to the smallest phi.
    """
    sample_cov = np.asarray(sample_cov, dtype=float)
    n = net.n_sites
    if sample_cov.shape != (n, n):
        raise ValidationError(f"sample_cov must be {n}x{n}, got {sample_cov.shape}")
    if not np.allclose(sample_cov, sample_cov.T):
        raise ValidationError("sample_cov must be symmetric")

    terms = _PairTerms(net)
    targets = sample_cov[terms.connected]
    off_diagonal = terms.connected & ~np.eye(n, dtype=bool)
    distances = terms.distance[off_diagonal]
    distances = distances[distances > 0]

    if distances.size == 0:
        # Only the diagonal informs the fit; phi is unidentifiable.
        sigma2 = float(np.median(np.diag(sample_cov)))
        if not (math.isfinite(sigma2) and sigma2 > 0):
            raise CovarianceError(
                f"Cannot fit a positive sigma2 from diagonal {np.diag(sample_cov)}"
            )
        logger.info(
            f"No flow-connected site pairs; fitted sigma2={sigma2:.6g}, phi=1 by convention"
        )
        return TailUpParams(sigma2=sigma2, phi=1.0)

    mean_distance = float(distances.mean())
    grid = np.geomspace(mean_distance / grid_span, mean_distance * grid_span, grid_points)
    evaluated = [_profile(terms, targets, phi) for phi in grid]
    losses = np.array([loss for loss, _ in evaluated])
    if not np.isfinite(losses).any():
        raise CovarianceError(
            "Tail-up fit found no positive sigma2 on the phi grid",
            recovery_hint="The sample covariance may be dominated by negative entries",
        )

    best = int(np.argmin(losses))
    best_loss, best_sigma2 = evaluated[best]
    best_phi = float(grid[best])

    lo = math.log(grid[max(best - 1, 0)])
    hi = math.log(grid[min(best + 1, grid_points - 1)])
    refined = minimize_scalar(
        lambda log_phi: _profile(terms, targets, math.exp(log_phi))[0],
        bounds=(lo, hi),
        method="bounded",
        options={"xatol": 1e-10},
    )
    if refined.success and refined.fun < best_loss:
        best_phi = math.exp(float(refined.x))
        best_loss, best_sigma2 = _profile(terms, targets, best_phi)

    params = TailUpParams(sigma2=best_sigma2, phi=best_phi)
    logger.info(
        f"Fitted tail-up sigma2={params.sigma2:.6g}, phi={params.phi:.6g} (loss {best_loss:.6g})"
    )
    return params
