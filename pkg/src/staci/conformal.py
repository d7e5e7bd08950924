# ABOUTME: Nonconformity scores, conformal quantiles and ellipsoid, sphere or box regions
# ABOUTME: Also region volumes for the efficiency metric and the adaptive level update
"""Conformal calibration and prediction regions"""

import logging
import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np
from scipy.special import gammaln

from staci.covariance import ScoreMatrix
from staci.exceptions import CalibrationError, ValidationError

logger = logging.getLogger(__name__)

# Guards ceil() against (1 - alpha)(n + 1) landing a hair above an integer.
RANK_EPS = 1e-9


class RegionShape(str, Enum):
    ELLIPSOID = "ellipsoid"
    SPHERE = "sphere"
    SQUARE = "square"


@dataclass(frozen=True)
class RegionSpec:
    """Region shape plus target miscoverage level.

    Ellipsoid and sphere regions carry the score matrix; the sphere is the ellipsoid with
    A = Identity. Square regions use per-dimension absolute residuals and need no matrix.
    """

    shape: RegionShape
    alpha: float
    score_matrix: ScoreMatrix | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "shape", RegionShape(self.shape))
        if not 0.0 < self.alpha < 1.0:
            raise ValidationError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.shape is RegionShape.SQUARE:
            if self.score_matrix is not None:
                raise ValidationError("Square regions do not take a score matrix")
        elif self.score_matrix is None:
            raise ValidationError(f"{self.shape.value} regions need a score matrix")

    @classmethod
    def ellipsoid(cls, score_matrix: ScoreMatrix, alpha: float) -> "RegionSpec":
        return cls(RegionShape.ELLIPSOID, alpha, score_matrix)

    @classmethod
    def sphere(cls, dim: int, alpha: float) -> "RegionSpec":
        return cls(RegionShape.SPHERE, alpha, ScoreMatrix.identity(dim))

    @classmethod
    def square(cls, alpha: float) -> "RegionSpec":
        return cls(RegionShape.SQUARE, alpha)

    @property
    def uses_matrix(self) -> bool:
        return self.shape is not RegionShape.SQUARE

    def with_matrix(self, score_matrix: ScoreMatrix) -> "RegionSpec":
        if not self.uses_matrix:
            raise ValidationError("Square regions do not take a score matrix")
        return replace(self, score_matrix=score_matrix)


@dataclass
class CalibrationState:
    """Calibration scores with their threshold at the current working level alpha_t.

    Scores are a length-n vector for ellipsoid/sphere regions and an n x I array of absolute
    residuals for square regions, whose threshold is then one quantile per dimension.
    """

    shape: RegionShape
    scores: np.ndarray
    threshold: float | np.ndarray
    alpha_t: float
    epsilon_bar: np.ndarray

    @property
    def n(self) -> int:
        return int(self.scores.shape[0])


@dataclass(frozen=True)
class PredictionRegion:
    center: np.ndarray
    spec: RegionSpec
    threshold: float | np.ndarray

    @property
    def dim(self) -> int:
        return int(self.center.size)

    @property
    def is_full_space(self) -> bool:
        return bool(np.all(np.isposinf(self.threshold)))

    @property
    def is_empty(self) -> bool:
        return bool(np.any(np.isneginf(self.threshold)))

    @property
    def threshold_value(self) -> float:
        """Scalar threshold for traces; the widest half-width for square regions."""
        return float(np.max(self.threshold))


def score(residual: np.ndarray, A: ScoreMatrix) -> float:
    """Quadratic-form nonconformity score residual^T A residual."""
    residual = np.asarray(residual, dtype=float)
    if residual.shape != (A.dim,):
        raise ValidationError(
            f"Residual of shape {residual.shape} does not match a {A.dim}x{A.dim} score matrix"
        )
    return max(float(residual @ A.A @ residual), 0.0)


def scores(residuals: np.ndarray, A: ScoreMatrix) -> np.ndarray:
    """Vectorized score over the rows of an n x I residual array."""
    residuals = np.atleast_2d(np.asarray(residuals, dtype=float))
    if residuals.shape[1] != A.dim:
        raise ValidationError(
            f"Residuals have {residuals.shape[1]} columns, score matrix is {A.dim}x{A.dim}"
        )
    values = np.einsum("ti,ij,tj->t", residuals, A.A, residuals)
    return np.maximum(values, 0.0)


def conformal_quantile(values: np.ndarray, alpha: float) -> float:
    """The ceil((1 - alpha)(n + 1))-th smallest score.

    Returns +inf when that rank exceeds n (full-space region) and -inf when it is <= 0, which
    happens once the adaptive level reaches 1 (empty region).
    """
    values = np.asarray(values, dtype=float).ravel()
    n = values.size
    if n == 0:
        raise CalibrationError("Cannot compute a conformal quantile from an empty score list")
    k = math.ceil((1.0 - alpha) * (n + 1) - RANK_EPS)
    if k > n:
        return math.inf
    if k <= 0:
        return -math.inf
    return float(np.sort(values, kind="stable")[k - 1])


def _box_level(alpha: float, dim: int) -> float:
    # Bonferroni split across dimensions; at or above 1 the box is empty either way.
    return alpha / dim if alpha < 1.0 else alpha


def _calibration_scores(centered: np.ndarray, spec: RegionSpec) -> np.ndarray:
    if spec.uses_matrix:
        return scores(centered, spec.score_matrix)
    return np.abs(centered)


def _threshold(values: np.ndarray, shape: RegionShape, alpha: float) -> float | np.ndarray:
    if shape is RegionShape.SQUARE:
        level = _box_level(alpha, values.shape[1])
        return np.array([conformal_quantile(values[:, i], level) for i in range(values.shape[1])])
    return conformal_quantile(values, alpha)


def calibrate(
    centered: np.ndarray,
    spec: RegionSpec,
    epsilon_bar: np.ndarray,
    alpha_t: float | None = None,
) -> CalibrationState:
    """Score centered calibration residuals; the threshold uses alpha_t, else spec.alpha."""
    centered = np.atleast_2d(np.asarray(centered, dtype=float))
    if centered.shape[0] == 0:
        raise CalibrationError("Calibration window is empty")
    epsilon_bar = np.asarray(epsilon_bar, dtype=float)
    if epsilon_bar.shape != (centered.shape[1],):
        raise ValidationError(
            f"Residual mean has shape {epsilon_bar.shape}, "
            f"residuals have {centered.shape[1]} columns"
        )
    level = spec.alpha if alpha_t is None else alpha_t
    values = _calibration_scores(centered, spec)
    return CalibrationState(
        shape=spec.shape,
        scores=values,
        threshold=_threshold(values, spec.shape, level),
        alpha_t=level,
        epsilon_bar=epsilon_bar,
    )


def requantile(state: CalibrationState, alpha_t: float) -> CalibrationState:
    """The same scores with the threshold recomputed at a new working level."""
    threshold = _threshold(state.scores, state.shape, alpha_t)
    return replace(state, threshold=threshold, alpha_t=alpha_t)


def build_region(
    prediction: np.ndarray, state: CalibrationState, spec: RegionSpec
) -> PredictionRegion:
    """Region centered on prediction + epsilon_bar with the calibrated threshold."""
    if state.shape is not spec.shape:
        raise CalibrationError(
            f"Calibration state is for {state.shape.value} regions, "
            f"spec asks for {spec.shape.value}"
        )
    prediction = np.asarray(prediction, dtype=float)
    if prediction.shape != state.epsilon_bar.shape:
        raise ValidationError(
            f"Prediction has shape {prediction.shape}, calibration has {state.epsilon_bar.shape}"
        )
    return PredictionRegion(
        center=prediction + state.epsilon_bar, spec=spec, threshold=state.threshold
    )


def contains(region: PredictionRegion, y: np.ndarray) -> bool:
    """Membership with a closed boundary."""
    y = np.asarray(y, dtype=float)
    if y.shape != region.center.shape:
        raise ValidationError(f"Target has shape {y.shape}, region is {region.center.shape}")
    if region.is_empty:
        return False
    if region.is_full_space:
        return True
    offset = y - region.center
    if region.spec.shape is RegionShape.SQUARE:
        return bool(np.all(np.abs(offset) <= region.threshold))
    return score(offset, region.spec.score_matrix) <= region.threshold


def region_volume_scaled(region: PredictionRegion) -> float:
    """I-th root of the region volume: +inf for full space, 0 for empty regions."""
    if region.is_empty:
        return 0.0
    if np.any(np.isposinf(region.threshold)):
        return math.inf

    dim = region.dim
    if region.spec.shape is RegionShape.SQUARE:
        half_widths = np.asarray(region.threshold, dtype=float)
        if np.any(half_widths <= 0):
            return 0.0
        return float(np.exp(np.log(2.0 * half_widths).mean()))

    radius2 = float(region.threshold)
    if radius2 <= 0:
        return 0.0
    log_volume = (
        0.5 * dim * math.log(math.pi)
        - float(gammaln(0.5 * dim + 1.0))
        + 0.5 * dim * math.log(radius2)
        - 0.5 * region.spec.score_matrix.log_det
    )
    return math.exp(log_volume / dim)


def aci_update(alpha_t: float, covered: bool, alpha_target: float, gamma: float) -> float:
    """alpha_{t+1} = alpha_t + gamma * (alpha_target - miss), without clipping."""
    if gamma < 0:
        raise ValidationError(f"gamma must be nonnegative, got {gamma}")
    return alpha_t + gamma * (alpha_target - (0.0 if covered else 1.0))
