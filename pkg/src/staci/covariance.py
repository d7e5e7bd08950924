# ABOUTME: Residual windows, sample covariance, robust PD inversion and the blended score matrix
# ABOUTME: Forms A = (1 - lambda) * inv(sample_cov) + lambda * inv(topology_cov)
"""Covariance estimation and score-matrix blending"""

import logging
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from staci.exceptions import CovarianceError, ValidationError

logger = logging.getLogger(__name__)

SAMPLE_RIDGE = 1e-6
TOPOLOGY_RIDGE = 0.0


class ResidualWindow:
    """Sliding window of the most recent residual vectors (most recent last)."""

    def __init__(self, capacity: int, residuals: np.ndarray | None = None):
        if capacity < 1:
            raise ValidationError(f"Window capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._rows: deque[np.ndarray] = deque(maxlen=capacity)
        if residuals is not None:
            for row in np.atleast_2d(residuals):
                self.push(row)

    def push(self, residual: np.ndarray) -> None:
        """Append a residual, evicting the oldest once the window is full."""
        residual = np.asarray(residual, dtype=float)
        if not np.isfinite(residual).all():
            raise ValidationError("Residuals must be finite")
        if self._rows and residual.shape != self._rows[0].shape:
            raise ValidationError(
                f"Residual has shape {residual.shape}, window holds {self._rows[0].shape}"
            )
        self._rows.append(residual)

    def __len__(self) -> int:
        return len(self._rows)

    def as_array(self) -> np.ndarray:
        return np.vstack(self._rows) if self._rows else np.empty((0, 0))


@dataclass(frozen=True)
class ScoreMatrix:
    """Symmetric positive-definite matrix of the Mahalanobis score, with its log-determinant."""

    A: np.ndarray
    lam: float | None
    provenance: str
    log_det: float = field(default=math.nan)

    @classmethod
    def from_matrix(
        cls, A: np.ndarray, provenance: str, lam: float | None = None
    ) -> "ScoreMatrix":
        A = np.asarray(A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValidationError(f"Score matrix must be square, got shape {A.shape}")
        if lam is not None and not 0.0 <= lam <= 1.0:
            raise ValidationError(f"lambda must be in [0, 1], got {lam}")
        if not np.allclose(A, A.T, rtol=1e-10, atol=1e-12 * np.abs(A).max()):
            raise CovarianceError("Score matrix is not symmetric")
        try:
            factor, _ = linalg.cho_factor(A, lower=True)
        except linalg.LinAlgError as e:
            raise CovarianceError(f"Score matrix ({provenance}) is not positive definite") from e
        log_det = 2.0 * float(np.log(np.diag(factor)).sum())
        return cls(A=A, lam=lam, provenance=provenance, log_det=log_det)

    @classmethod
    def identity(cls, dim: int) -> "ScoreMatrix":
        return cls(A=np.eye(dim), lam=None, provenance="identity", log_det=0.0)

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    def scaled(self, c: float) -> "ScoreMatrix":
        """The same score shape with A multiplied by c > 0."""
        if not c > 0:
            raise ValidationError(f"Scale must be positive, got {c}")
        return ScoreMatrix(
            A=c * self.A,
            lam=self.lam,
            provenance=f"{self.provenance}*{c:g}",
            log_det=self.log_det + self.dim * math.log(c),
        )


def center_residuals(raw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Subtract the window mean from every residual; returns (centered, mean)."""
    raw = np.atleast_2d(np.asarray(raw, dtype=float))
    if raw.shape[0] == 0:
        raise ValidationError("Cannot center an empty residual list")
    mean = raw.mean(axis=0)
    return raw - mean, mean


def sample_covariance(window: ResidualWindow | np.ndarray) -> np.ndarray:
    """Unbiased covariance sum(e e^T) / (n - 1) of centered residuals."""
    residuals = window.as_array() if isinstance(window, ResidualWindow) else np.asarray(window)
    residuals = np.atleast_2d(residuals)
    n = residuals.shape[0]
    if n < 2:
        raise CovarianceError(
            f"Sample covariance needs at least 2 residuals, got {n}",
            recovery_hint="Increase the calibration window",
        )
    cov = residuals.T @ residuals / (n - 1)
    return 0.5 * (cov + cov.T)


def invert_pd(M: np.ndarray, ridge: float = 0.0) -> np.ndarray:
    """Inverse of M + ridge * tr(M)/I * Identity through a Cholesky factorization."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValidationError(f"Matrix must be square, got shape {M.shape}")
    if ridge < 0:
        raise ValidationError(f"ridge must be nonnegative, got {ridge}")
    dim = M.shape[0]
    if ridge > 0:
        M = M + ridge * np.trace(M) / dim * np.eye(dim)
    try:
        factor = linalg.cho_factor(M, lower=True)
    except linalg.LinAlgError as e:
        raise CovarianceError(
            f"Matrix is not positive definite at ridge {ridge:g}",
            recovery_hint="Use a larger calibration window or a positive ridge",
        ) from e
    inverse = linalg.cho_solve(factor, np.eye(dim))
    return 0.5 * (inverse + inverse.T)


def blend(
    sample_cov: np.ndarray | None,
    topo_cov: np.ndarray | None,
    lam: float,
    sample_ridge: float = SAMPLE_RIDGE,
) -> ScoreMatrix:
    """Score matrix (1 - lam) * inv(sample_cov) + lam * inv(topo_cov).

    At lam = 0 the topology branch is never touched and at lam = 1 the sample branch is never
    touched, so either endpoint equals the single precision matrix exactly.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValidationError(f"lambda must be in [0, 1], got {lam}")

    parts = []
    if lam < 1.0:
        if sample_cov is None:
            raise ValidationError("A sample covariance is required when lambda < 1")
        parts.append("sample")
        sample_precision = invert_pd(sample_cov, sample_ridge)
    if lam > 0.0:
        if topo_cov is None:
            raise ValidationError("A topology covariance is required when lambda > 0")
        parts.append("topology")
        topo_precision = invert_pd(topo_cov, TOPOLOGY_RIDGE)

    if lam == 0.0:
        A = sample_precision
    elif lam == 1.0:
        A = topo_precision
    else:
        A = (1.0 - lam) * sample_precision + lam * topo_precision

    logger.debug(f"Blended score matrix with lambda={lam} from {'+'.join(parts)}")
    return ScoreMatrix.from_matrix(A, provenance="+".join(parts), lam=lam)
