# ABOUTME: Point forecasts for the conformal pipeline: least-squares AR(w) fits and external files
# ABOUTME: Also loads observation CSVs and checks prediction files against their schema
"""Point-prediction models"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
import pandas as pd

from staci.exceptions import DataError, ValidationError

logger = logging.getLogger(__name__)

TIME_COLUMN = "t"


class PredictionSource(str, Enum):
    INTERNAL_AR = "internal-ar"
    EXTERNAL_FILE = "external-file"


@dataclass(frozen=True)
class Observations:
    """Observation table: integer timestamps and a T x I value matrix in site order."""

    timestamps: np.ndarray
    values: np.ndarray
    columns: list[str] = field(default_factory=list)

    @property
    def n_steps(self) -> int:
        return int(self.values.shape[0])

    @property
    def n_sites(self) -> int:
        return int(self.values.shape[1])


@dataclass(frozen=True)
class ARModel:
    """AR(w) mean with shared (w,) or per-site (w, I) coefficients and a per-site intercept."""

    order: int
    coeffs: np.ndarray
    intercept: np.ndarray
    shared: bool = True

    def __post_init__(self) -> None:
        if self.order < 1:
            raise ValidationError(f"AR order must be >= 1, got {self.order}")
        if not (np.isfinite(self.coeffs).all() and np.isfinite(self.intercept).all()):
            raise ValidationError("AR coefficients must be finite")
        expected = (self.order,) if self.shared else (self.order, self.intercept.size)
        if self.coeffs.shape != expected:
            raise ValidationError(
                f"AR coefficients have shape {self.coeffs.shape}, want {expected}"
            )

    @property
    def n_sites(self) -> int:
        return int(self.intercept.size)


@dataclass(frozen=True)
class PredictionSeries:
    predictions: np.ndarray
    source: PredictionSource
    timestamps: np.ndarray | None = None


def lagged_design(series: np.ndarray, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Lag stack and targets: lags[t, j, i - 1] = Y_{t + order - i, j}, targets = Y[order:]."""
    series = np.asarray(series, dtype=float)
    n_rows = series.shape[0] - order
    lags = np.stack([series[order - i : order - i + n_rows] for i in range(1, order + 1)], axis=-1)
    return lags, series[order:]


def fit_ar(
    train: np.ndarray, order: int, shared: bool = True, intercept: bool = True
) -> ARModel:
    """Ordinary least squares of Y_t on its w lags; returns the minimum-norm solution.

    shared pools every site into one regression with one coefficient vector (and one intercept
    dummy per site); otherwise each site gets its own regression.
    """
    train = np.atleast_2d(np.asarray(train, dtype=float))
    if order < 1:
        raise ValidationError(f"AR order must be >= 1, got {order}")
    n_steps, n_sites = train.shape
    if n_steps <= order + 1:
        raise ValidationError(
            f"Need more than {order + 1} training steps for AR({order}), got {n_steps}"
        )
    if not np.isfinite(train).all():
        raise DataError("Training observations contain non-finite values")

    lags, targets = lagged_design(train, order)
    n_rows = targets.shape[0]

    if shared:
        design = lags.reshape(n_rows * n_sites, order)
        if intercept:
            design = np.hstack([design, np.tile(np.eye(n_sites), (n_rows, 1))])
        _check_rows(design)
        beta = np.linalg.lstsq(design, targets.reshape(-1), rcond=None)[0]
        coeffs = beta[:order]
        offsets = beta[order:] if intercept else np.zeros(n_sites)
    else:
        coeffs = np.empty((order, n_sites))
        offsets = np.zeros(n_sites)
        for j in range(n_sites):
            design = lags[:, j, :]
            if intercept:
                design = np.hstack([design, np.ones((n_rows, 1))])
            _check_rows(design)
            beta = np.linalg.lstsq(design, targets[:, j], rcond=None)[0]
            coeffs[:, j] = beta[:order]
            if intercept:
                offsets[j] = beta[order]

    model = ARModel(order=order, coeffs=coeffs, intercept=offsets, shared=shared)
    logger.debug(f"Fitted AR({order}) shared={shared} coefficients {np.round(coeffs, 4).tolist()}")
    return model


def _check_rows(design: np.ndarray) -> None:
    rows, params = design.shape
    if rows < params:
        raise ValidationError(
            f"AR design has {rows} rows for {params} parameters",
            recovery_hint="Use a longer training split or a lower AR order",
        )


def predict(model: ARModel, history: np.ndarray) -> np.ndarray:
    """One-step forecast from the last w observations (most recent last)."""
    history = np.asarray(history, dtype=float)
    if history.shape != (model.order, model.n_sites):
        raise ValidationError(
            f"History must be {model.order}x{model.n_sites}, got shape {history.shape}"
        )
    recent_first = history[::-1]
    if model.shared:
        return model.intercept + model.coeffs @ recent_first
    return model.intercept + (model.coeffs * recent_first).sum(axis=0)


def _fitted(model: ARModel, lags: np.ndarray) -> np.ndarray:
    if model.shared:
        return lags @ model.coeffs + model.intercept
    return np.einsum("tji,ij->tj", lags, model.coeffs) + model.intercept


def residuals(model: ARModel, series: np.ndarray) -> np.ndarray:
    """In-sample one-step errors Y_t - predict(Y_{t-w..t-1}) for t >= w."""
    lags, targets = lagged_design(series, model.order)
    return targets - _fitted(model, lags)


def predict_series(model: ARModel, observations: np.ndarray, start: int, stop: int) -> np.ndarray:
    """Forecasts for rows start..stop-1, each from the w observed rows before it."""
    observations = np.asarray(observations, dtype=float)
    if start < model.order:
        raise ValidationError(f"Forecasts need {model.order} rows of history, start={start}")
    if stop > observations.shape[0] or stop < start:
        raise ValidationError(f"Invalid forecast range [{start}, {stop})")
    lags, _ = lagged_design(observations[start - model.order : stop], model.order)
    return _fitted(model, lags)


def _read_table(path: Path, what: str) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path)
    except FileNotFoundError as e:
        raise DataError(f"{what} file not found: {path}") from e
    except (ValueError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataError(f"Invalid {what} file {path}: {e}") from e
    if frame.columns.empty or frame.columns[0] != TIME_COLUMN:
        raise DataError(f"{path}: first column must be '{TIME_COLUMN}'")
    if len(frame.columns) < 2:
        raise DataError(f"{path}: no site columns")
    return frame


def _numeric(frame: pd.DataFrame, path: Path) -> np.ndarray:
    try:
        values = frame.to_numpy(dtype=float)
    except ValueError as e:
        raise DataError(f"{path}: non-numeric values: {e}") from e
    bad = ~np.isfinite(values)
    if bad.any():
        row, col = map(int, np.argwhere(bad)[0])
        raise DataError(
            f"{path}: non-finite value in column {frame.columns[col]!r} at row {row + 1}"
        )
    return values


def load_observations(path: str | Path, columns: list[str] | None = None) -> Observations:
    """Read a `t, site_...` CSV; when columns is given the site columns must match it exactly."""
    path = Path(path)
    frame = _read_table(path, "Observation")
    site_columns = [str(c) for c in frame.columns[1:]]
    if columns is not None and site_columns != list(columns):
        raise DataError(
            f"{path}: site columns {site_columns} do not match the sites file {list(columns)}",
            recovery_hint="Columns are ordered by the sites file; reorder the observation file",
        )
    values = _numeric(frame, path)
    timestamps = values[:, 0]
    if not np.all(timestamps == np.round(timestamps)):
        raise DataError(f"{path}: timestamps must be integers")
    if len(np.unique(timestamps)) != len(timestamps):
        raise DataError(f"{path}: duplicate timestamps")
    logger.debug(f"Loaded {len(frame)} observations over {len(site_columns)} sites from {path}")
    return Observations(
        timestamps=timestamps.astype(int), values=values[:, 1:], columns=site_columns
    )


def load_external_predictions(path: str | Path, observations: Observations) -> PredictionSeries:
    """Read forecasts with the observation schema and align them to the observation timestamps."""
    path = Path(path)
    frame = _read_table(path, "Prediction")
    site_columns = [str(c) for c in frame.columns[1:]]
    if site_columns != observations.columns:
        detail = (
            "are permuted relative to"
            if sorted(site_columns) == sorted(observations.columns)
            else "do not match"
        )
        raise DataError(f"{path}: prediction columns {detail} the observation columns")

    values = _numeric(frame, path)
    by_time = pd.DataFrame(values[:, 1:], index=values[:, 0].astype(int))
    if by_time.index.has_duplicates:
        raise DataError(f"{path}: duplicate timestamps")
    missing = [t for t in observations.timestamps if t not in by_time.index]
    if missing:
        raise DataError(
            f"{path}: no prediction for timestamp {missing[0]}"
            + (f" ({len(missing)} missing in total)" if len(missing) > 1 else "")
        )
    extra = by_time.index.difference(pd.Index(observations.timestamps))
    if not extra.empty:
        raise DataError(
            f"{path}: prediction for timestamp {extra[0]} has no observation"
            + (f" ({len(extra)} extra in total)" if len(extra) > 1 else ""),
            recovery_hint="Prediction rows must cover exactly the observation timestamps",
        )
    aligned = by_time.loc[observations.timestamps].to_numpy()
    return PredictionSeries(
        predictions=aligned,
        source=PredictionSource.EXTERNAL_FILE,
        timestamps=observations.timestamps.copy(),
    )
