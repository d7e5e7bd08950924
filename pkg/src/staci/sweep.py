# ABOUTME: Hyperparameter sweeps over lambda, calibration size, ACI step and refit mode
# ABOUTME: Parses grid specs and runs every cell x method x seed into a long-format table
"""Grid sweeps of the experiment harness"""

import itertools
import logging
import math
from collections.abc import Callable, Iterable
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np
import pandas as pd

from staci.exceptions import StaciError, ValidationError
from staci.harness import (
    RESULT_COLUMNS,
    DataSource,
    ExperimentConfig,
    Method,
    Mode,
    compute_metrics,
    result_row,
    run_replication,
)
from staci.network import StreamNetwork

logger = logging.getLogger(__name__)

FAILURE_COLUMNS = ["method", "lambda", "n_cal", "gamma", "mode", "seed", "error"]

# Grid axis name -> (ExperimentConfig field, value parser)
AXES: dict[str, tuple[str, Callable[[str], Any]]] = {
    "lambda": ("lam", float),
    "ncal": ("n_cal", int),
    "gamma": ("gamma", float),
    "mode": ("mode", Mode),
}


@dataclass(frozen=True)
class SweepGrid:
    """Values per axis; axes left out keep the base config's value."""

    axes: dict[str, tuple[Any, ...]] = field(default_factory=dict)

    @property
    def is_empty(self) -> bool:
        return not self.axes or any(not values for values in self.axes.values())

    def cells(self, base: ExperimentConfig) -> list[ExperimentConfig]:
        if self.is_empty:
            return []
        names = list(self.axes)
        cells = []
        for combo in itertools.product(*(self.axes[n] for n in names)):
            overrides = {AXES[name][0]: value for name, value in zip(names, combo, strict=True)}
            cells.append(replace(base, **overrides))
        return cells


def _range_values(text: str, parser: Callable[[str], Any]) -> list[Any]:
    start_s, stop_s, step_s = text.split(":")
    start, stop, step = float(start_s), float(stop_s), float(step_s)
    if not step > 0 or stop < start:
        raise ValueError(f"range {text!r} needs step > 0 and stop >= start")
    count = math.floor((stop - start) / step + 1e-9) + 1
    values = np.round(start + step * np.arange(count), 12)
    return [int(round(v)) if parser is int else parser(float(v)) for v in values]


def parse_grid_spec(spec: str) -> tuple[str, list[Any]]:
    """Parse `axis=v1,v2,...` or `axis=start:stop:step` into (axis, values)."""
    name, sep, body = spec.partition("=")
    name = name.strip().lower()
    if not sep or name not in AXES:
        raise ValidationError(
            f"Malformed grid spec {spec!r}",
            recovery_hint=f"Use axis=values with axis one of {', '.join(AXES)}",
        )
    parser = AXES[name][1]
    values: list[Any] = []
    try:
        for part in filter(None, (p.strip() for p in body.split(","))):
            values += _range_values(part, parser) if ":" in part else [parser(part)]
    except ValueError as e:
        raise ValidationError(f"Malformed grid spec {spec!r}: {e}") from e
    return name, values


def parse_grid(specs: Iterable[str]) -> SweepGrid:
    """Merge grid specs per axis, dropping duplicates and sorting the values."""
    merged: dict[str, set[Any]] = {}
    for spec in specs:
        name, values = parse_grid_spec(spec)
        merged.setdefault(name, set()).update(values)
    axes = {
        name: tuple(sorted(values, key=lambda v: v.value if isinstance(v, Mode) else v))
        for name, values in merged.items()
    }
    return SweepGrid(axes=axes)


@dataclass
class SweepResult:
    table: pd.DataFrame
    failures: pd.DataFrame

    @property
    def ok(self) -> bool:
        return self.failures.empty


def _run_cell(
    source: DataSource, net: StreamNetwork, cfg: ExperimentConfig, method: Method, seed: int
) -> dict[str, Any]:
    """One results row, or a failure record carrying the error message."""
    try:
        result = run_replication(source.for_seed(seed), net, cfg, method, seed)
        return result_row(method, cfg, seed, compute_metrics(result.trace))
    except (StaciError, np.linalg.LinAlgError, FloatingPointError) as e:
        return {
            "method": method.value,
            "lambda": cfg.lam,
            "n_cal": cfg.n_cal,
            "gamma": cfg.gamma,
            "mode": cfg.mode.value,
            "seed": seed,
            "error": str(e),
        }


def _sort_key(row: dict[str, Any]) -> tuple:
    return (row["method"], row["lambda"], row["n_cal"], row["gamma"], row["mode"], row["seed"])


def _run_config(
    cfg: ExperimentConfig, method: Method, base: ExperimentConfig
) -> ExperimentConfig:
    """The config a run actually depends on; lambda is pinned for methods that ignore it."""
    return cfg if method.reads_lambda else replace(cfg, lam=base.lam)


def sweep(
    source: DataSource,
    net: StreamNetwork,
    base: ExperimentConfig,
    grid: SweepGrid,
    methods: Iterable[Method | str],
    jobs: int = 1,
) -> SweepResult:
    """Run the Cartesian product of grid cells, methods and base.seeds.

    Methods that ignore lambda run once per remaining cell and seed; their row is repeated for
    every lambda value. A failing cell is recorded in the failures table and the sweep
    continues. Rows are sorted by their cell key, so the table does not depend on completion
    order.
    """
    cells = [
        (cfg, Method(method), seed)
        for method in methods
        for cfg in grid.cells(base)
        for seed in base.seeds
    ]
    if not cells:
        logger.warning("Sweep grid is empty; nothing to run")
        return SweepResult(
            table=pd.DataFrame(columns=RESULT_COLUMNS),
            failures=pd.DataFrame(columns=FAILURE_COLUMNS),
        )

    tasks = list(dict.fromkeys((_run_config(cfg, m, base), m, s) for cfg, m, s in cells))
    logger.info(f"Sweeping {len(cells)} cells with {len(tasks)} runs on {jobs} worker(s)")
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_cell, source, net, cfg, m, s) for cfg, m, s in tasks]
            outcomes = [f.result() for f in futures]
    else:
        outcomes = [_run_cell(source, net, cfg, m, s) for cfg, m, s in tasks]
    by_task = dict(zip(tasks, outcomes, strict=True))

    rows = [
        {**by_task[(_run_config(cfg, method, base), method, seed)], "lambda": cfg.lam}
        for cfg, method, seed in cells
    ]
    done = sorted((r for r in rows if "error" not in r), key=_sort_key)
    failed = sorted((r for r in rows if "error" in r), key=_sort_key)
    for row in failed:
        logger.error(
            f"Sweep cell {row['method']} lambda={row['lambda']} n_cal={row['n_cal']} "
            f"gamma={row['gamma']} mode={row['mode']} seed={row['seed']} failed: {row['error']}"
        )
    return SweepResult(
        table=pd.DataFrame(done, columns=RESULT_COLUMNS),
        failures=pd.DataFrame(failed, columns=FAILURE_COLUMNS),
    )
