# ABOUTME: Click options and input resolution shared by the run and sweep commands
# ABOUTME: Builds networks, data sources and experiment configs from command-line flags
import logging
import sys
from pathlib import Path
from typing import Any, NoReturn

import click

from staci.config import Config
from staci.exceptions import StaciError, ValidationError
from staci.forecaster import load_external_predictions, load_observations
from staci.harness import Dataset, DataSource, ExperimentConfig, Method, SimulatedData, StaticData
from staci.network import StreamNetwork, load_network
from staci.simgen import SimConfig, figure1_network
from staci.utils import read_matrix_csv

logger = logging.getLogger(__name__)

PRESETS = {"preset:figure1": figure1_network}


def fail(error: Exception, code: int = 1) -> NoReturn:
    """Report a handled error and exit with the given code."""
    click.echo(f"✗ {error}", err=True)
    sys.exit(code)


def parse_theta(ctx, param, value: str | None) -> tuple[float, ...] | None:
    if value is None:
        return None
    try:
        theta = tuple(float(v) for v in value.split(",") if v.strip())
    except ValueError:
        raise click.BadParameter(f"expected comma-separated numbers, got {value!r}") from None
    if not theta:
        raise click.BadParameter("at least one AR coefficient is required")
    return theta


def resolve_network(network: str, sites: str | None) -> StreamNetwork:
    if network in PRESETS:
        if sites:
            logger.warning(f"--sites is ignored for {network}")
        return PRESETS[network]()
    if not sites:
        raise click.UsageError("--sites is required when --network is a file")
    return load_network(network, sites)


def resolve_out_dir(config: Config, out: str | None) -> Path:
    """--out (or $STACI_OUTPUT_DIR through click), then [output].directory."""
    if out:
        return Path(out).expanduser()
    default = config.get_output_dir()
    if default is None:
        raise click.UsageError("Missing option '--out' (or set STACI_OUTPUT_DIR)")
    return default


def simulation_config(
    config: Config, theta: tuple[float, ...], steps: int, seed: int = 0
) -> SimConfig:
    sim = config.settings["simulation"]
    return SimConfig(
        theta=theta,
        n_steps=steps,
        seed=seed,
        subintervals_per_segment=int(sim["subintervals_per_segment"]),
        headwater_extension_factor=float(sim["headwater_extension_factor"]),
        kernel_range=float(sim["kernel_range"]),
    )


def out_option(func):
    return click.option(
        "--out",
        envvar="STACI_OUTPUT_DIR",
        type=click.Path(file_okay=False),
        help="Output directory [env: STACI_OUTPUT_DIR]",
    )(func)


def data_options(func):
    """Input, network and experiment options shared by run and sweep."""
    existing_file = click.Path(exists=True, dir_okay=False)
    options = [
        click.option("--data", type=existing_file, help="Observation CSV (t, site_...)"),
        click.option(
            "--synthetic",
            "theta",
            callback=parse_theta,
            default=None,
            help="Simulate per seed with these AR coefficients, e.g. 0.7,0.3",
        ),
        click.option(
            "--steps",
            type=int,
            default=5000,
            show_default=True,
            help="Time steps per simulated seed",
        ),
        click.option(
            "--predictions",
            type=existing_file,
            help="External forecasts with the observation schema",
        ),
        click.option(
            "--network",
            default="preset:figure1",
            show_default=True,
            help="Network CSV or preset:figure1",
        ),
        click.option(
            "--sites", type=existing_file, help="Sites CSV (required with a network file)"
        ),
        click.option("--true-cov", type=existing_file, help="True covariance CSV (gt method)"),
        click.option(
            "--alpha", type=float, default=None, help="Target miscoverage; 0.05 means 95% coverage"
        ),
        click.option("--ncal", type=int, default=None, help="Calibration window size n"),
        click.option(
            "--ntest", type=int, default=None, help="Test horizon (default: all remaining rows)"
        ),
        click.option(
            "--train-fraction",
            type=float,
            default=None,
            help="Fraction of rows used to fit the forecaster",
        ),
        click.option(
            "--refit-every", type=int, default=None, help="Online covariance refit period"
        ),
        click.option("--seeds", type=int, default=None, help="Number of seeded replications"),
        click.option("--jobs", type=int, default=1, show_default=True, help="Worker processes"),
        out_option,
    ]
    for option in reversed(options):
        func = option(func)
    return func


def experiment_config(config: Config, **overrides: Any) -> ExperimentConfig:
    seeds = overrides.pop("seeds", None)
    if seeds is not None:
        if seeds < 1:
            raise click.BadParameter("--seeds must be >= 1")
        overrides["seeds"] = tuple(range(seeds))
    try:
        return config.experiment_config(**overrides)
    except ValidationError as e:
        raise click.UsageError(str(e)) from e


def load_source(
    config: Config,
    net: StreamNetwork,
    data: str | None,
    theta: tuple[float, ...] | None,
    steps: int,
    predictions: str | None,
    true_cov: str | None,
    methods: list[Method],
) -> tuple[DataSource, dict[str, str]]:
    """Data source for the run plus the input paths to record in the manifest."""
    if bool(data) == bool(theta):
        raise click.UsageError("Pass exactly one of --data or --synthetic")

    if theta is not None:
        if predictions:
            raise click.UsageError("--predictions cannot be combined with --synthetic")
        return SimulatedData(net, simulation_config(config, theta, steps)), {}

    if Method.GT in methods and not true_cov:
        raise click.UsageError("--method gt requires --true-cov")
    inputs = {"data": str(data)}
    try:
        observations = load_observations(data, columns=net.site_columns())
        forecasts = None
        if predictions:
            forecasts = load_external_predictions(predictions, observations).predictions
            inputs["predictions"] = str(predictions)
        covariance = None
        if true_cov:
            covariance = read_matrix_csv(Path(true_cov))
            inputs["true_cov"] = str(true_cov)
        dataset = Dataset(
            observations=observations.values, predictions=forecasts, true_covariance=covariance
        )
    except StaciError as e:
        fail(e)
    return StaticData(dataset), inputs
