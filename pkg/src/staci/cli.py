# ABOUTME: Command-line interface for staci conformal prediction experiments
# ABOUTME: Provides simulate, run, sweep and version commands over stream-network data
"""staci command-line interface"""

import logging
from dataclasses import replace

import click
from dotenv import load_dotenv

from staci import __version__
from staci.commands.options import (
    data_options,
    experiment_config,
    fail,
    load_source,
    out_option,
    parse_theta,
    resolve_network,
    resolve_out_dir,
    simulation_config,
)
from staci.commands.sweep import register as register_sweep
from staci.config import Config
from staci.exceptions import ConfigError, StaciError
from staci.harness import Method, Mode, run_experiment, write_results
from staci.logging_config import setup_logging
from staci.manifest import RunManifest
from staci.network import validate_additivity, write_network_csv, write_sites_csv
from staci.simgen import simulate, write_outputs
from staci.tailup import TailUpParams

logger = logging.getLogger(__name__)


@click.group()
@click.pass_context
@click.option("--debug", is_flag=True, help="Enable debug logging")
@click.option(
    "--config",
    "config_path",
    type=click.Path(dir_okay=False),
    default=None,
    help="Config TOML (default: $XDG_CONFIG_HOME/staci/config.toml)",
)
def cli(ctx, debug, config_path):
    """staci - conformal prediction regions for forecasts on stream networks

    Simulate tail-up data on a stream network, calibrate blended-covariance
    ellipsoids (and baseline regions) on forecast residuals, and sweep
    hyperparameters into plot-ready CSV tables.
    """
    load_dotenv()

    try:
        config = Config(config_path)
    except ConfigError as e:
        fail(e)

    log_settings = config.settings["logging"]
    setup_logging(
        "DEBUG" if debug else log_settings["level"],
        log_file=log_settings.get("file") or None,
        log_dir=str(config.get_log_dir()),
    )

    ctx.ensure_object(dict)
    ctx.obj["config"] = config
    ctx.obj["config_path"] = config_path


@cli.command(name="simulate")
@click.pass_context
@click.option(
    "--network",
    default="preset:figure1",
    show_default=True,
    help="Network CSV or preset:figure1",
)
@click.option(
    "--sites",
    type=click.Path(exists=True, dir_okay=False),
    help="Sites CSV (required with a network file)",
)
@click.option(
    "--theta",
    callback=parse_theta,
    default="0,0",
    show_default=True,
    help="AR coefficients, theta_1 first",
)
@click.option(
    "--steps", type=int, default=5000, show_default=True, help="Time steps after burn-in"
)
@click.option("--seed", type=int, default=0, show_default=True, help="Random seed")
@click.option("--subintervals", type=int, default=None, help="Sub-intervals per segment")
@click.option("--extension", type=float, default=None, help="Headwater extension factor")
@click.option("--shift-at", type=int, default=None, help="Step at which the noise scale changes")
@click.option(
    "--shift-scale",
    type=float,
    default=1.0,
    show_default=True,
    help="Noise multiplier from --shift-at on",
)
@out_option
def simulate_cmd(
    ctx, network, sites, theta, steps, seed, subintervals, extension, shift_at, shift_scale, out
):
    """Simulate tail-up observations with an AR mean on a stream network."""
    config: Config = ctx.obj["config"]
    out_dir = resolve_out_dir(config, out)

    try:
        net = resolve_network(network, sites)
        report = validate_additivity(net)
        if not report.passed:
            click.echo(
                f"⚠️  {len(report.violations)} confluence(s) violate weight additivity", err=True
            )

        sim = simulation_config(config, theta, steps, seed)
        overrides = {
            "subintervals_per_segment": subintervals,
            "headwater_extension_factor": extension,
            "shift_at": shift_at,
        }
        sim = replace(
            sim, shift_scale=shift_scale, **{k: v for k, v in overrides.items() if v is not None}
        )
        output = simulate(net, sim)

        paths = write_outputs(output, out_dir)
        write_network_csv(out_dir / "network.csv", net)
        write_sites_csv(out_dir / "sites.csv", net)
        manifest = RunManifest(
            command="simulate",
            options=dict(ctx.params),
            config_file=ctx.obj["config_path"],
            config=sim,
            inputs={"network": network, **({"sites": sites} if sites else {})},
            outputs=[str(p) for p in paths.values()]
            + [str(out_dir / "network.csv"), str(out_dir / "sites.csv")],
            seeds=[seed],
        )
        manifest.write(out_dir)
    except StaciError as e:
        fail(e)

    click.echo(
        f"✓ Simulated {output.observations.shape[0]} steps over {net.n_sites} sites → {out_dir}"
    )


@cli.command()
@click.pass_context
@data_options
@click.option(
    "--method",
    type=click.Choice([m.value for m in Method]),
    default=Method.STACI.value,
    show_default=True,
    help="Region construction",
)
@click.option(
    "--lambda", "lam", type=float, default=None, help="Blend weight of the topology precision"
)
@click.option("--gamma", type=float, default=None, help="ACI step size (0 disables adaptation)")
@click.option(
    "--mode",
    type=click.Choice([m.value for m in Mode]),
    default=None,
    help="Covariance refresh mode",
)
@click.option(
    "--tailup-params",
    type=click.Path(exists=True, dir_okay=False),
    default=None,
    help="Fixed tail-up parameters (a tailup_params_seed<N>.txt from an earlier run)",
)
def run(
    ctx,
    data,
    theta,
    steps,
    predictions,
    network,
    sites,
    true_cov,
    alpha,
    ncal,
    ntest,
    train_fraction,
    refit_every,
    seeds,
    jobs,
    out,
    method,
    lam,
    gamma,
    mode,
    tailup_params,
):
    """Calibrate prediction regions and report coverage and efficiency.

    --alpha is the miscoverage level: 0.05 targets 95% coverage.
    """
    config: Config = ctx.obj["config"]
    method = Method(method)
    out_dir = resolve_out_dir(config, out)
    cfg = experiment_config(
        config,
        alpha=alpha,
        n_cal=ncal,
        n_test=ntest,
        train_fraction=train_fraction,
        refit_every=refit_every,
        seeds=seeds,
        lam=lam,
        gamma=gamma,
        mode=Mode(mode) if mode else None,
    )

    try:
        net = resolve_network(network, sites)
        source, inputs = load_source(
            config, net, data, theta, steps, predictions, true_cov, [method]
        )
        if tailup_params:
            if method.effective_lambda(cfg.lam) == 0:
                logger.warning(f"--tailup-params is ignored by {method.value} at lambda=0")
            cfg = replace(cfg, tailup_params=TailUpParams.load(tailup_params))
            inputs["tailup_params"] = str(tailup_params)
        report = run_experiment(source, net, cfg, method, jobs=jobs)
        written = write_results(out_dir, method, cfg, report)
        RunManifest(
            command="run",
            options=dict(ctx.params),
            config_file=ctx.obj["config_path"],
            config=cfg,
            inputs={"network": network, **inputs},
            outputs=[str(p) for p in written],
            seeds=list(cfg.seeds),
        ).write(out_dir)
    except StaciError as e:
        fail(e)

    click.echo(
        f"{method.value}: coverage {report.coverage:.4f}, efficiency {report.efficiency:.4f}"
    )
    if report.fullspace_excluded:
        click.echo(f"  {report.n_fullspace} full-space region(s) excluded from efficiency")
    click.echo(f"✓ Results written to {out_dir}")


@cli.command()
def version():
    """Show the staci version"""
    click.echo(f"staci {__version__}")


register_sweep(cli)


if __name__ == "__main__":
    cli()
