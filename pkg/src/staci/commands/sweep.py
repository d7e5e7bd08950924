import click

from staci.commands.options import (
    data_options,
    experiment_config,
    fail,
    load_source,
    resolve_network,
    resolve_out_dir,
)
from staci.config import Config
from staci.exceptions import StaciError, ValidationError
from staci.harness import Method
from staci.manifest import RunManifest
from staci.sweep import parse_grid, sweep
from staci.utils import write_table_csv


def register(cli):
    @cli.command(name="sweep")
    @click.pass_context
    @data_options
    @click.option(
        "--grid",
        "grid_specs",
        multiple=True,
        help="Grid axis, e.g. lambda=0:1:0.02, ncal=100,200,300, gamma=0,0.01, mode=online",
    )
    @click.option(
        "--method",
        "methods",
        type=click.Choice([m.value for m in Method]),
        multiple=True,
        default=[Method.STACI.value],
        show_default=True,
        help="Methods to compare (repeatable)",
    )
    @click.argument("extra_specs", nargs=-1)
    def sweep_cmd(
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
        grid_specs,
        methods,
        extra_specs,
    ):
        """Run every grid cell x method x seed and write a long-format results table.

        Grid specs may follow --grid or be given as extra arguments:

            staci sweep --synthetic 0.7,0.3 --grid lambda=0:1:0.02 ncal=100,200,300 gamma=0,0.01
        """
        config: Config = ctx.obj["config"]
        out_dir = resolve_out_dir(config, out)
        try:
            grid = parse_grid([*grid_specs, *extra_specs])
        except ValidationError as e:
            raise click.BadParameter(str(e), param_hint="--grid") from e

        base = experiment_config(
            config,
            alpha=alpha,
            n_cal=ncal,
            n_test=ntest,
            train_fraction=train_fraction,
            refit_every=refit_every,
            seeds=seeds,
        )
        method_list = [Method(m) for m in dict.fromkeys(methods)]
        try:
            cells = grid.cells(base)
        except ValidationError as e:
            raise click.BadParameter(str(e), param_hint="--grid") from e

        try:
            net = resolve_network(network, sites)
            source, inputs = load_source(
                config, net, data, theta, steps, predictions, true_cov, method_list
            )
            result = sweep(source, net, base, grid, method_list, jobs=jobs)

            written = [out_dir / "results.csv"]
            write_table_csv(written[0], result.table)
            if not result.ok:
                written.append(out_dir / "failures.csv")
                write_table_csv(written[1], result.failures)
            RunManifest(
                command="sweep",
                options=dict(ctx.params),
                config_file=ctx.obj["config_path"],
                config={"base": base, "grid": grid.axes, "methods": method_list},
                inputs={"network": network, **inputs},
                outputs=[str(p) for p in written],
                seeds=list(base.seeds),
            ).write(out_dir)
        except StaciError as e:
            fail(e)

        click.echo(
            f"✓ {len(result.table)} run(s) over {len(cells)} cell(s) x {len(method_list)} "
            f"method(s) written to {out_dir / 'results.csv'}"
        )
        if not result.ok:
            click.echo(f"✗ {len(result.failures)} run(s) failed; see failures.csv", err=True)
            raise SystemExit(1)
