"""Command-line entry point.

Subcommands:

  inspect     row/subject counts and per-column statistics of a dataset
  select      run the forest-guided feature elimination, write its report
  train-eval  run the full cross-validated experiment, write all reports
  gradcheck   verify analytic gradients against finite differences

Configuration comes from a JSON file (--config), overridden by repeatable
--set KEY=VALUE flags, overridden in turn by the dedicated --seed/--out/
--jobs flags. The UPDRSPRED_DATASET environment variable supplies the
default dataset path. Exit codes: 0 success, 1 runtime or numeric failure,
2 usage, configuration, or schema failure.
"""

from __future__ import annotations

import os
import sys
import time
from pathlib import Path

import click
import numpy as np

from .config import ENV_DATASET, RunConfig, config_from_dict, load_config, parse_override
from .dataset import REQUIRED_COLUMNS, load_csv
from .errors import RuntimeFault, UsageFault
from .evaluate import render_csv, render_mse_table, render_r2_table, run_experiment
from .forest import ForestParams
from .linalg import RandomSource
from .nn import grad_check, random_gradcheck_model
from .rfe import rfe_select

GRADCHECK_MODELS = 20
GRADCHECK_TOLERANCE = 1e-5


def _fail(message: str, code: int):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _guarded(fn):
    try:
        fn()
    except UsageFault as exc:
        _fail(str(exc), 2)
    except RuntimeFault as exc:
        _fail(str(exc), 1)
    except OSError as exc:
        _fail(str(exc), 2)


@click.group()
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="JSON configuration file.")
@click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE",
              help="Override one config key (repeatable).")
@click.option("--seed", type=int, default=None, help="Random seed override.")
@click.option("--out", "out_dir", type=click.Path(), default=None,
              help="Output directory override.")
@click.option("--jobs", type=int, default=None, help="Worker process cap.")
@click.pass_context
def main(ctx, config_path, overrides, seed, out_dir, jobs):
    ctx.ensure_object(dict)
    ctx.obj.update(config_path=config_path, overrides=overrides, seed=seed,
                   out_dir=out_dir, jobs=jobs)


def _build_config(ctx) -> RunConfig:
    opts = ctx.obj
    if opts["config_path"]:
        config = load_config(opts["config_path"])
        doc = config.to_dict()
    else:
        doc = RunConfig().to_dict()
    for text in opts["overrides"]:
        key, value = parse_override(text)
        doc[key] = value
    if opts["seed"] is not None:
        doc["seed"] = opts["seed"]
    if opts["out_dir"] is not None:
        doc["out_dir"] = opts["out_dir"]
    if opts["jobs"] is not None:
        doc["jobs"] = opts["jobs"]
    if not doc.get("dataset"):
        doc["dataset"] = os.environ.get(ENV_DATASET, "")
    config = config_from_dict(doc)
    if not config.dataset:
        raise UsageFault(
            f"no dataset given: set the dataset config key or {ENV_DATASET}"
        )
    return config


def _make_run_dir(config: RunConfig) -> Path:
    stamp = time.strftime("%Y%m%d-%H%M%S")
    base = Path(config.out_dir)
    base.mkdir(parents=True, exist_ok=True)
    candidate = base / f"run-{stamp}-seed{config.seed}"
    suffix = 1
    while candidate.exists():
        candidate = base / f"run-{stamp}-seed{config.seed}-{suffix}"
        suffix += 1
    candidate.mkdir()
    return candidate


@main.command()
@click.argument("dataset", type=click.Path())
def inspect(dataset):
    """Print row and subject counts plus per-column statistics."""

    def body():
        ds = load_csv(dataset)
        click.echo(f"{len(ds)} records, {ds.n_subjects} subjects")
        header = f"{'column':<14} {'mean':>12} {'stddev':>12} {'min':>12} {'max':>12}"
        click.echo(header)
        for name in REQUIRED_COLUMNS[1:]:
            col = ds.column(name)
            click.echo(
                f"{name:<14} {col.mean():>12.5f} {col.std():>12.5f} "
                f"{col.min():>12.5f} {col.max():>12.5f}"
            )

    _guarded(body)


@main.command()
@click.pass_context
def select(ctx):
    """Run recursive feature elimination and write its report."""

    def body():
        config = _build_config(ctx)
        from .dataset import apply_standardizer, build_design, fit_standardizer

        ds = load_csv(config.dataset)
        X, y = build_design(ds, config.target, config.regressors)
        if config.rfe_on_standardized:
            stats = fit_standardizer(X, column_names=config.regressors)
            X = apply_standardizer(stats, X)
        params = ForestParams(
            n_trees=config.forest_n_trees,
            max_depth=config.forest_max_depth,
            min_samples_leaf=config.forest_min_samples_leaf,
            features_per_split=config.forest_features_per_split,
            bootstrap=config.forest_bootstrap,
        )
        protected = [config.regressors.index(n) for n in config.protected_regressors]
        result = rfe_select(X, y, config.rfe_k, params,
                            RandomSource(config.seed), protected=protected)
        run_dir = _make_run_dir(config)
        names = list(config.regressors)
        (run_dir / "rfe_report.txt").write_text(result.to_report(names))
        (run_dir / "rfe_report.json").write_text(result.to_json(names) + "\n")
        click.echo(f"run directory: {run_dir}")
        click.echo(result.to_report(names), nl=False)

    _guarded(body)


@main.command("train-eval")
@click.pass_context
def train_eval(ctx):
    """Run the cross-validated experiment and write all report files."""

    def body():
        config = _build_config(ctx)
        report = run_experiment(config)
        run_dir = _make_run_dir(config)
        (run_dir / "report.json").write_text(report.to_structured() + "\n")
        (run_dir / "report.csv").write_text(render_csv(report))
        mse_table = render_mse_table(report)
        r2_table = render_r2_table(report)
        (run_dir / "mse_table.txt").write_text(mse_table)
        (run_dir / "r2_table.txt").write_text(r2_table)
        click.echo(f"run directory: {run_dir}")
        click.echo(mse_table, nl=False)
        click.echo("")
        click.echo(r2_table, nl=False)

    _guarded(body)


@main.command()
def gradcheck():
    """Check analytic gradients against central finite differences."""

    def body():
        worst_overall = 0.0
        block_worst: dict[str, float] = {}
        failures = []
        for seed in range(GRADCHECK_MODELS):
            params, X, y = random_gradcheck_model(seed)
            worst, per_block = grad_check(params, X, y, eps=1e-4)
            worst_overall = max(worst_overall, worst)
            for name, err in per_block.items():
                block_worst[name] = max(block_worst.get(name, 0.0), err)
            status = "ok" if worst < GRADCHECK_TOLERANCE else "FAIL"
            click.echo(f"model {seed:2d}: max relative error {worst:.3e} {status}")
            if worst >= GRADCHECK_TOLERANCE:
                offenders = [n for n, e in per_block.items() if e >= GRADCHECK_TOLERANCE]
                failures.append((seed, offenders))
        click.echo("worst error per parameter block:")
        for name in sorted(block_worst, key=block_worst.get, reverse=True):
            click.echo(f"  {name:<16} {block_worst[name]:.3e}")
        click.echo(f"max relative error over {GRADCHECK_MODELS} models: "
                   f"{worst_overall:.3e}")
        if failures:
            for seed, offenders in failures:
                click.echo(f"model {seed} failed in blocks: {', '.join(offenders)}",
                           err=True)
            sys.exit(1)
        assert np.isfinite(worst_overall)

    _guarded(body)


if __name__ == "__main__":
    main()
