"""Command-line entry point: ``ames train | cross-validate | synth | inspect``."""

from __future__ import annotations

import functools
import logging
import sys
import traceback
from pathlib import Path

import click

from . import data as data_io
from .config import RunConfig, load_config
from .errors import AmesError, ConfigError, ContractError, DivergenceError, ParseError
from .outputs import read_run, write_outputs
from .trainer import run_cross_validation

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_DIVERGENCE = 4


def _origin(exc: BaseException) -> str:
    tb = exc.__traceback__
    module = "ames"
    while tb is not None:
        name = tb.tb_frame.f_globals.get("__name__", "")
        if name.startswith("ames"):
            module = name
        tb = tb.tb_next
    return module


def _fail(exc: BaseException, code: int):
    click.echo(f"error [{_origin(exc)}]: {exc}", err=True)
    sys.exit(code)


def handle_errors(fn):
    """Map library exceptions to the documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            _fail(exc, EXIT_USAGE)
        except DivergenceError as exc:
            _fail(exc, EXIT_DIVERGENCE)
        except (ParseError, FileNotFoundError, UnicodeDecodeError) as exc:
            _fail(exc, EXIT_DATA)
        except AmesError as exc:
            logging.getLogger(__name__).debug("".join(traceback.format_exception(exc)))
            _fail(exc, 1)

    return wrapper


def load_dataset(config: RunConfig) -> data_io.Dataset:
    if config.format == "citation":
        if not config.content or not config.cites:
            raise ConfigError("citation data needs both data.content and data.cites")
        normalize = True if config.normalize is None else config.normalize
        ds = data_io.load_citation(config.resolve(config.content), config.resolve(config.cites), normalize=normalize)
    else:
        if not config.nodes:
            raise ConfigError("tabular data needs data.nodes")
        ds = data_io.load_tabular(
            config.resolve(config.nodes),
            config.resolve(config.edges),
            kind=config.kind,
            standardize_features=config.standardize,
        )
        if config.normalize:
            ds = data_io.Dataset(
                ds.name, data_io.row_normalize(ds.features), ds.labels, ds.num_classes, ds.edges, ds.kind, ds.meta
            )
    if config.kind is not None and config.kind != ds.kind:
        ds = data_io.Dataset(ds.name, ds.features, ds.labels, ds.num_classes, ds.edges, config.kind, ds.meta)
    return ds


def _prepare(config_path, seed, out, epochs) -> tuple[RunConfig, data_io.Dataset, Path]:
    config = load_config(config_path)
    changes = {}
    if seed is not None:
        changes["seed"] = seed
    if epochs is not None:
        changes["epochs"] = epochs
    if out is not None:
        changes["out"] = str(Path(out).resolve())
    if changes:
        config = config.replace(**changes)
        config.validate()
    dataset = load_dataset(config)
    if config.kind is None:
        config = config.replace(kind=dataset.kind)
    return config, dataset, config.resolve(config.out)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log per-fold progress.")
def main(verbose: bool) -> None:
    """Latent graph inference over several model spaces."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(message)s")


_run_options = [
    click.option("--config", "config_path", required=True, type=click.Path(), help="INI run configuration."),
    click.option("--seed", type=int, default=None, help="Override train.seed."),
    click.option("--out", type=click.Path(), default=None, help="Override output.out."),
    click.option("--epochs", type=click.IntRange(min=1), default=None, help="Override train.epochs."),
]


def run_options(fn):
    for opt in reversed(_run_options):
        fn = opt(fn)
    return fn


@main.command()
@run_options
@handle_errors
def train(config_path, seed, out, epochs):
    """Train on fold 0 and write run files."""
    config, dataset, out_dir = _prepare(config_path, seed, out, epochs)
    summary = run_cross_validation(config, dataset, fold_ids=[0])
    write_outputs(out_dir, summary, config, dataset.name)
    click.echo(f"fold 0 test accuracy {100 * summary.folds[0].final_acc:.2f}")


@main.command("cross-validate")
@run_options
@click.option("--parallel-folds", type=click.IntRange(min=1), default=1, help="Worker processes for folds.")
@handle_errors
def cross_validate(config_path, seed, out, epochs, parallel_folds):
    """Run every fold and print ``mean ± stdev`` test accuracy."""
    config, dataset, out_dir = _prepare(config_path, seed, out, epochs)
    summary = run_cross_validation(config, dataset, parallel_folds=parallel_folds)
    write_outputs(out_dir, summary, config, dataset.name)
    click.echo(summary.formatted())


@main.command()
@click.option("--kind", type=click.Choice(["tree", "sphere"]), required=True)
@click.option("--out", type=click.Path(), required=True, help="Destination nodes CSV.")
@click.option("--seed", type=int, default=0)
@click.option("--feature-dim", type=int, default=None, help="Default 16 for tree, 3 for sphere.")
@click.option("--levels", type=int, default=6, help="tree: depth levels.")
@click.option("--branching", type=int, default=3, help="tree: children per node.")
@click.option("--noise", type=float, default=1.0, help="tree: feature noise sigma.")
@click.option("--step-scale", type=float, default=1.0, help="tree: prototype step sigma.")
@click.option("--num-classes", type=int, default=4, help="sphere: communities.")
@click.option("--per-class", type=int, default=50, help="sphere: nodes per community.")
@click.option("--kappa", type=float, default=50.0, help="sphere: concentration.")
@handle_errors
def synth(kind, out, seed, feature_dim, levels, branching, noise, step_scale, num_classes, per_class, kappa):
    """Write a synthetic point-cloud dataset as a nodes CSV."""
    try:
        if kind == "tree":
            if noise < 0 or step_scale < 0:
                raise ContractError("noise and step-scale must be non-negative")
            ds = data_io.synth_tree(levels, branching, feature_dim or 16, noise, seed, step_scale)
        else:
            if num_classes < 1 or per_class < 1:
                raise ContractError("num-classes and per-class must be positive")
            ds = data_io.synth_sphere_communities(num_classes, per_class, feature_dim or 3, kappa, seed)
    except ContractError as exc:
        raise click.UsageError(str(exc)) from None
    path = Path(out)
    path.parent.mkdir(parents=True, exist_ok=True)
    data_io.write_tabular(ds, path)
    click.echo(f"wrote {ds.num_nodes} nodes to {path}")


@main.command()
@click.option("--run", "run_dir", required=True, type=click.Path(), help="Directory written by train/cross-validate.")
@handle_errors
def inspect(run_dir):
    """Print final per-space attention weights and the attribution ranking."""
    report = read_run(run_dir)
    click.echo("alpha " + " ".join(f"{s}={a:.4f}" for s, a in zip(report.labels, report.alpha)))
    for rank, (label, value) in enumerate(report.ranking(), 1):
        click.echo(f"{rank}. {label} fro={value:.6g}")


if __name__ == "__main__":
    main()
