"""
HOGWILD!-Gibbs command line: python app.py <command> --help
"""
import functools
import logging
import os

import click
import numpy as np
import pandas as pd

import config
from errors import HogwildError
from experiments import emit_plotdata, load_config, run_experiment, write_summary, write_workbook
from hogwild import DelayModel, run_hogwild_batch
from model import build_model, dobrushin_alpha, load_model_file
from sampler import RngStream, mixing_budget_experiment, run_sequential, sample_batch_array, write_trajectory_csv

logger = logging.getLogger(__name__)


def handle_errors(fn):
    """Turn package errors into a message and exit code 2."""
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (HogwildError, OSError) as e:
            click.echo(f'Error: {e}', err=True)
            raise click.exceptions.Exit(2)
    return wrapper


@click.group()
@click.option('--log-level', default=config.LOG_LEVEL, show_default=True, help='Logging level')
def cli(log_level):
    """Sequential and HOGWILD! Gibbs sampling experiments."""
    logging.basicConfig(level=getattr(logging, log_level.upper(), logging.INFO),
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')


def model_options(fn):
    fn = click.option('--file', 'model_file', default=None, help='Model description file')(fn)
    fn = click.option('--alpha', default=config.DEFAULT_ALPHA, show_default=True, type=float)(fn)
    fn = click.option('--size', default=100, show_default=True, type=int, help='Node count (k*k for torus_grid)')(fn)
    fn = click.option('--type', 'model_type', default='curie_weiss', show_default=True,
                      type=click.Choice(['curie_weiss', 'torus_grid']))(fn)
    return fn


def _load_model(model_type, size, alpha, model_file):
    if model_file:
        return load_model_file(model_file)
    return build_model(model_type, size, alpha)


@cli.group()
def model():
    """Model utilities."""


@model.command('inspect')
@model_options
@click.option('--exact', is_flag=True, help='Also compute influences by enumerating neighbour states')
@handle_errors
def inspect_model(model_type, size, alpha, model_file, exact):
    """Print n, edges and the Dobrushin coefficient of a model."""
    m = _load_model(model_type, size, alpha, model_file)
    click.echo(f'model: {m.name}')
    click.echo(f'n: {m.n}')
    click.echo(f'edges: {len(m.graph.edges)}')
    click.echo(f'max degree: {m.max_degree}')
    click.echo(f'zero field: {m.zero_field}')
    click.echo(f'dobrushin alpha: {dobrushin_alpha(m):.6f}')
    if exact:
        click.echo(f'dobrushin alpha (enumerated): {dobrushin_alpha(m, exact=True):.6f}')


@cli.command()
@model_options
@click.option('--seed', required=True, type=int)
@click.option('--steps', default=None, type=int, help='Steps per run (default 10 n log2 n)')
@click.option('--count', default=1, show_default=True, type=int, help='Independent runs')
@click.option('--engine', default='sequential', show_default=True, type=click.Choice(['sequential', 'hogwild']))
@click.option('--tau', default=config.DEFAULT_TAU, show_default=True, type=float,
              help='Mean delay of the geometric delay model (hogwild engine)')
@click.option('--trajectory', is_flag=True, help='Also write the per-step trajectory of a single sequential run')
@click.option('--out', default=config.OUT_DIR, show_default=True)
@handle_errors
def sample(model_type, size, alpha, model_file, seed, steps, count, engine, tau, trajectory, out):
    """Draw final states of independent runs into samples.csv."""
    m = _load_model(model_type, size, alpha, model_file)
    steps = mixing_budget_experiment(m.n) if steps is None else steps
    rng = RngStream(seed)
    if engine == 'hogwild':
        X = run_hogwild_batch(m, count, steps, DelayModel.geometric_with_mean(tau), rng)
    else:
        X = sample_batch_array(m, count, steps, rng)
    os.makedirs(out, exist_ok=True)
    target = os.path.join(out, 'samples.csv')
    pd.DataFrame(X.astype(np.int64), columns=[f'x{i}' for i in range(m.n)]).to_csv(target, index=False)
    click.echo(f'Wrote {count} samples to {target}')
    if trajectory:
        rows = []
        run_sequential(m, steps, None, rng.child(0), trajectory=rows)
        target = os.path.join(out, 'trajectory.csv')
        write_trajectory_csv(rows, target)
        click.echo(f'Wrote {len(rows)} steps to {target}')


def experiment_options(fn):
    fn = click.option('--workbook', is_flag=True, help='Also write a styled .xlsx workbook')(fn)
    fn = click.option('--workers', default=None, type=int, help='Process pool size (default HOGWILD_WORKERS)')(fn)
    fn = click.option('--out', default=None, help='Output directory (default from config)')(fn)
    fn = click.option('--scale', default=1, show_default=True, type=click.IntRange(min=1),
                      help='Divide run counts, widen bands by sqrt(scale)')(fn)
    fn = click.option('--threads', default=None, type=click.IntRange(min=1),
                      help='Enable hardware runs with up to this many threads')(fn)
    fn = click.option('--seed', default=None, type=click.IntRange(0, 2 ** 64 - 1), help='Override the config seed')(fn)
    fn = click.option('--config', 'config_path', required=True, type=click.Path(exists=True, dir_okay=False))(fn)
    return fn


def _run(kind, config_path, seed, threads, scale, out, workers, workbook):
    cfg = load_config(config_path, kind=kind, seed=seed)
    report = run_experiment(cfg, scale=scale, threads=threads, workers=workers)
    out = out or cfg.output
    written = emit_plotdata(report, out)
    written.append(write_summary(report, out))
    if workbook:
        written.append(write_workbook(report, out))
    for path in written:
        click.echo(f'Wrote {path}')
    failed = [f for f in report.flags if not f.passed]
    click.echo(f'{len(report.flags) - len(failed)}/{len(report.flags)} checks passed')
    for f in failed:
        click.echo(f'  FAIL {f.name}: {f.value:.6g} vs {f.threshold:.6g} ({f.formula})')
    raise click.exceptions.Exit(0 if not failed else 1)


def _experiment_command(name, kind, help_text):
    @cli.command(name, help=help_text)
    @experiment_options
    @handle_errors
    def command(config_path, seed, threads, scale, out, workers, workbook):
        _run(kind, config_path, seed, threads, scale, out, workers, workbook)
    return command


_experiment_command('run', None, 'Run whatever experiment the config describes.')
_experiment_command('stationarity', 'stationarity', 'TV between sampled and exact distributions.')
_experiment_command('delay-probe', 'delay-probe', 'Mean hardware read delay per model size.')
_experiment_command('tau-vs-threads', 'tau-vs-threads', 'Mean hardware read delay per thread count.')
_experiment_command('couple', 'coupled-hamming', 'Hamming moments of coupled sequential/HOGWILD! chains.')
_experiment_command('bias', 'bias', 'Sequential vs HOGWILD! means of a polynomial statistic.')
_experiment_command('variance', 'variance', 'HOGWILD! variance of a polynomial statistic across n.')
_experiment_command('concentration', 'concentration', 'Empirical tails against the concentration bound.')


if __name__ == '__main__':
    cli()
