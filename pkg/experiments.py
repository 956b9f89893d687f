"""
Experiment configs, the runner behind every CLI subcommand, and the report
emitters (CSV per figure, summary JSON, optional workbook).
"""
from __future__ import annotations

import configparser
import json
import logging
import math
import os
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd
from openpyxl import Workbook
from openpyxl.styles import Font
from scipy import stats as sps
from tqdm import tqdm

import config
from coupling import aggregate_coupled, hamming_bound_theory, hamming_moment_bound, run_coupled
from errors import HogwildError, SchemaError
from hogwild import DELAY_FAMILIES, DelayModel, delay_probe, run_hogwild_batch
from model import MODEL_TYPES, IsingModel, build_model, dobrushin_alpha, exact_distribution, load_model_file
from sampler import RngStream, mixing_budget_experiment, mixing_budget_theory, sample_batch_array, sample_thinned
from stats import (
    MultilinearFunction,
    bound_bias_degree_d,
    bound_lipschitz_bias,
    bound_concentration_tail,
    bound_variance,
    compare_estimates,
    complete_bilinear,
    empirical_variance,
    estimate_mean,
    evaluate_many,
    exact_report,
    linear_sum,
    lipschitz_constant,
    load_function_file,
    tv_to_exact,
)

logger = logging.getLogger(__name__)

KINDS = ('stationarity', 'restarts', 'delay-probe', 'tau-vs-threads', 'coupled-hamming',
         'bias', 'variance', 'concentration')
HARDWARE_KINDS = ('delay-probe', 'tau-vs-threads')
ENGINES = ('sequential', 'coupled')
FUNCTIONS = ('complete_bilinear', 'linear_sum', 'file')
DEFAULT_THREADS = (2, 4, 8, 16)

# Columns of the per-figure CSVs; rows are sorted by the leading key columns
PLOT_COLUMNS = {
    'stationarity': ['n', 'engine', 'burn_in', 'thin', 'samples', 'tv', 'tolerance'],
    'restarts': ['n', 'alpha', 'eps', 'steps', 'runs', 'tv', 'tolerance'],
    'delay-probe': ['n', 'threads', 'mean_delay', 'reads'],
    'tau-vs-threads': ['threads', 'mean_delay', 'delay_spread', 'models', 'reads'],
    'coupled-hamming': ['n', 'steps', 'seeds', 'mean_hamming', 'mean_hamming_stderr', 'moment2',
                        'bound_ln', 'bound_log2', 'moment2_envelope'],
    'bias': ['n', 'seq_mean', 'seq_stderr', 'hog_mean', 'hog_stderr', 'bias', 'errbar',
             'errbar_low', 'errbar_high', 'bias_over_stdev', 'bias_bound', 'lipschitz_bound',
             'bound_improvement', 'exact_mean'],
    'variance': ['n', 'runs', 'variance', 'variance_scaled', 'bound'],
    'concentration': ['n', 'r', 'samples', 'tail', 'bound'],
}
SORT_KEYS = {'delay-probe': ['n', 'threads'], 'tau-vs-threads': ['threads'], 'concentration': ['n', 'r']}


# ================== Config ==================

@dataclass(frozen=True)
class ModelSpec:
    type: str = 'curie_weiss'
    sizes: tuple[int, ...] = (100,)
    alpha: float = config.DEFAULT_ALPHA
    path: str | None = None


@dataclass(frozen=True)
class DelaySpec:
    """family geometric: param is the mean tau before truncation; constant: c; uniform_int: m."""
    family: str = 'geometric'
    param: float = config.DEFAULT_TAU
    cap: int | None = None
    shared: bool = False

    def build(self) -> DelayModel:
        if self.family == 'geometric':
            return DelayModel.geometric_with_mean(self.param, self.cap, self.shared)
        if self.family == 'constant':
            return DelayModel.constant(int(self.param), self.shared)
        return DelayModel.uniform_int(int(self.param), self.shared)

    @property
    def declared_tau(self) -> float:
        return self.param if self.family == 'geometric' else self.build().mean


@dataclass(frozen=True)
class FunctionSpec:
    name: str = 'complete_bilinear'
    path: str | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    seed: int
    model: ModelSpec = field(default_factory=ModelSpec)
    delay: DelaySpec = field(default_factory=DelaySpec)
    function: FunctionSpec = field(default_factory=FunctionSpec)
    runs: int = config.DEFAULT_RUNS
    burn_in: str = 'experiment'
    burn_in_multiplier: int = 1
    eps: float = 0.01
    engine: str = 'sequential'
    thin: int = 0
    threads: tuple[int, ...] = ()
    min_reads: int = config.MIN_LOGGED_READS
    probe_writes: int = config.PROBE_WRITES
    max_moment: int = 2
    seeds: int = 50
    points: tuple[float, ...] = ()
    constant: float = 1.0
    tolerance: float | None = None
    output: str = config.OUT_DIR

    def validate(self) -> 'ExperimentConfig':
        def check(ok, path, message):
            if not ok:
                raise SchemaError(path, message)

        check(self.kind in KINDS, 'experiment.kind', f'must be one of {", ".join(KINDS)}')
        check(self.runs >= 1, 'experiment.runs', 'must be >= 1')
        check(self.burn_in in ('theory', 'experiment') or self.burn_in.isdigit(),
              'experiment.burn_in', "must be 'theory', 'experiment' or a step count")
        check(self.burn_in_multiplier >= 1, 'experiment.burn_in_multiplier', 'must be >= 1')
        check(0 < self.eps < 1, 'experiment.eps', 'must lie in (0, 1)')
        check(self.engine in ENGINES, 'experiment.engine', f'must be one of {", ".join(ENGINES)}')
        check(self.thin >= 0, 'experiment.thin', 'must be >= 0')
        check(all(t >= 1 for t in self.threads), 'experiment.threads', 'thread counts must be >= 1')
        check(self.min_reads >= 1, 'experiment.min_reads', 'must be >= 1')
        check(self.probe_writes >= max(self.threads, default=1), 'experiment.probe_writes',
              'must be >= every thread count')
        check(self.max_moment >= 1, 'experiment.max_moment', 'must be >= 1')
        check(self.seeds >= 1, 'experiment.seeds', 'must be >= 1')
        check(all(r >= 0 for r in self.points), 'experiment.points', 'tail points must be >= 0')
        check(self.tolerance is None or self.tolerance >= 0, 'experiment.tolerance', 'must be >= 0')
        check(self.model.type in MODEL_TYPES + ('file',), 'model.type',
              f'must be one of {", ".join(MODEL_TYPES[:2])} or file')
        if self.model.type == 'file':
            check(bool(self.model.path), 'model.path', 'required when model.type = file')
        else:
            check(bool(self.model.sizes) and all(n >= 2 for n in self.model.sizes), 'model.sizes',
                  'needs at least one node count >= 2')
            check(self.model.type != 'explicit', 'model.type', 'explicit models are read with type = file')
            if self.model.type == 'torus_grid':
                check(all(math.isqrt(n) ** 2 == n for n in self.model.sizes), 'model.sizes',
                      'torus sizes must be perfect squares')
        check(0 < self.model.alpha < 1, 'model.alpha', 'must lie in (0, 1)')
        check(self.delay.family in DELAY_FAMILIES, 'delay.family', f'must be one of {", ".join(DELAY_FAMILIES)}')
        check(self.delay.param >= 0, 'delay.param', 'must be >= 0')
        try:
            self.delay.build()
        except HogwildError as e:
            raise SchemaError('delay', str(e)) from None
        check(self.function.name in FUNCTIONS, 'function.name', f'must be one of {", ".join(FUNCTIONS)}')
        if self.function.name == 'file':
            check(bool(self.function.path), 'function.path', 'required when function.name = file')
        return self


_SECTIONS = {
    'experiment': ('runs', 'burn_in', 'burn_in_multiplier', 'eps', 'engine', 'thin', 'threads', 'min_reads',
                   'probe_writes', 'max_moment', 'seeds', 'points', 'constant', 'tolerance', 'output'),
    'model': ('type', 'sizes', 'alpha', 'path'),
    'delay': ('family', 'param', 'cap', 'shared'),
    'function': ('name', 'path'),
}


def _int_tuple(text):
    return tuple(int(v) for v in text.split(',') if v.strip())


def _float_tuple(text):
    return tuple(float(v) for v in text.split(',') if v.strip())


def _boolean(text):
    lowered = text.strip().lower()
    if lowered in ('1', 'true', 'yes', 'on'):
        return True
    if lowered in ('0', 'false', 'no', 'off'):
        return False
    raise ValueError(text)


_CASTS = {
    'experiment.runs': int, 'experiment.burn_in': str.strip, 'experiment.burn_in_multiplier': int,
    'experiment.eps': float, 'experiment.engine': str.strip, 'experiment.thin': int,
    'experiment.threads': _int_tuple, 'experiment.min_reads': int, 'experiment.probe_writes': int,
    'experiment.max_moment': int, 'experiment.seeds': int, 'experiment.points': _float_tuple,
    'experiment.constant': float, 'experiment.tolerance': float, 'experiment.output': str.strip,
    'model.type': str.strip, 'model.sizes': _int_tuple, 'model.alpha': float, 'model.path': str.strip,
    'delay.family': str.strip, 'delay.param': float, 'delay.cap': int, 'delay.shared': _boolean,
    'function.name': str.strip, 'function.path': str.strip,
}


def parse_config(text: str, source: str = '<string>', kind: str | None = None,
                 seed: int | None = None) -> ExperimentConfig:
    """Parse an INI experiment config; `kind` and `seed` fill in (or override) the file's values."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as e:
        raise SchemaError(source, str(e).splitlines()[0]) from None

    for section in parser.sections():
        if section not in _SECTIONS:
            raise SchemaError(section, 'unknown section')
    values = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            path = f'{section}.{key}'
            if key in ('kind', 'seed') and section == 'experiment':
                continue
            if path not in _CASTS:
                raise SchemaError(path, 'unknown key')
            try:
                values[path] = _CASTS[path](raw)
            except ValueError:
                raise SchemaError(path, f'bad value {raw!r}') from None

    exp = parser['experiment'] if parser.has_section('experiment') else {}
    file_kind = exp.get('kind', '').strip() or None
    if kind is not None and file_kind is not None and not _kind_matches(kind, file_kind):
        raise SchemaError('experiment.kind', f'config is a {file_kind!r} experiment, not {kind!r}')
    final_kind = file_kind or kind
    if final_kind is None:
        raise SchemaError('experiment.kind', 'missing')
    if seed is None:
        raw_seed = exp.get('seed', '').strip()
        if not raw_seed:
            raise SchemaError('experiment.seed', 'a seed is required (config or --seed)')
        try:
            seed = int(raw_seed)
        except ValueError:
            raise SchemaError('experiment.seed', f'bad value {raw_seed!r}') from None
    if seed < 0 or seed >= 2 ** 64:
        raise SchemaError('experiment.seed', 'must be an unsigned 64-bit integer')

    def section_kwargs(name):
        return {k.split('.', 1)[1]: v for k, v in values.items() if k.startswith(name + '.')}

    return ExperimentConfig(
        kind=final_kind,
        seed=seed,
        model=ModelSpec(**section_kwargs('model')),
        delay=DelaySpec(**section_kwargs('delay')),
        function=FunctionSpec(**section_kwargs('function')),
        **section_kwargs('experiment'),
    ).validate()


def _kind_matches(command_kind: str, file_kind: str) -> bool:
    if command_kind == 'stationarity':
        return file_kind in ('stationarity', 'restarts')
    return command_kind == file_kind


def _format(value) -> str:
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, tuple):
        return ', '.join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_config(cfg: ExperimentConfig) -> str:
    """INI text that parse_config reads back to an equal config."""
    parser = configparser.ConfigParser(interpolation=None)
    parser['experiment'] = {'kind': cfg.kind, 'seed': str(cfg.seed)}
    nested = {'model': cfg.model, 'delay': cfg.delay, 'function': cfg.function}
    for section, keys in _SECTIONS.items():
        if section not in parser:
            parser[section] = {}
        owner = nested.get(section, cfg)
        for key in keys:
            value = getattr(owner, key)
            if value is None or value == ():
                continue
            parser[section][key] = _format(value)
    lines = []
    for section in parser.sections():
        lines.append(f'[{section}]')
        lines.extend(f'{key} = {value}' for key, value in parser[section].items())
        lines.append('')
    return '\n'.join(lines)


def load_config(path: str, kind: str | None = None, seed: int | None = None) -> ExperimentConfig:
    with open(path, encoding='utf-8') as fh:
        return parse_config(fh.read(), source=path, kind=kind, seed=seed)


# ================== Reports ==================

@dataclass(frozen=True)
class Flag:
    """One pass/fail check: value compared with threshold by `formula` (tolerance already applied)."""
    name: str
    passed: bool
    value: float
    threshold: float
    formula: str
    tolerance: float


@dataclass
class RunReport:
    kind: str
    rows: list[dict] = field(default_factory=list)
    flags: list[Flag] = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)
    tables: dict[str, pd.DataFrame] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(f.passed for f in self.flags)

    def check(self, name, value, threshold, formula, tolerance=0.0, at_least=False):
        value, threshold = float(value), float(threshold)
        ok = value >= threshold if at_least else value <= threshold
        self.flags.append(Flag(name, bool(ok), value, threshold, formula, float(tolerance)))
        level = logging.INFO if ok else logging.WARNING
        logger.log(level, '%s: %s (%.6g vs %.6g)', name, 'pass' if ok else 'FAIL', value, threshold)

    def frame(self) -> pd.DataFrame:
        columns = PLOT_COLUMNS[self.kind]
        df = pd.DataFrame(self.rows, columns=columns)
        keys = SORT_KEYS.get(self.kind, ['n'])
        if len(df):
            df = df.sort_values(keys, kind='mergesort').reset_index(drop=True)
        return df


def emit_plotdata(report: RunReport, path: str) -> list[str]:
    """Write `<kind>.csv` plus any extra tables into directory `path`; returns written files."""
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as e:
        raise OSError(f'cannot create output directory {path}: {e}') from e
    written = []
    outputs = {report.kind: report.frame(), **report.tables}
    for name, df in outputs.items():
        target = os.path.join(path, f'{name}.csv')
        try:
            df.to_csv(target, index=False)
        except OSError as e:
            raise OSError(f'cannot write {target}: {e}') from e
        written.append(target)
    return written


def write_summary(report: RunReport, path: str) -> str:
    target = os.path.join(path, 'summary.json')
    payload = {
        'kind': report.kind,
        'passed': report.passed,
        'summary': report.summary,
        'flags': [asdict(f) for f in report.flags],
        'metadata': report.metadata,
    }
    with open(target, 'w', encoding='utf-8') as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=float)
    return target


def get_safe_sheet_name(wb, name):
    # invalid chars for Excel sheet names: : \ / ? * [ ]
    base = re.sub(r'[:\\/?*\[\]]', '-', name).strip()[:31] or 'Sheet'
    candidate = base
    i = 1
    while candidate in wb.sheetnames:
        suffix = f'_{i}'
        candidate = base[:31 - len(suffix)].rstrip() + suffix
        i += 1
    return candidate


def write_workbook(report: RunReport, path: str) -> str:
    """One styled sheet per emitted table plus a flags sheet."""
    target = os.path.join(path, f'{report.kind}.xlsx')
    wb = Workbook()
    wb.remove(wb.active)
    sheets = {report.kind: report.frame(), **report.tables,
              'flags': pd.DataFrame([asdict(f) for f in report.flags],
                                    columns=['name', 'passed', 'value', 'threshold', 'formula', 'tolerance'])}
    bold = Font(bold=True)
    for name, df in sheets.items():
        ws = wb.create_sheet(get_safe_sheet_name(wb, name))
        ws.append(list(df.columns))
        for cell in ws[1]:
            cell.font = bold
        for row in df.itertuples(index=False):
            ws.append([v.item() if isinstance(v, np.generic) else v for v in row])
    wb.save(target)
    return target


# ================== Pipelines ==================

def build_models(cfg: ExperimentConfig) -> list[IsingModel]:
    if cfg.model.type == 'file':
        return [load_model_file(cfg.model.path)]
    return [build_model(cfg.model.type, n, cfg.model.alpha) for n in cfg.model.sizes]


def build_function(cfg: ExperimentConfig, n: int) -> MultilinearFunction:
    if cfg.function.name == 'complete_bilinear':
        return complete_bilinear(n)
    if cfg.function.name == 'linear_sum':
        return linear_sum(n)
    return load_function_file(cfg.function.path, n=n)


def burn_in_steps(cfg: ExperimentConfig, model: IsingModel) -> int:
    if cfg.burn_in == 'experiment':
        base = mixing_budget_experiment(model.n)
    elif cfg.burn_in == 'theory':
        base = mixing_budget_theory(model.n, dobrushin_alpha(model), cfg.eps)
    else:
        base = int(cfg.burn_in)
    return base * cfg.burn_in_multiplier


def _progress(items, desc):
    return tqdm(items, desc=desc, disable=None, leave=False)


def _run_stationarity(cfg, report, ctx):
    for index, model in enumerate(_progress(build_models(cfg), 'stationarity')):
        dist = exact_distribution(model)
        burn = burn_in_steps(cfg, model)
        thin = cfg.thin or model.n
        rng = ctx.root.child(index)
        if cfg.engine == 'coupled':
            steps = burn + thin * ctx.runs
            run = run_coupled(model, steps, cfg.delay.build(), 1, rng, burn_in=burn, thin=thin)
            samples = run.x_samples
        else:
            samples = sample_thinned(model, burn, thin, ctx.runs, rng)
        tv = tv_to_exact(samples, dist)
        tol = (cfg.tolerance if cfg.tolerance is not None else 0.02) * ctx.widen
        report.rows.append({'n': model.n, 'engine': cfg.engine, 'burn_in': burn, 'thin': thin,
                            'samples': len(samples), 'tv': tv, 'tolerance': tol})
        report.check(f'tv_n{model.n}', tv, tol, 'TV(empirical, exact) <= tolerance', tol)


def _run_restarts(cfg, report, ctx):
    for index, model in enumerate(_progress(build_models(cfg), 'restarts')):
        dist = exact_distribution(model)
        alpha = dobrushin_alpha(model)
        steps = mixing_budget_theory(model.n, alpha, cfg.eps)
        samples = sample_batch_array(model, ctx.runs, steps, ctx.root.child(index), ctx.workers)
        tv = tv_to_exact(samples, dist)
        slack = (cfg.tolerance if cfg.tolerance is not None else 0.02) * ctx.widen
        report.rows.append({'n': model.n, 'alpha': alpha, 'eps': cfg.eps, 'steps': steps,
                            'runs': ctx.runs, 'tv': tv, 'tolerance': cfg.eps + slack})
        report.check(f'tv_n{model.n}', tv, cfg.eps + slack, 'TV after theory mixing budget <= eps + slack', slack)


def _hardware_threads(cfg, ctx):
    if ctx.threads is None:
        raise SchemaError('experiment.threads', 'hardware experiments need an explicit --threads')
    if cfg.kind == 'delay-probe':
        return (ctx.threads,)
    counts = tuple(t for t in (cfg.threads or DEFAULT_THREADS) if t <= ctx.threads)
    if len(counts) < 2:
        raise SchemaError('experiment.threads', f'need two thread counts <= {ctx.threads}')
    return counts


def _run_delay_probe(cfg, report, ctx):
    threads = _hardware_threads(cfg, ctx)
    models = build_models(cfg)
    seed = ctx.root.seed
    for t in threads:
        means = []
        for model in _progress(models, f'delay probe ({t} threads)'):
            tau, reads = delay_probe(model, t, seed, max(1, cfg.min_reads // ctx.scale), writes=cfg.probe_writes)
            seed += 1
            means.append(tau)
            report.rows.append({'n': model.n, 'threads': t, 'mean_delay': tau, 'reads': reads})
        if len(models) >= 2:
            sizes = [m.n for m in models]
            fit = sps.linregress(sizes, means)
            level = float(np.mean(means))
            drift = abs(fit.slope) * (max(sizes) - min(sizes))
            report.summary[f'slope_threads{t}'] = float(fit.slope)
            report.check(f'delay_flat_threads{t}', drift, 0.2 * level,
                         '|slope| * (max n - min n) <= 0.2 * mean delay', 0.2)


def _run_tau_vs_threads(cfg, report, ctx):
    threads = _hardware_threads(cfg, ctx)
    models = build_models(cfg)
    min_reads = max(1, cfg.min_reads // ctx.scale)
    seed = ctx.root.seed
    means = []
    for t in _progress(threads, 'tau vs threads'):
        taus, reads = [], 0
        for model in models:
            tau, logged = delay_probe(model, t, seed, min_reads, writes=cfg.probe_writes)
            seed += 1
            taus.append(tau)
            reads += logged
        means.append(float(np.mean(taus)))
        report.rows.append({'threads': t, 'mean_delay': means[-1], 'delay_spread': float(np.ptp(taus)),
                            'models': len(models), 'reads': reads})
    fit = sps.linregress(threads, means)
    report.summary.update({'sizes': [m.n for m in models], 'slope': float(fit.slope),
                           'intercept': float(fit.intercept), 'r_squared': float(fit.rvalue ** 2)})
    report.check('delay_linear_in_threads', fit.rvalue ** 2, 0.9, 'R^2 of mean delay vs threads >= 0.9',
                 0.9, at_least=True)


def _coupled_job(args):
    model, steps, dm, max_moment, stream = args
    return run_coupled(model, steps, dm, max_moment, stream)


def _run_coupled_hamming(cfg, report, ctx):
    dm = cfg.delay.build()
    tau = cfg.delay.declared_tau
    alpha = cfg.model.alpha
    max_moment = max(cfg.max_moment, 2)
    seeds = max(2, cfg.seeds // ctx.scale)
    sizes, second = [], []
    for index, model in enumerate(_progress(build_models(cfg), 'coupled runs')):
        steps = burn_in_steps(cfg, model)
        jobs = [(model, steps, dm, max_moment, s) for s in ctx.root.child(index).spawn(seeds)]
        if ctx.workers > 1:
            with ProcessPoolExecutor(max_workers=ctx.workers) as pool:
                runs = list(pool.map(_coupled_job, jobs))
        else:
            runs = [_coupled_job(job) for job in jobs]
        agg = aggregate_coupled(runs)
        bound = hamming_bound_theory(tau, alpha, model.n)
        report.rows.append({
            'n': model.n, 'steps': steps, 'seeds': seeds,
            'mean_hamming': agg.moments[0], 'mean_hamming_stderr': agg.stderr[0], 'moment2': agg.moments[1],
            'bound_ln': bound, 'bound_log2': hamming_bound_theory(tau, alpha, model.n, log2=True),
            'moment2_envelope': hamming_moment_bound(tau, alpha, model.n, 2, cfg.constant),
        })
        report.tables[f'hamming_trace_n{model.n}'] = runs[0].to_frame()
        report.check(f'hamming_bound_n{model.n}', agg.moments[0], bound, 'E[d_H] <= tau alpha ln(n) / (1 - alpha)')
        jensen_gap = min(r.window_moments[1] - r.window_moments[0] ** 2 for r in runs)
        report.check(f'moment_order_n{model.n}', jensen_gap, 0.0, 'min over runs of E[d_H^2] - E[d_H]^2 >= 0',
                     at_least=True)
        sizes.append(model.n)
        second.append(agg.moments[1])
    if len(sizes) >= 3 and all(m > 0 for m in second):
        check_polylog_growth(report, sizes, second)


def check_polylog_growth(report, sizes, second):
    """Flag E[d_H^2] growing faster than ln^2.5 n, judged on the 95% upper bound of the log-log slope."""
    fit = sps.linregress(np.log(np.log(sizes)), np.log(second))
    upper = fit.slope + 1.96 * fit.stderr
    report.summary['moment2_loglog_slope'] = float(fit.slope)
    report.summary['moment2_slope_upper95'] = float(upper)
    report.summary['moment2_fit_constant'] = float(np.mean(np.array(second) / np.log(sizes) ** 2))
    report.check('moment2_polylog', upper, 2.5,
                 'slope + 1.96 stderr of ln E[d_H^2] vs ln ln n <= 2.5', 1.96)


def _count_inversions(values):
    return sum(1 for a, b in zip(values, values[1:]) if b > a)


def _run_bias(cfg, report, ctx):
    dm = cfg.delay.build()
    tau = cfg.delay.declared_tau
    ratios = []
    sizes = []
    for index, model in enumerate(_progress(build_models(cfg), 'bias')):
        f = build_function(cfg, model.n)
        steps = burn_in_steps(cfg, model)
        rng = ctx.root.child(index)
        seq = estimate_mean(f, sample_batch_array(model, ctx.runs, steps, rng.child(0), ctx.workers), 'sequential')
        hog = estimate_mean(f, run_hogwild_batch(model, ctx.runs, steps, dm, rng.child(1), ctx.workers),
                            'hogwild-sim')
        res = compare_estimates(seq, hog, model.n)
        band = 3.0 * ctx.widen * res.errbar
        ratio = res.bias / seq.stdev if seq.stdev > 0 else 0.0
        bound = bound_bias_degree_d(f.a_inf, max(f.degree, 1), tau, cfg.model.alpha, model.n,
                                    cfg.constant, cfg.constant)
        lipschitz = bound_lipschitz_bias(lipschitz_constant(f), 1, tau, cfg.model.alpha, model.n, cfg.constant)
        exact = exact_report(model, f).mean if model.n <= config.ENUMERATION_LIMIT else math.nan
        report.rows.append({
            'n': model.n, 'seq_mean': seq.mean, 'seq_stderr': seq.stderr, 'hog_mean': hog.mean,
            'hog_stderr': hog.stderr, 'bias': res.bias, 'errbar': res.errbar,
            'errbar_low': seq.mean - band, 'errbar_high': seq.mean + band, 'bias_over_stdev': ratio,
            'bias_bound': bound, 'lipschitz_bound': lipschitz,
            'bound_improvement': lipschitz / bound if bound > 0 else math.inf, 'exact_mean': exact,
        })
        limit = band + 3.0 * ctx.widen * res.stderr
        report.check(f'bias_n{model.n}', res.bias, limit, '|seq - hog| <= 3 stdev/sqrt(n) + 3 combined stderr',
                     3.0 * ctx.widen)
        if f.is_odd() and model.zero_field:
            report.check(f'odd_unbiased_n{model.n}', abs(hog.mean), 3.0 * ctx.widen * hog.stderr,
                         '|hog mean| <= 3 stderr for odd f on zero-field models', 3.0 * ctx.widen)
        sizes.append(model.n)
        ratios.append(ratio)
    if len(sizes) >= 3:
        rho, _ = sps.spearmanr(sizes, ratios)
        report.summary['bias_over_stdev_spearman'] = float(rho)
        report.check('bias_over_stdev_decay', _count_inversions(ratios), 1,
                     'increases of |bias|/stdev along n <= 1', 1)


def _run_variance(cfg, report, ctx):
    dm = cfg.delay.build()
    scaled = []
    for index, model in enumerate(_progress(build_models(cfg), 'variance')):
        f = build_function(cfg, model.n)
        steps = burn_in_steps(cfg, model)
        samples = run_hogwild_batch(model, ctx.runs, steps, dm, ctx.root.child(index), ctx.workers)
        var = empirical_variance(f, samples)
        norm = var / model.n ** max(f.degree, 1)
        scaled.append(norm)
        report.rows.append({'n': model.n, 'runs': ctx.runs, 'variance': var, 'variance_scaled': norm,
                            'bound': bound_variance(f.a_inf, max(f.degree, 1), model.n, cfg.constant)})
    if len(scaled) >= 2 and min(scaled) > 0:
        spread = max(scaled) / min(scaled)
        report.summary['variance_scaled_spread'] = spread
        report.check('variance_envelope', spread, 3.0, 'max/min of Var / n^d < 3', 3.0)


def _run_concentration(cfg, report, ctx):
    points = cfg.points or (20.0, 30.0, 40.0)
    c = cfg.constant
    for index, model in enumerate(_progress(build_models(cfg), 'concentration')):
        f = build_function(cfg, model.n)
        steps = burn_in_steps(cfg, model)
        values = evaluate_many(f, sample_batch_array(model, ctx.runs, steps, ctx.root.child(index), ctx.workers))
        centre = values.mean()
        for r in points:
            tail = float(np.mean(np.abs(values - centre) > r))
            bound = bound_concentration_tail(f.a_inf, max(f.degree, 1), cfg.model.alpha, model.n, r, c)
            report.rows.append({'n': model.n, 'r': r, 'samples': len(values), 'tail': tail, 'bound': bound})
            report.check(f'tail_n{model.n}_r{r:g}', tail, bound,
                         f'P(|f - mean| > r) <= 2 exp(-(1 - alpha) r^(2/d) / ({c:g} a^(2/d) n))')


_PIPELINES = {
    'stationarity': _run_stationarity,
    'restarts': _run_restarts,
    'delay-probe': _run_delay_probe,
    'tau-vs-threads': _run_tau_vs_threads,
    'coupled-hamming': _run_coupled_hamming,
    'bias': _run_bias,
    'variance': _run_variance,
    'concentration': _run_concentration,
}


@dataclass(frozen=True)
class _Context:
    root: RngStream
    runs: int
    scale: int
    widen: float
    workers: int
    threads: int | None


def run_experiment(cfg: ExperimentConfig, scale: int = 1, threads: int | None = None,
                   workers: int | None = None) -> RunReport:
    """
    Run one configured experiment. `scale` divides run counts and widens
    statistical bands by sqrt(scale); `threads` enables hardware runs.
    """
    cfg.validate()
    if scale < 1:
        raise SchemaError('scale', 'must be >= 1')
    ctx = _Context(
        root=RngStream(cfg.seed),
        runs=max(2, cfg.runs // scale),
        scale=scale,
        widen=math.sqrt(scale),
        workers=config.WORKERS if workers is None else workers,
        threads=threads,
    )
    report = RunReport(cfg.kind)
    started = config.get_current_datetime()
    clock = time.perf_counter()
    logger.info('running %s experiment (seed %d, scale %d)', cfg.kind, cfg.seed, scale)
    _PIPELINES[cfg.kind](cfg, report, ctx)
    report.metadata = {
        'started': started.isoformat(),
        'wall_seconds': round(time.perf_counter() - clock, 3),
        'deterministic': cfg.kind not in HARDWARE_KINDS,
        'seed': cfg.seed,
        'scale': scale,
        'runs': ctx.runs,
        'config': serialize_config(cfg),
    }
    return report
