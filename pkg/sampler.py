"""
Sequential (synchronous) Gibbs sampling with a fixed random-draw schedule.

Every step consumes exactly two uniforms from the chain's spin stream: one
for the site (floor(u * n)) and one for the threshold rule x_i = +1 iff
u < P(+1). Initial configurations come from a separate stream so the step
schedule does not depend on how the chain was started.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import pandas as pd

import config
from errors import DomainError, InvalidArgumentError
from model import Configuration, IsingModel, p_plus_from_field, site_field

logger = logging.getLogger(__name__)

# Uniforms are drawn in blocks of this many steps
DRAW_BLOCK = 256

_SPIN_CHANNEL = 0
_DELAY_CHANNEL = 1
_INIT_CHANNEL = 2


class RngStream:
    """
    Reproducible random stream identified by (seed, stream).

    Three independent generators hang off each stream: `spins` (site and
    threshold draws), `delays` (read delays) and `init` (starting states).
    `spawn` derives child streams for independent runs.
    """

    def __init__(self, seed: int, stream: int = 0, path: tuple[int, ...] = ()):
        if seed is None:
            raise InvalidArgumentError('a seed is required')
        self.seed = int(seed) % 2 ** 64
        self.stream = int(stream)
        self.path = tuple(int(p) for p in path)
        self.spins = self._generator(_SPIN_CHANNEL)
        self.delays = self._generator(_DELAY_CHANNEL)
        self.init = self._generator(_INIT_CHANNEL)

    def _generator(self, channel: int) -> np.random.Generator:
        seq = np.random.SeedSequence(self.seed, spawn_key=(self.stream, *self.path, channel))
        return np.random.default_rng(seq)

    def child(self, index: int) -> 'RngStream':
        return RngStream(self.seed, self.stream, self.path + (index,))

    def spawn(self, count: int) -> list['RngStream']:
        return [self.child(k) for k in range(count)]

    def __repr__(self):
        return f'RngStream(seed={self.seed}, stream={self.stream}, path={self.path})'


@dataclass(frozen=True)
class ChainState:
    config: Configuration
    step: int = 0


def pick_site(u: float, n: int) -> int:
    # u * n can round up to n for u just below 1
    return min(int(u * n), n - 1)


def threshold_spin(u: float, p_plus: float) -> int:
    return 1 if u < p_plus else -1


def gibbs_step(model: IsingModel, state: ChainState, rng: RngStream) -> tuple[int, ChainState]:
    """One Gibbs update: uniform site, spin redrawn from its conditional."""
    model.check_configuration(state.config)
    u_site, u_spin = rng.spins.random(2)
    i = pick_site(u_site, model.n)
    x = state.config.spins.copy()
    p = p_plus_from_field(site_field(model, i, x[model.neighbor_index[i]]))
    x[i] = threshold_spin(u_spin, p)
    return i, ChainState(Configuration(x), state.step + 1)


def _advance(model: IsingModel, x: np.ndarray, steps: int, gen: np.random.Generator,
             on_step: Callable[[int, int], None] | None = None) -> np.ndarray:
    """Apply `steps` Gibbs updates to the mutable spin array x in place."""
    n = model.n
    index = model.neighbor_index
    done = 0
    while done < steps:
        block = min(DRAW_BLOCK, steps - done)
        draws = gen.random((block, 2))
        for u_site, u_spin in draws:
            i = pick_site(u_site, n)
            p = p_plus_from_field(site_field(model, i, x[index[i]]))
            x[i] = 1 if u_spin < p else -1
            if on_step is not None:
                on_step(i, int(x[i]))
        done += block
    return x


def run_sequential(model: IsingModel, steps: int, init: Configuration | None, rng: RngStream,
                   trajectory: list | None = None) -> ChainState:
    """
    Run `steps` Gibbs updates from `init` (uniform random when None).

    When a list is passed as `trajectory`, one (step, site, new_value) row is
    appended per update.
    """
    if steps < 0:
        raise InvalidArgumentError(f'steps must be >= 0, got {steps}')
    if init is None:
        init = Configuration.random(model.n, rng.init)
    model.check_configuration(init)
    x = init.spins.copy()
    on_step = None
    if trajectory is not None:
        counter = iter(range(1, steps + 1))

        def on_step(site, value):
            trajectory.append((next(counter), site, value))
    _advance(model, x, steps, rng.spins, on_step)
    return ChainState(Configuration(x), steps)


def sample_thinned(model: IsingModel, burn_in: int, thin: int, count: int, rng: RngStream,
                   init: Configuration | None = None) -> np.ndarray:
    """One long chain: burn in, then keep every `thin`-th state. Returns (count, n) int8."""
    if thin < 1 or count < 1:
        raise InvalidArgumentError('thin and count must be positive')
    if init is None:
        init = Configuration.random(model.n, rng.init)
    x = init.spins.copy()
    _advance(model, x, burn_in, rng.spins)
    out = np.empty((count, model.n), dtype=np.int8)
    for k in range(count):
        _advance(model, x, thin, rng.spins)
        out[k] = x
    return out


# ================== Mixing budgets ==================

def mixing_budget_theory(n: int, alpha: float, eps: float) -> int:
    """ceil(n / (1 - alpha) * ln(n / eps)) steps under Dobrushin's condition."""
    if not 0 < alpha < 1:
        raise DomainError(f'Dobrushin condition needs 0 < alpha < 1, got {alpha}')
    if not 0 < eps < 1:
        raise DomainError(f'eps must lie in (0, 1), got {eps}')
    return math.ceil(n / (1.0 - alpha) * math.log(n / eps))


def mixing_budget_experiment(n: int) -> int:
    """ceil(10 n log2 n), the burn-in used by the reference experiments."""
    if n < 2:
        raise InvalidArgumentError(f'experiment budget needs n >= 2, got {n}')
    return math.ceil(10 * n * math.log2(n))


# ================== Independent restarts ==================

def _advance_batch(model: IsingModel, X: np.ndarray, steps: int, gens: Sequence[np.random.Generator]) -> np.ndarray:
    """Vectorized _advance: row c of X follows generator c with the scalar draw schedule."""
    count, n = X.shape
    rows = np.arange(count)
    index = model.neighbor_index
    weight = model.neighbor_weight
    theta = model.node_weights
    done = 0
    while done < steps:
        block = min(DRAW_BLOCK, steps - done)
        draws = np.stack([g.random((block, 2)) for g in gens])
        for k in range(block):
            sites = np.minimum((draws[:, k, 0] * n).astype(np.int64), n - 1)
            values = X[rows[:, None], index[sites]]
            field = theta[sites] + (weight[sites] * values).sum(axis=1)
            X[rows, sites] = np.where(draws[:, k, 1] < p_plus_from_field(field), 1, -1)
        done += block
    return X


def _initial_states(model: IsingModel, streams: Sequence[RngStream]) -> np.ndarray:
    return np.stack([Configuration.random(model.n, s.init).spins for s in streams]).astype(np.int8)


def _sequential_chunk(model: IsingModel, streams: Sequence[RngStream], steps: int) -> np.ndarray:
    X = _initial_states(model, streams)
    return _advance_batch(model, X, steps, [s.spins for s in streams])


def map_chains(fn, model: IsingModel, streams: Sequence[RngStream], workers: int, *args) -> np.ndarray:
    """Run fn(model, chunk_of_streams, *args) over a process pool; rows keep stream order."""
    if workers <= 1 or len(streams) < 2:
        return fn(model, streams, *args)
    chunks = [c for c in np.array_split(np.arange(len(streams)), workers) if len(c)]
    with ProcessPoolExecutor(max_workers=len(chunks)) as pool:
        futures = [pool.submit(fn, model, [streams[i] for i in chunk], *args) for chunk in chunks]
        return np.concatenate([f.result() for f in futures])


def sample_batch_array(model: IsingModel, count: int, steps_per_run: int, rng: RngStream,
                       workers: int | None = None) -> np.ndarray:
    """Final states of `count` independent runs as a (count, n) int8 array."""
    if count < 1:
        raise InvalidArgumentError(f'count must be >= 1, got {count}')
    workers = config.WORKERS if workers is None else workers
    streams = rng.spawn(count)
    logger.debug('sequential batch: %d runs x %d steps on %r', count, steps_per_run, model)
    return map_chains(_sequential_chunk, model, streams, workers, steps_per_run)


def sample_batch(model: IsingModel, count: int, steps_per_run: int, rng: RngStream,
                 workers: int | None = None) -> list[Configuration]:
    """Independent restarts from uniform random states, one child stream per run."""
    return [Configuration(row) for row in sample_batch_array(model, count, steps_per_run, rng, workers)]


def write_trajectory_csv(trajectory: Sequence[tuple[int, int, int]], path: str) -> None:
    pd.DataFrame(list(trajectory), columns=['step', 'site', 'new_value']).to_csv(path, index=False)
