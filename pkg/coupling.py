"""
Greedy coupling of a sequential Gibbs chain X and a simulated HOGWILD! chain Y.

Both chains update the same site with one shared uniform pushed through
both inverse CDFs. X uses only the spin stream, so its marginal is exactly
the uncoupled sequential chain; the delay stream belongs to Y.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import pandas as pd

from errors import DimensionError, DomainError, EmptyInputError, InvalidArgumentError, ValidationError
from hogwild import DelayModel, VersionedTrace, sample_delays
from model import Configuration, IsingModel, SiteDistribution, p_plus_from_field, site_field
from sampler import DRAW_BLOCK, ChainState, RngStream, pick_site, threshold_spin

logger = logging.getLogger(__name__)

PROB_TOLERANCE = 1e-12


@dataclass(frozen=True)
class FiniteDistribution:
    """Probabilities over the ordered states 0..k-1."""
    probabilities: tuple[float, ...]

    def __post_init__(self):
        probs = tuple(float(p) for p in self.probabilities)
        if not probs:
            raise ValidationError('distribution has no states')
        if any(not math.isfinite(p) or p < 0 for p in probs):
            raise ValidationError(f'probabilities must be finite and nonnegative: {probs}')
        if abs(math.fsum(probs) - 1.0) > PROB_TOLERANCE:
            raise ValidationError(f'probabilities sum to {math.fsum(probs)!r}, not 1')
        object.__setattr__(self, 'probabilities', probs)

    @classmethod
    def from_site(cls, site: SiteDistribution) -> 'FiniteDistribution':
        """Binary law in state order (+1, -1)."""
        return cls(site.as_states())

    def __len__(self):
        return len(self.probabilities)

    @property
    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.probabilities)


def hamming(x: Configuration, y: Configuration) -> int:
    if len(x) != len(y):
        raise DimensionError(f'length mismatch: {len(x)} vs {len(y)}')
    return int(np.count_nonzero(x.spins != y.spins))


def _inverse_cdf(cumulative: np.ndarray, u: float) -> int:
    # [P(i-1), P(i)) intervals; rounding can leave the last sum just under 1
    return min(int(np.searchsorted(cumulative, u, side='right')), len(cumulative) - 1)


def greedy_couple(p: FiniteDistribution, q: FiniteDistribution, u: float) -> tuple[int, int]:
    """Map one uniform through both inverse CDFs; returns 0-based state indices."""
    if len(p) != len(q):
        raise ValidationError(f'state sets differ in size: {len(p)} vs {len(q)}')
    if not 0.0 <= u < 1.0:
        raise InvalidArgumentError(f'u must lie in [0, 1), got {u}')
    return _inverse_cdf(p.cumulative, u), _inverse_cdf(q.cumulative, u)


def disagreement_measure(p: FiniteDistribution, q: FiniteDistribution) -> float:
    """Lebesgue measure of the u in [0, 1) on which greedy_couple's outputs differ."""
    if len(p) != len(q):
        raise ValidationError(f'state sets differ in size: {len(p)} vs {len(q)}')
    cp, cq = p.cumulative, q.cumulative
    cuts = np.unique(np.clip(np.concatenate(([0.0, 1.0], cp, cq)), 0.0, 1.0))
    total = 0.0
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        mid = 0.5 * (lo + hi)
        if _inverse_cdf(cp, mid) != _inverse_cdf(cq, mid):
            total += hi - lo
    return total


def total_variation_finite(p: FiniteDistribution, q: FiniteDistribution) -> float:
    if len(p) != len(q):
        raise ValidationError(f'state sets differ in size: {len(p)} vs {len(q)}')
    return 0.5 * float(np.abs(np.subtract(p.probabilities, q.probabilities)).sum())


# ================== Coupled chains ==================

def _coupled_update(model: IsingModel, x: np.ndarray, trace: VersionedTrace, dm: DelayModel,
                    rng: RngStream, u_site: float, u: float) -> int:
    """Advance x in place and append Y's write to trace; both use site and uniform u."""
    i = pick_site(u_site, model.n)
    row = model.neighbor_index[i]
    p_x = p_plus_from_field(site_field(model, i, x[row]))
    stale = trace.read_many(row, trace.t - sample_delays(dm, row, rng))
    p_y = p_plus_from_field(site_field(model, i, stale))
    # binary greedy coupling in state order (+1, -1) is the threshold rule on each chain
    x[i] = threshold_spin(u, p_x)
    trace.write(i, threshold_spin(u, p_y))
    return i


def coupled_step(model: IsingModel, X: ChainState, Ytrace: VersionedTrace, dm: DelayModel,
                 rng: RngStream) -> tuple[int, ChainState, VersionedTrace]:
    if len(X.config) != model.n or Ytrace.n != model.n:
        raise DimensionError(f'chains have n={len(X.config)} and n={Ytrace.n}, model has n={model.n}')
    u_site, u = rng.spins.random(2)
    x = X.config.spins.copy()
    i = _coupled_update(model, x, Ytrace, dm, rng, u_site, u)
    return i, ChainState(Configuration(x), X.step + 1), Ytrace


@dataclass
class CoupledRunStats:
    """
    Hamming trajectory of one coupled run (index t = after t steps) with
    moment estimates E[d_H^d], d = 1..max_moment, over the final half of the
    run and over the whole run.
    """
    hamming: np.ndarray
    max_moment: int
    window_moments: tuple[float, ...]
    full_moments: tuple[float, ...]
    final_x: Configuration
    final_y: Configuration
    x_samples: np.ndarray | None = None

    @property
    def steps(self) -> int:
        return len(self.hamming) - 1

    @property
    def disagreement_sizes(self) -> np.ndarray:
        """|{i : X_i != Y_i}| per step; the same count as the Hamming distance."""
        return self.hamming

    def moment(self, d: int, window: bool = True) -> float:
        if not 1 <= d <= self.max_moment:
            raise InvalidArgumentError(f'moment order {d} outside 1..{self.max_moment}')
        return (self.window_moments if window else self.full_moments)[d - 1]

    def to_frame(self) -> pd.DataFrame:
        h = self.hamming.astype(np.int64)
        columns = {'step': np.arange(len(h)), 'hamming': h}
        for d in range(2, self.max_moment + 1):
            columns[f'hamming_pow{d}'] = h ** d
        return pd.DataFrame(columns)

    def to_csv(self, path: str) -> None:
        self.to_frame().to_csv(path, index=False)


def _moments(h: np.ndarray, max_moment: int) -> tuple[float, ...]:
    if h.size == 0:
        return tuple(0.0 for _ in range(max_moment))
    h = h.astype(np.float64)
    return tuple(float(np.mean(h ** d)) for d in range(1, max_moment + 1))


def run_coupled(model: IsingModel, steps: int, dm: DelayModel, max_moment: int, rng: RngStream,
                init: Configuration | None = None, burn_in: int = 0, thin: int = 0) -> CoupledRunStats:
    """
    Coupled run from a shared initial state (uniform random when None).

    With thin > 0, X's state is kept after every thin-th step past burn_in.
    """
    if steps < 0:
        raise InvalidArgumentError(f'steps must be >= 0, got {steps}')
    if max_moment < 1:
        raise InvalidArgumentError(f'max_moment must be >= 1, got {max_moment}')
    if init is None:
        init = Configuration.random(model.n, rng.init)
    model.check_configuration(init)
    x = init.spins.copy()
    trace = VersionedTrace(init, horizon=dm.max_delay)
    y = init.spins.copy()
    distance = 0
    hamming_path = np.zeros(steps + 1, dtype=np.int32)
    kept = []

    done = 0
    while done < steps:
        block = min(DRAW_BLOCK, steps - done)
        draws = rng.spins.random((block, 2))
        for u_site, u in draws:
            i = pick_site(u_site, model.n)
            differed = x[i] != y[i]
            _coupled_update(model, x, trace, dm, rng, u_site, u)
            y[i] = trace.read_at(i, trace.t)
            # only site i can change the distance this step
            distance += int(x[i] != y[i]) - int(differed)
            done += 1
            hamming_path[done] = distance
            if thin and done > burn_in and (done - burn_in) % thin == 0:
                kept.append(x.copy())

    half = steps // 2
    stats = CoupledRunStats(
        hamming=hamming_path,
        max_moment=max_moment,
        window_moments=_moments(hamming_path[half + 1:] if steps else hamming_path, max_moment),
        full_moments=_moments(hamming_path, max_moment),
        final_x=Configuration(x),
        final_y=trace.current(),
        x_samples=np.array(kept, dtype=np.int8).reshape(-1, model.n) if thin else None,
    )
    logger.debug('coupled run: %d steps, E[d_H] over final half %.4f', steps, stats.window_moments[0])
    return stats


@dataclass(frozen=True)
class CoupledSummary:
    runs: int
    moments: tuple[float, ...]
    stderr: tuple[float, ...]


def aggregate_coupled(runs: Sequence[CoupledRunStats], window: bool = True) -> CoupledSummary:
    """Mean and standard error of each moment estimate across independent runs."""
    if not runs:
        raise EmptyInputError('no coupled runs to aggregate')
    table = np.array([r.window_moments if window else r.full_moments for r in runs], dtype=np.float64)
    count = len(runs)
    stderr = table.std(axis=0, ddof=1) / math.sqrt(count) if count > 1 else np.zeros(table.shape[1])
    return CoupledSummary(count, tuple(float(v) for v in table.mean(axis=0)), tuple(float(v) for v in stderr))


# ================== Bounds ==================

def require_dobrushin(alpha: float) -> None:
    if not 0 < alpha < 1:
        raise DomainError(f'Dobrushin condition needs 0 < alpha < 1, got {alpha}')


def hamming_bound_theory(tau: float, alpha: float, n: float, log2: bool = False) -> float:
    """tau * alpha * log(n) / (1 - alpha); natural log unless log2."""
    require_dobrushin(alpha)
    log_n = math.log2(n) if log2 else math.log(n)
    return tau * alpha * log_n / (1.0 - alpha)


def hamming_moment_bound(tau: float, alpha: float, n: float, d: int, constant: float = 1.0) -> float:
    """Envelope for E[d_H^d]: constant * (tau alpha / (1 - alpha))^d * ln(n)^d."""
    require_dobrushin(alpha)
    if d < 1:
        raise InvalidArgumentError(f'moment order must be >= 1, got {d}')
    return constant * (tau * alpha / (1.0 - alpha)) ** d * math.log(n) ** d
