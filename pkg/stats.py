"""
Multilinear statistics of spin configurations, their estimators and the
bound calculators they are compared against.

Functions are stored in subset form {S: a_S} with sorted, duplicate-free
index tuples; symmetric tensors only appear at the conversion boundary.
Bound formulas use natural logarithms and take every unspecified constant
as a parameter defaulting to 1.
"""
from __future__ import annotations

import itertools
import logging
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from coupling import hamming_moment_bound, require_dobrushin
from errors import (
    BoundsError,
    DimensionError,
    InsufficientDataError,
    InvalidArgumentError,
    ParseError,
    ValidationError,
)
from hogwild import DelayModel, run_hogwild_batch
from model import Configuration, ExactDistribution, IsingModel, configuration_index, exact_distribution
from sampler import RngStream, sample_batch_array

logger = logging.getLogger(__name__)

ESTIMATE_METHODS = ('sequential', 'hogwild-sim', 'hogwild-hw', 'exact')

# Samples x monomials x degree entries gathered per evaluation chunk
_GATHER_LIMIT = 4_000_000


# ================== Functions ==================

class MultilinearFunction:
    """f(x) = sum over S of a_S * prod_{i in S} x_i, for x in {-1, +1}^n."""

    def __init__(self, coefficients: Mapping[Sequence[int], float], n: int | None = None):
        merged = defaultdict(float)
        for subset, coeff in coefficients.items():
            subset = tuple(sorted(int(i) for i in subset))
            if len(set(subset)) != len(subset):
                raise ValidationError(f'repeated index in subset {subset}')
            if subset and subset[0] < 0:
                raise BoundsError(f'negative index in subset {subset}')
            coeff = float(coeff)
            if not math.isfinite(coeff):
                raise ValidationError(f'non-finite coefficient on {subset}')
            merged[subset] += coeff
        self.coefficients = {s: a for s, a in sorted(merged.items(), key=lambda kv: (len(kv[0]), kv[0])) if a != 0.0}
        width = max((s[-1] + 1 for s in self.coefficients if s), default=0)
        if n is not None and n < width:
            raise BoundsError(f'index {width - 1} outside [0, {n})')
        self.n = width if n is None else int(n)
        self.degree = max((len(s) for s in self.coefficients), default=0)
        self.a_inf = max((abs(a) for a in self.coefficients.values()), default=0.0)
        self._groups = None

    def __len__(self):
        return len(self.coefficients)

    def __eq__(self, other):
        if not isinstance(other, MultilinearFunction):
            return NotImplemented
        return self.n == other.n and self.coefficients == other.coefficients

    def __repr__(self):
        return f'MultilinearFunction(n={self.n}, degree={self.degree}, terms={len(self)})'

    def is_odd(self) -> bool:
        """True when every monomial has odd size."""
        return bool(self.coefficients) and all(len(s) % 2 == 1 for s in self.coefficients)

    def _compiled(self):
        if self._groups is None:
            groups = {}
            by_size = defaultdict(list)
            for s, a in self.coefficients.items():
                by_size[len(s)].append((s, a))
            for size, terms in by_size.items():
                if size == 2:
                    A = np.zeros((self.n, self.n))
                    for (i, j), a in terms:
                        A[i, j] = A[j, i] = a
                    groups[2] = A
                else:
                    index = np.array([s for s, _ in terms], dtype=np.int64).reshape(len(terms), size)
                    groups[size] = (index, np.array([a for _, a in terms]))
            self._groups = groups
        return self._groups


def evaluate_many(f: MultilinearFunction, samples) -> np.ndarray:
    """f on every row of a (count, n) spin array or a list of configurations."""
    X = as_sample_matrix(samples)
    if X.shape[1] < f.n:
        raise BoundsError(f'function reads index {f.n - 1} but configurations have n={X.shape[1]}')
    X = X[:, :f.n].astype(np.float64)
    out = np.zeros(X.shape[0])
    for size, group in f._compiled().items():
        if size == 2:
            out += 0.5 * np.einsum('ij,ij->i', X @ group, X)
        elif size == 0:
            out += group[1][0]
        elif size == 1:
            out += X[:, group[0][:, 0]] @ group[1]
        else:
            index, coeff = group
            chunk = max(1, _GATHER_LIMIT // max(1, index.size))
            for start in range(0, X.shape[0], chunk):
                out[start:start + chunk] += X[start:start + chunk][:, index].prod(axis=2) @ coeff
    return out


def evaluate(f: MultilinearFunction, x: Configuration) -> float:
    return float(evaluate_many(f, [x])[0])


def lipschitz_constant(f: MultilinearFunction) -> float:
    """
    K with |f(x) - f(y)| <= K d_H(x, y): flipping x_i moves f by at most
    2 * sum of |a_S| over the subsets S containing i.
    """
    per_site = np.zeros(max(f.n, 1))
    for s, a in f.coefficients.items():
        for i in s:
            per_site[i] += abs(a)
    return 2.0 * float(per_site.max())


def complete_bilinear(n: int) -> MultilinearFunction:
    """Sum over i != j of x_i x_j, i.e. coefficient 2 on every pair."""
    if n < 2:
        raise InvalidArgumentError(f'complete bilinear needs n >= 2, got {n}')
    return MultilinearFunction({pair: 2.0 for pair in itertools.combinations(range(n), 2)}, n=n)


def linear_sum(n: int, coeff: float = 1.0) -> MultilinearFunction:
    if n < 1:
        raise InvalidArgumentError(f'linear sum needs n >= 1, got {n}')
    return MultilinearFunction({(i,): coeff for i in range(n)}, n=n)


def monomial(indices: Sequence[int], coeff: float = 1.0, n: int | None = None) -> MultilinearFunction:
    return MultilinearFunction({tuple(indices): coeff}, n=n)


# ================== Tensor form ==================

class TensorForm:
    """Symmetric degree-d coefficient tensor keyed by ordered index tuples."""

    def __init__(self, degree: int, entries: Mapping[Sequence[int], float], n: int | None = None):
        if degree < 1:
            raise ValidationError(f'tensor degree must be >= 1, got {degree}')
        self.degree = degree
        self.entries = {}
        for key, value in entries.items():
            key = tuple(int(i) for i in key)
            if len(key) != degree:
                raise ValidationError(f'index tuple {key} does not have length {degree}')
            if min(key) < 0:
                raise BoundsError(f'negative index in {key}')
            if value != 0.0:
                self.entries[key] = float(value)
        width = max((max(k) + 1 for k in self.entries), default=0)
        self.n = width if n is None else int(n)
        for key, value in self.entries.items():
            for perm in set(itertools.permutations(key)):
                if abs(self.entries.get(perm, 0.0) - value) > 1e-12 * max(1.0, abs(value)):
                    raise ValidationError(f'tensor is not symmetric at {key} vs {perm}')


def canonicalize(t: TensorForm) -> MultilinearFunction:
    """Reduce with x_i^2 = 1; distinct-index entries add up with their multiplicity."""
    coefficients = defaultdict(float)
    for key, value in t.entries.items():
        counts = defaultdict(int)
        for i in key:
            counts[i] += 1
        coefficients[tuple(sorted(i for i, c in counts.items() if c % 2))] += value
    return MultilinearFunction(coefficients, n=t.n)


def expand(f: MultilinearFunction, d: int) -> TensorForm:
    """
    Symmetric degree-d tensor whose canonical form is f.

    A subset of size s < d is padded with (d - s) / 2 repeated pairs of its
    smallest index (index 0 for the constant term).
    """
    entries = defaultdict(float)
    for subset, coeff in f.coefficients.items():
        gap = d - len(subset)
        if gap < 0 or gap % 2:
            raise ValidationError(f'subset {subset} cannot be written as a degree-{d} tensor entry')
        pad = subset[0] if subset else 0
        perms = set(itertools.permutations(subset + (pad,) * gap))
        for perm in perms:
            entries[perm] += coeff / len(perms)
    return TensorForm(d, entries, n=max(f.n, 1))


# ================== Estimators ==================

@dataclass(frozen=True)
class EstimateReport:
    mean: float
    stderr: float
    count: int
    method: str
    stdev: float = 0.0

    def __post_init__(self):
        if self.method not in ESTIMATE_METHODS:
            raise InvalidArgumentError(f'unknown estimate method {self.method!r}')
        if self.stderr < 0:
            raise InvalidArgumentError('standard error must be >= 0')
        if self.count < 1 and self.method != 'exact':
            raise InvalidArgumentError('an empirical estimate needs at least one sample')


def as_sample_matrix(samples) -> np.ndarray:
    if isinstance(samples, np.ndarray):
        X = samples
    else:
        samples = list(samples)
        if not samples:
            return np.zeros((0, 0), dtype=np.int8)
        X = np.stack([s.spins if isinstance(s, Configuration) else np.asarray(s) for s in samples])
    if X.ndim != 2:
        raise DimensionError(f'samples must form a (count, n) array, got shape {X.shape}')
    return X


def estimate_mean(f: MultilinearFunction, samples, method: str = 'sequential') -> EstimateReport:
    values = evaluate_many(f, samples) if len(samples) else np.zeros(0)
    if values.size < 2:
        raise InsufficientDataError(f'need at least 2 samples, got {values.size}')
    stdev = float(values.std(ddof=1))
    return EstimateReport(float(values.mean()), stdev / math.sqrt(values.size), int(values.size), method, stdev)


def empirical_variance(f: MultilinearFunction, samples) -> float:
    values = evaluate_many(f, samples) if len(samples) else np.zeros(0)
    if values.size < 2:
        raise InsufficientDataError(f'need at least 2 samples, got {values.size}')
    return float(values.var(ddof=1))


def exact_expectation(model: IsingModel, f: MultilinearFunction, dist: ExactDistribution | None = None) -> float:
    dist = exact_distribution(model) if dist is None else dist
    return dist.expectation(evaluate_many(f, dist.configurations))


def exact_report(model: IsingModel, f: MultilinearFunction) -> EstimateReport:
    return EstimateReport(exact_expectation(model, f), 0.0, 0, 'exact')


@dataclass(frozen=True)
class BiasReport:
    """
    Sequential vs HOGWILD! means. `errbar` is the sequential sample standard
    deviation divided by sqrt(n).
    """
    sequential: EstimateReport
    hogwild: EstimateReport
    bias: float
    stderr: float
    errbar: float


def compare_estimates(seq: EstimateReport, hog: EstimateReport, n: int) -> BiasReport:
    return BiasReport(
        sequential=seq,
        hogwild=hog,
        bias=abs(seq.mean - hog.mean),
        stderr=math.hypot(seq.stderr, hog.stderr),
        errbar=seq.stdev / math.sqrt(n),
    )


def estimate_bias(model: IsingModel, f: MultilinearFunction, dm: DelayModel, seq_runs: int, hog_runs: int,
                  steps: int, rng: RngStream, workers: int | None = None) -> BiasReport:
    """Independent-restart batches of both samplers, one final state per run."""
    seq_samples = sample_batch_array(model, seq_runs, steps, rng.child(0), workers)
    hog_samples = run_hogwild_batch(model, hog_runs, steps, dm, rng.child(1), workers)
    report = compare_estimates(estimate_mean(f, seq_samples, 'sequential'),
                               estimate_mean(f, hog_samples, 'hogwild-sim'), model.n)
    logger.debug('bias on %r: %.5g +- %.5g (errbar %.5g)', model, report.bias, report.stderr, report.errbar)
    return report


# ================== Distributions ==================

def empirical_distribution(samples, n: int | None = None) -> np.ndarray:
    """Frequencies of each configuration, indexed like enumerate_configurations."""
    X = as_sample_matrix(samples)
    n = X.shape[1] if n is None else n
    if X.shape[0] == 0:
        raise InsufficientDataError('no samples')
    if X.shape[1] != n:
        raise DimensionError(f'samples have n={X.shape[1]}, expected {n}')
    counts = np.bincount(configuration_index(X), minlength=2 ** n)
    return counts / counts.sum()


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    p, q = np.asarray(p, dtype=np.float64), np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise DimensionError(f'distribution shapes differ: {p.shape} vs {q.shape}')
    return 0.5 * float(np.abs(p - q).sum())


def tv_to_exact(samples, dist: ExactDistribution) -> float:
    return total_variation(empirical_distribution(samples, dist.configurations.shape[1]), dist.probabilities)


# ================== Bounds ==================

def bound_mixing_error(f_inf_norm: float, n: int, alpha: float, t: float) -> float:
    """||f||_inf * n * exp(-(1 - alpha) t / n)."""
    require_dobrushin(alpha)
    return f_inf_norm * n * math.exp(-(1.0 - alpha) * t / n)


def bound_lipschitz_bias(K: float, d: int, tau: float, alpha: float, n: float, constant: float = 1.0) -> float:
    """K (C ln^d n + 1) for f with |f(x) - f(y)| <= K d_H(x, y)^d."""
    return K * (hamming_moment_bound(tau, alpha, n, d, constant) + 1.0)


def bound_concentration_tail(a_inf: float, d: int, alpha: float, n: int, t: float, c: float = 1.0) -> float:
    """P(|f - E f| > t) <= 2 exp(-(1 - alpha) t^(2/d) / (c a_inf^(2/d) n))."""
    require_dobrushin(alpha)
    if t < 0:
        raise InvalidArgumentError(f't must be >= 0, got {t}')
    if a_inf == 0:
        return 2.0 if t == 0 else 0.0
    return 2.0 * math.exp(-(1.0 - alpha) * t ** (2.0 / d) / (c * a_inf ** (2.0 / d) * n))


def bound_marginals(a_inf: float, n: int, d: int, alpha: float) -> float:
    """a_inf * 2 (4 n d ln n / (1 - alpha))^(d/2); the coefficient scale enters linearly."""
    require_dobrushin(alpha)
    return a_inf * 2.0 * (4.0 * n * d * math.log(n) / (1.0 - alpha)) ** (d / 2.0)


def bound_bias_degree_d(a_inf: float, d: int, tau: float, alpha: float, n: int,
                        c2: float = 1.0, c_prime: float = 1.0) -> float:
    require_dobrushin(alpha)
    log_n = math.log(n)
    if d == 2:
        return c2 * a_inf * (tau * alpha * log_n / (1.0 - alpha) ** 1.5) * math.sqrt(n * log_n)
    return c_prime * a_inf * (n * log_n) ** ((d - 1) / 2.0)


def bound_variance(a_inf: float, d: int, n: int, constant: float = 1.0) -> float:
    return a_inf ** 2 * constant * n ** d


def lipschitz_burn_in(f_inf_norm: float, K: float, n: int, alpha: float) -> int:
    require_dobrushin(alpha)
    if K <= 0 or f_inf_norm <= 0:
        raise InvalidArgumentError('f_inf_norm and K must be positive')
    return max(0, math.ceil(n / (1.0 - alpha) * math.log(2.0 * f_inf_norm * n / K)))


def polynomial_burn_in(n: int, alpha: float, d: int) -> int:
    require_dobrushin(alpha)
    return math.ceil(n * (d + 1) / (1.0 - alpha) * math.log(n))


def quadratic_burn_in(a_inf: float, n: int, alpha: float) -> int:
    require_dobrushin(alpha)
    if a_inf <= 0:
        raise InvalidArgumentError('a_inf must be positive')
    return max(0, math.ceil(6.0 * n / (1.0 - alpha) * math.log(2.0 * a_inf * n)))


def variance_burn_in(n: int, alpha: float, d: int) -> int:
    require_dobrushin(alpha)
    return math.ceil((d + 1) * n / (1.0 - alpha) * math.log(n ** 2))


# ================== Function description files ==================

def parse_function_text(text: str, n: int | None = None, source: str = '<string>') -> MultilinearFunction:
    """
    Parse `i j ... coeff` lines (subset form). A line holding only a
    coefficient is the constant term; `n = K` fixes the dimension.
    """
    coefficients = defaultdict(float)
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        if line.replace(' ', '').startswith('n='):
            try:
                n = int(line.split('=', 1)[1])
            except ValueError:
                raise ParseError(source, lineno, f'bad dimension line {line!r}') from None
            continue
        parts = line.split()
        try:
            indices = tuple(int(p) for p in parts[:-1])
            coeff = float(parts[-1])
        except ValueError:
            raise ParseError(source, lineno, 'expected integer indices followed by a coefficient') from None
        if len(set(indices)) != len(indices) or any(i < 0 for i in indices):
            raise ParseError(source, lineno, f'invalid index set {indices}')
        coefficients[tuple(sorted(indices))] += coeff
    try:
        return MultilinearFunction(coefficients, n=n)
    except (ValidationError, BoundsError) as e:
        raise ParseError(source, 0, str(e)) from None


def load_function_file(path: str, n: int | None = None) -> MultilinearFunction:
    with open(path, encoding='utf-8') as fh:
        return parse_function_text(fh.read(), n=n, source=path)
