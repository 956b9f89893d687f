"""
Ising models on explicit graphs: construction, conditionals, influence and
the brute-force oracle for small instances.
"""
from __future__ import annotations

import logging
import math
import os
import re
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

import config
from errors import (
    BoundsError,
    CapacityError,
    DimensionError,
    InvalidArgumentError,
    InvalidModelError,
    ParseError,
)

logger = logging.getLogger(__name__)

MODEL_TYPES = ('curie_weiss', 'torus_grid', 'explicit')


# ================== Graph ==================

class Graph:
    """Undirected simple graph on nodes 0..n-1."""

    def __init__(self, n: int, edges: Iterable[tuple[int, int]]):
        if n < 1:
            raise InvalidModelError(f'graph needs at least one node, got n={n}')
        normalized = []
        seen = set()
        for u, v in edges:
            u, v = int(u), int(v)
            if u == v:
                raise InvalidModelError(f'self-loop on node {u}')
            if not (0 <= u < n and 0 <= v < n):
                raise InvalidModelError(f'edge ({u}, {v}) outside [0, {n})')
            key = (min(u, v), max(u, v))
            if key in seen:
                raise InvalidModelError(f'duplicate edge {key}')
            seen.add(key)
            normalized.append(key)
        self.n = n
        self.edges = tuple(normalized)
        neighbors = [[] for _ in range(n)]
        for u, v in self.edges:
            neighbors[u].append(v)
            neighbors[v].append(u)
        self.adjacency = tuple(tuple(sorted(nbrs)) for nbrs in neighbors)

    def degree(self, i: int) -> int:
        return len(self.adjacency[i])

    @property
    def max_degree(self) -> int:
        return max((len(a) for a in self.adjacency), default=0)

    def __repr__(self):
        return f'Graph(n={self.n}, edges={len(self.edges)})'


# ================== Values ==================

@dataclass(frozen=True, eq=False)
class Configuration:
    """A full spin assignment in {-1, +1}^n, stored as int8."""
    spins: np.ndarray

    def __post_init__(self):
        arr = np.array(self.spins, dtype=np.int8).reshape(-1)
        if arr.size and not np.all((arr == 1) | (arr == -1)):
            raise InvalidArgumentError('spins must all be -1 or +1')
        arr.setflags(write=False)
        object.__setattr__(self, 'spins', arr)

    @classmethod
    def random(cls, n: int, gen: np.random.Generator) -> 'Configuration':
        """Uniform draw over {-1, +1}^n."""
        return cls(np.where(gen.random(n) < 0.5, 1, -1))

    @classmethod
    def ones(cls, n: int) -> 'Configuration':
        return cls(np.ones(n, dtype=np.int8))

    def __len__(self):
        return int(self.spins.size)

    def __neg__(self):
        return Configuration(-self.spins)

    def __eq__(self, other):
        if not isinstance(other, Configuration):
            return NotImplemented
        return np.array_equal(self.spins, other.spins)

    def __hash__(self):
        return hash(self.spins.tobytes())

    def __repr__(self):
        return 'Configuration(' + ''.join('+' if s > 0 else '-' for s in self.spins) + ')'


@dataclass(frozen=True)
class SiteDistribution:
    """Conditional law of one binary site; only P(+1) is stored."""
    p_plus: float

    def __post_init__(self):
        if not (0.0 <= self.p_plus <= 1.0):
            raise InvalidArgumentError(f'p_plus={self.p_plus} outside [0, 1]')

    @property
    def p_minus(self) -> float:
        return 1.0 - self.p_plus

    def as_states(self) -> tuple[float, float]:
        """Probabilities in state order (+1, -1)."""
        return (self.p_plus, 1.0 - self.p_plus)


# ================== Ising model ==================

class IsingModel:
    """
    Pairwise binary model with edge weights theta_e and node weights theta_v.

    Neighbours are also stored as padded (n, D) index/weight arrays, D being
    the maximum degree; padding slots point at node 0 with weight 0.
    """

    def __init__(self, graph: Graph, edge_weights: Sequence[float], node_weights: Sequence[float] | None = None,
                 name: str = 'explicit'):
        edge_weights = np.asarray(edge_weights, dtype=np.float64).reshape(-1)
        if edge_weights.size != len(graph.edges):
            raise InvalidModelError(
                f'{edge_weights.size} edge weights for {len(graph.edges)} edges')
        if node_weights is None:
            node_weights = np.zeros(graph.n)
        node_weights = np.asarray(node_weights, dtype=np.float64).reshape(-1)
        if node_weights.size != graph.n:
            raise InvalidModelError(f'{node_weights.size} node weights for n={graph.n}')
        if not (np.all(np.isfinite(edge_weights)) and np.all(np.isfinite(node_weights))):
            raise InvalidModelError('weights must be finite')

        self.graph = graph
        self.name = name
        self.edge_weights = edge_weights
        self.node_weights = node_weights
        self.edge_weights.setflags(write=False)
        self.node_weights.setflags(write=False)
        self.zero_field = bool(np.all(node_weights == 0.0))

        self._weight_of = {}
        for (u, v), w in zip(graph.edges, edge_weights):
            self._weight_of[(u, v)] = float(w)
            self._weight_of[(v, u)] = float(w)

        D = graph.max_degree
        index = np.zeros((graph.n, D), dtype=np.int64)
        weight = np.zeros((graph.n, D), dtype=np.float64)
        for i, nbrs in enumerate(graph.adjacency):
            index[i, :len(nbrs)] = nbrs
            weight[i, :len(nbrs)] = [self._weight_of[(i, j)] for j in nbrs]
        index.setflags(write=False)
        weight.setflags(write=False)
        self.neighbor_index = index
        self.neighbor_weight = weight
        self.degrees = np.array([len(a) for a in graph.adjacency], dtype=np.int64)

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def max_degree(self) -> int:
        return self.neighbor_index.shape[1]

    def edge_weight(self, u: int, v: int) -> float:
        """theta_uv, or 0 when (u, v) is not an edge."""
        return self._weight_of.get((u, v), 0.0)

    def check_node(self, i: int) -> int:
        if not 0 <= i < self.n:
            raise BoundsError(f'node {i} outside [0, {self.n})')
        return int(i)

    def check_configuration(self, x: Configuration) -> Configuration:
        if len(x) != self.n:
            raise DimensionError(f'configuration of length {len(x)} for model with n={self.n}')
        return x

    def __repr__(self):
        return f'IsingModel({self.name}, n={self.n}, edges={len(self.graph.edges)}, zero_field={self.zero_field})'


def build_curie_weiss(n: int, alpha: float) -> IsingModel:
    """Complete graph with every edge weighted alpha/(n-1)."""
    if n < 2:
        raise InvalidModelError(f'Curie-Weiss needs n >= 2, got {n}')
    graph = Graph(n, ((u, v) for u in range(n) for v in range(u + 1, n)))
    beta = alpha / (n - 1)
    return IsingModel(graph, np.full(len(graph.edges), beta), name=f'CW({n},{alpha})')


def build_torus_grid(k: int, alpha: float) -> IsingModel:
    """k-by-k grid with wrap-around rows and columns; edge weight alpha/4."""
    if k < 3:
        raise InvalidModelError(f'torus grid needs k >= 3, got {k}')
    edges = []
    for row in range(k):
        for col in range(k):
            node = row * k + col
            right = row * k + (col + 1) % k
            down = ((row + 1) % k) * k + col
            edges.append((node, right))
            edges.append((node, down))
    graph = Graph(k * k, edges)
    return IsingModel(graph, np.full(len(graph.edges), alpha / 4.0), name=f'Grid({k * k},{alpha})')


def build_model(model_type: str, size: int, alpha: float) -> IsingModel:
    """Build a preset by node count; torus sizes must be perfect squares."""
    if model_type == 'curie_weiss':
        return build_curie_weiss(size, alpha)
    if model_type == 'torus_grid':
        k = math.isqrt(size)
        if k * k != size:
            raise InvalidModelError(f'torus grid size {size} is not a perfect square')
        return build_torus_grid(k, alpha)
    raise InvalidModelError(f'unknown preset model type {model_type!r}')


# ================== Conditionals ==================

def p_plus_from_field(field):
    """P(+1) for a local field; works on scalars and arrays alike."""
    return 0.5 * (1.0 + np.tanh(field))


def site_field(model: IsingModel, i: int, values: np.ndarray):
    """theta_i + sum_k w_ik * values_k over the padded neighbour row of i."""
    return model.node_weights[i] + (model.neighbor_weight[i] * values).sum()


def conditional(model: IsingModel, config: Configuration, i: int) -> SiteDistribution:
    i = model.check_node(i)
    model.check_configuration(config)
    values = config.spins[model.neighbor_index[i]]
    return SiteDistribution(float(p_plus_from_field(site_field(model, i, values))))


def influence(model: IsingModel, j: int, i: int, exact: bool = False) -> float:
    """
    Influence of node j on node i.

    Zero-field models use the closed form tanh(|theta_ij|); otherwise (or with
    exact=True) the maximum TV between i's conditionals is found by
    enumerating the other neighbours of i.
    """
    i = model.check_node(i)
    j = model.check_node(j)
    if i == j:
        raise InvalidArgumentError('influence of a node on itself is undefined')
    w_ij = model.edge_weight(i, j)
    if model.zero_field and not exact:
        return math.tanh(abs(w_ij))
    if w_ij == 0.0:
        return 0.0

    others = [k for k in model.graph.adjacency[i] if k != j]
    if len(others) > config.ENUMERATION_LIMIT:
        logger.warning('refusing to enumerate 2^%d neighbour states of node %d', len(others), i)
        raise CapacityError(
            f'node {i} has {len(others)} other neighbours; limit is {config.ENUMERATION_LIMIT}')
    weights = np.array([model.edge_weight(i, k) for k in others], dtype=np.float64)
    states = enumerate_configurations(len(others)).astype(np.float64)
    fields = model.node_weights[i] + states @ weights
    tv = np.abs(np.tanh(fields + w_ij) - np.tanh(fields - w_ij)) / 2.0
    return float(tv.max())


def dobrushin_alpha(model: IsingModel, exact: bool = False) -> float:
    """max_i sum_j I(j, i); the model satisfies Dobrushin's condition iff this is < 1."""
    best = 0.0
    for i in range(model.n):
        total = sum(influence(model, j, i, exact=exact) for j in model.graph.adjacency[i])
        best = max(best, total)
    return best


def log_weight(model: IsingModel, x: Configuration) -> float:
    """Unnormalized log-probability: sum_v theta_v x_v + sum_uv theta_uv x_u x_v."""
    model.check_configuration(x)
    return float(_log_weights(model, x.spins[None, :])[0])


def _log_weights(model: IsingModel, states: np.ndarray) -> np.ndarray:
    s = states.astype(np.float64)
    total = s @ model.node_weights
    if model.graph.edges:
        edges = np.asarray(model.graph.edges)
        total = total + (s[:, edges[:, 0]] * s[:, edges[:, 1]]) @ model.edge_weights
    return total


# ================== Exact oracle ==================

def enumerate_configurations(n: int) -> np.ndarray:
    """All 2^n spin vectors, node 0 most significant, -1 before +1."""
    if n == 0:
        return np.zeros((1, 0), dtype=np.int8)
    codes = np.arange(2 ** n, dtype=np.int64)[:, None]
    bits = (codes >> np.arange(n - 1, -1, -1, dtype=np.int64)) & 1
    return (2 * bits - 1).astype(np.int8)


def configuration_index(states: np.ndarray) -> np.ndarray:
    """Row index in enumerate_configurations for each state (rows of +-1)."""
    states = np.atleast_2d(states)
    n = states.shape[1]
    bits = (states > 0).astype(np.int64)
    return bits @ (1 << np.arange(n - 1, -1, -1, dtype=np.int64))


class ExactDistribution:
    """Probability table over every configuration of a small model."""

    def __init__(self, configurations: np.ndarray, probabilities: np.ndarray):
        self.configurations = configurations
        self.probabilities = probabilities

    def __len__(self):
        return len(self.probabilities)

    def probability(self, x: Configuration) -> float:
        return float(self.probabilities[configuration_index(x.spins)[0]])

    def expectation(self, values: np.ndarray) -> float:
        """E[g] given g evaluated on every configuration row."""
        return float(np.dot(self.probabilities, values))

    def as_dict(self) -> dict[tuple[int, ...], float]:
        return {tuple(int(s) for s in row): float(p) for row, p in zip(self.configurations, self.probabilities)}


def exact_distribution(model: IsingModel, limit: int | None = None) -> ExactDistribution:
    limit = config.ENUMERATION_LIMIT if limit is None else limit
    if model.n > limit:
        logger.warning('refusing exact enumeration for n=%d (limit %d)', model.n, limit)
        raise CapacityError(f'exact enumeration needs n <= {limit}, got n={model.n}')
    states = enumerate_configurations(model.n)
    logw = _log_weights(model, states)
    weights = np.exp(logw - logw.max())
    return ExactDistribution(states, weights / weights.sum())


# ================== Model description files ==================

_KEY_VALUE = re.compile(r'^\s*([A-Za-z_]+)\s*[=:]\s*(\S+)\s*$')


def parse_model_text(text: str, source: str = '<string>') -> IsingModel:
    """
    Parse a model description.

    Key/value lines (`type`, `n` or `k`, `alpha`) select a preset; an
    `explicit` model lists `u v weight` edge lines and optional
    `field i weight` lines. `#` starts a comment.
    """
    fields = {}
    edges = []
    node_fields = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        match = _KEY_VALUE.match(line)
        if match:
            key, value = match.group(1).lower(), match.group(2)
            if key in fields:
                raise ParseError(source, lineno, f'duplicate key {key!r}')
            fields[key] = (value, lineno)
            continue
        parts = line.split()
        try:
            if parts[0] == 'field' and len(parts) == 3:
                node_fields[int(parts[1])] = (float(parts[2]), lineno)
            elif len(parts) == 3:
                edges.append(((int(parts[0]), int(parts[1])), float(parts[2]), lineno))
            else:
                raise ValueError('expected `key = value`, `u v weight` or `field i weight`')
        except ValueError as e:
            raise ParseError(source, lineno, str(e)) from None

    def get(key, cast, required=True):
        if key not in fields:
            if required:
                raise ParseError(source, len(text.splitlines()) or 1, f'missing key {key!r}')
            return None
        value, lineno = fields[key]
        try:
            return cast(value)
        except ValueError:
            raise ParseError(source, lineno, f'bad value for {key!r}: {value!r}') from None

    model_type = get('type', str)
    if model_type not in MODEL_TYPES:
        raise ParseError(source, fields['type'][1], f'unknown model type {model_type!r}')

    try:
        if model_type == 'curie_weiss':
            return build_curie_weiss(get('n', int), get('alpha', float))
        if model_type == 'torus_grid':
            return build_torus_grid(get('k', int), get('alpha', float))
    except InvalidModelError as e:
        raise ParseError(source, fields['type'][1], str(e)) from None

    n = get('n', int)
    graph_edges = []
    weights = []
    seen = set()
    for (u, v), w, lineno in edges:
        key = (min(u, v), max(u, v))
        if u == v or not (0 <= u < n and 0 <= v < n) or key in seen:
            raise ParseError(source, lineno, f'invalid edge ({u}, {v}) for n={n}')
        seen.add(key)
        graph_edges.append((u, v))
        weights.append(w)
    node_weights = np.zeros(n)
    for i, (w, lineno) in node_fields.items():
        if not 0 <= i < n:
            raise ParseError(source, lineno, f'field on node {i} outside [0, {n})')
        node_weights[i] = w
    try:
        return IsingModel(Graph(n, graph_edges), weights, node_weights, name=os.path.basename(source))
    except InvalidModelError as e:
        raise ParseError(source, fields['type'][1], str(e)) from None


def load_model_file(path: str) -> IsingModel:
    with open(path, encoding='utf-8') as fh:
        return parse_model_text(fh.read(), source=path)
