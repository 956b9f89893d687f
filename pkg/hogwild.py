"""
HOGWILD!-Gibbs: read-delay models, a deterministic stale-read simulator over
a versioned trace, and a lock-free multi-threaded engine that measures the
delays it actually sees.

Logical time is the number of published writes. A read of node j used by
the write at time t+1 sees the state after t - tau writes, tau being the
read's delay; times before 0 clamp to the initial state.
"""
from __future__ import annotations

import bisect
import logging
import math
import sys
import threading
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd

import config
from errors import BoundsError, DimensionError, EmptyInputError, InvalidArgumentError
from model import Configuration, IsingModel, p_plus_from_field, site_field
from sampler import (
    DRAW_BLOCK,
    RngStream,
    _initial_states,
    map_chains,
    pick_site,
    threshold_spin,
)

logger = logging.getLogger(__name__)

DELAY_FAMILIES = ('constant', 'uniform_int', 'geometric')


# ================== Delay models ==================

@dataclass(frozen=True)
class DelayModel:
    """
    Distribution of read delays.

    constant(c): every delay is c. uniform_int(m): uniform on 0..m.
    geometric(p, cap): P(k) proportional to p (1-p)^k on 0..cap.
    With `shared`, one delay per step applies to every read of that step.
    Every family is sampled by inversion from uniforms of the delay stream,
    so the draws never see the chain state.
    """
    family: str
    param: float
    cap: int | None = None
    shared: bool = False

    def __post_init__(self):
        if self.family not in DELAY_FAMILIES:
            raise InvalidArgumentError(f'unknown delay family {self.family!r}')
        if self.family in ('constant', 'uniform_int'):
            if self.param < 0 or int(self.param) != self.param:
                raise InvalidArgumentError(f'{self.family} needs a nonnegative integer, got {self.param}')
        else:
            if not 0 < self.param <= 1:
                raise InvalidArgumentError(f'geometric p must lie in (0, 1], got {self.param}')
            if self.cap is None or self.cap < 0 or int(self.cap) != self.cap:
                raise InvalidArgumentError(f'geometric delays need an integer cap >= 0, got {self.cap}')

    @classmethod
    def constant(cls, c: int, shared: bool = False) -> 'DelayModel':
        return cls('constant', int(c), shared=shared)

    @classmethod
    def uniform_int(cls, m: int, shared: bool = False) -> 'DelayModel':
        return cls('uniform_int', int(m), shared=shared)

    @classmethod
    def geometric(cls, p: float, cap: int, shared: bool = False) -> 'DelayModel':
        return cls('geometric', float(p), int(cap), shared=shared)

    @classmethod
    def geometric_with_mean(cls, tau: float, cap: int | None = None, shared: bool = False) -> 'DelayModel':
        """Geometric on {0, 1, ...} with untruncated mean tau, cut at cap (default ceil(10 tau))."""
        if tau < 0:
            raise InvalidArgumentError(f'mean delay must be >= 0, got {tau}')
        if tau == 0:
            return cls.constant(0, shared=shared)
        cap = math.ceil(10 * tau) if cap is None else cap
        return cls.geometric(1.0 / (1.0 + tau), cap, shared=shared)

    @property
    def max_delay(self) -> int:
        if self.family == 'geometric':
            return int(self.cap)
        return int(self.param)

    @property
    def mean(self) -> float:
        if self.family == 'constant':
            return float(self.param)
        if self.family == 'uniform_int':
            return self.param / 2.0
        p, cap = self.param, self.cap
        q = 1.0 - p
        if q == 0.0:
            return 0.0
        tail = q ** (cap + 1)
        return q / p - (cap + 1) * tail / (1.0 - tail)

    def draw(self, gen: np.random.Generator, size) -> np.ndarray:
        if self.family == 'constant':
            return np.full(size, int(self.param), dtype=np.int64)
        u = gen.random(size)
        if self.family == 'uniform_int':
            m = int(self.param)
            return np.minimum((u * (m + 1)).astype(np.int64), m)
        q = 1.0 - self.param
        if q == 0.0:
            return np.zeros(size, dtype=np.int64)
        norm = 1.0 - q ** (self.cap + 1)
        k = np.floor(np.log1p(-u * norm) / math.log(q)).astype(np.int64)
        return np.clip(k, 0, self.cap)

    def slots(self, width: int) -> int:
        """Delays drawn per step when `width` reads are made."""
        return 1 if self.shared else width


def sample_delays(dm: DelayModel, nodes: Sequence[int], rng: RngStream) -> np.ndarray:
    """One delay per requested node from the delay stream; equal across nodes when shared."""
    width = len(nodes)
    delays = dm.draw(rng.delays, dm.slots(width))
    return np.broadcast_to(delays, (width,)).copy() if dm.shared else delays


# ================== Versioned trace ==================

class VersionedTrace:
    """
    Append-only write history with reads of the state as of any past step.

    Each node keeps (write_step, value) pairs seeded with (0, initial value).
    Full snapshots are also kept in a ring of `horizon + 1` slots so a step
    can read many nodes at different past times with one gather. With a
    horizon, entries no read within the horizon can reach are dropped.
    """

    def __init__(self, initial: Configuration, horizon: int | None = None):
        if horizon is not None and horizon < 0:
            raise InvalidArgumentError(f'horizon must be >= 0, got {horizon}')
        self.n = len(initial)
        self.horizon = horizon
        self.t = 0
        self._current = initial.spins.copy()
        self._history = [[(0, int(v))] for v in initial.spins]
        capacity = horizon + 1 if horizon is not None else 64
        self._ring = np.empty((capacity, self.n), dtype=np.int8)
        self._ring[0] = self._current

    def _slot(self, s):
        return s % self._ring.shape[0] if self.horizon is not None else s

    def _check_times(self, s: np.ndarray) -> np.ndarray:
        s = np.maximum(s, 0)
        if np.any(s > self.t):
            raise BoundsError(f'read after current step {self.t}')
        if self.horizon is not None and np.any(s < self.t - self.horizon):
            raise BoundsError(f'read before retained window (step {self.t}, horizon {self.horizon})')
        return s

    def read_at(self, i: int, s: int) -> int:
        """Value of node i after s writes; negative s reads the initial state."""
        if not 0 <= i < self.n:
            raise BoundsError(f'node {i} outside [0, {self.n})')
        s = int(self._check_times(np.asarray(s)))
        return int(self._ring[self._slot(s), i])

    def read_many(self, nodes: np.ndarray, times: np.ndarray) -> np.ndarray:
        times = self._check_times(np.asarray(times))
        return self._ring[self._slot(times), nodes]

    def last_write(self, i: int, s: int) -> int:
        """Step of the last write to i at or before s (0 for the initial value)."""
        history = self._history[i]
        pos = bisect.bisect_right(history, (max(s, 0), 2)) - 1
        if pos < 0:
            raise BoundsError(f'history of node {i} no longer reaches step {s}')
        return history[pos][0]

    def history(self, i: int) -> list[tuple[int, int]]:
        return list(self._history[i])

    def write(self, i: int, value: int) -> None:
        self.t += 1
        self._current[i] = value
        history = self._history[i]
        history.append((self.t, int(value)))
        if self.horizon is not None:
            cutoff = self.t - self.horizon
            drop = 0
            while drop + 1 < len(history) and history[drop + 1][0] <= cutoff:
                drop += 1
            if drop:
                del history[:drop]
        elif self.t >= self._ring.shape[0]:
            grown = np.empty((2 * self._ring.shape[0], self.n), dtype=np.int8)
            grown[:self._ring.shape[0]] = self._ring
            self._ring = grown
        self._ring[self._slot(self.t)] = self._current

    def current(self) -> Configuration:
        return Configuration(self._current.copy())


# ================== Delay logs ==================

@dataclass(frozen=True)
class WriteRecord:
    """One published hardware write with the values it read (padded neighbour row) and its threshold draw."""
    order: int
    site: int
    values: tuple[int, ...]
    u: float


@dataclass
class DelayLog:
    """(step, node, delay) per read, plus optional write records for replay."""
    steps: list[int] = field(default_factory=list)
    nodes: list[int] = field(default_factory=list)
    delays: list[int] = field(default_factory=list)
    writes: list[WriteRecord] = field(default_factory=list)

    def append(self, step: int, node: int, delay: int) -> None:
        self.steps.append(step)
        self.nodes.append(node)
        self.delays.append(delay)

    def __len__(self):
        return len(self.delays)

    @classmethod
    def merge(cls, logs: Sequence['DelayLog']) -> 'DelayLog':
        """Combine per-thread logs, ordered by write index then node."""
        rows = sorted(
            (s, j, d) for log in logs for s, j, d in zip(log.steps, log.nodes, log.delays))
        merged = cls()
        for s, j, d in rows:
            merged.append(s, j, d)
        merged.writes = sorted((w for log in logs for w in log.writes), key=lambda w: w.order)
        return merged

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({'write_index': self.steps, 'node': self.nodes, 'delay': self.delays},
                            columns=['write_index', 'node', 'delay'])

    def to_csv(self, path: str) -> None:
        self.to_frame().to_csv(path, index=False)


def estimate_tau(log: DelayLog) -> float:
    """Average observed read delay."""
    if len(log) == 0:
        raise EmptyInputError('delay log is empty')
    return float(np.mean(log.delays))


# ================== Simulated engine ==================

def _publish_update(model: IsingModel, trace: VersionedTrace, i: int, values: np.ndarray, u: float) -> int:
    """Threshold site i against its conditional given the read neighbour values and append the write."""
    spin = threshold_spin(u, p_plus_from_field(site_field(model, i, values)))
    trace.write(i, spin)
    return spin


def hogwild_step_simulated(model: IsingModel, trace: VersionedTrace, dm: DelayModel, rng: RngStream,
                           log: DelayLog | None = None) -> tuple[int, VersionedTrace]:
    """One HOGWILD! update with neighbour values read at t - tau from the trace."""
    if trace.n != model.n:
        raise DimensionError(f'trace has n={trace.n}, model has n={model.n}')
    u_site, u_spin = rng.spins.random(2)
    i = pick_site(u_site, model.n)
    row = model.neighbor_index[i]
    delays = sample_delays(dm, row, rng)
    values = trace.read_many(row, trace.t - delays)
    if log is not None:
        for j, d in zip(row[:model.degrees[i]], delays):
            log.append(trace.t + 1, int(j), int(d))
    _publish_update(model, trace, i, values, u_spin)
    return i, trace


def run_hogwild_simulated(model: IsingModel, steps: int, dm: DelayModel, init: Configuration | None,
                          rng: RngStream, keep_history: bool = False,
                          log: DelayLog | None = None) -> tuple[Configuration, VersionedTrace]:
    """
    Run `steps` simulated HOGWILD! updates.

    The trace retains only what the delay cap can reach unless
    keep_history is set.
    """
    if steps < 0:
        raise InvalidArgumentError(f'steps must be >= 0, got {steps}')
    if init is None:
        init = Configuration.random(model.n, rng.init)
    model.check_configuration(init)
    trace = VersionedTrace(init, horizon=None if keep_history else dm.max_delay)
    for _ in range(steps):
        hogwild_step_simulated(model, trace, dm, rng, log)
    logger.debug('simulated hogwild: %d steps on %r with %s', steps, model, dm)
    return trace.current(), trace


def _hogwild_chunk(model: IsingModel, streams: Sequence[RngStream], steps: int, dm: DelayModel) -> np.ndarray:
    """Vectorized simulator over independent chains; row c follows streams[c] exactly."""
    X0 = _initial_states(model, streams)
    count, n = X0.shape
    window = dm.max_delay + 1
    ring = np.empty((count, window, n), dtype=np.int8)
    ring[:, 0] = X0
    rows = np.arange(count)
    index = model.neighbor_index
    weight = model.neighbor_weight
    theta = model.node_weights
    width = dm.slots(model.max_degree)
    done = 0
    while done < steps:
        block = min(DRAW_BLOCK, steps - done)
        draws = np.stack([s.spins.random((block, 2)) for s in streams])
        delays = np.stack([dm.draw(s.delays, (block, width)) for s in streams])
        for k in range(block):
            t = done + k
            sites = np.minimum((draws[:, k, 0] * n).astype(np.int64), n - 1)
            slots = np.maximum(t - delays[:, k, :], 0) % window
            values = ring[rows[:, None], slots, index[sites]]
            field_ = theta[sites] + (weight[sites] * values).sum(axis=1)
            cur, nxt = t % window, (t + 1) % window
            if nxt != cur:
                ring[:, nxt] = ring[:, cur]
            ring[rows, nxt, sites] = np.where(draws[:, k, 1] < p_plus_from_field(field_), 1, -1)
        done += block
    return ring[:, steps % window].copy()


def run_hogwild_batch(model: IsingModel, count: int, steps: int, dm: DelayModel, rng: RngStream,
                      workers: int | None = None) -> np.ndarray:
    """Final states of `count` independent simulated HOGWILD! runs, (count, n) int8."""
    if count < 1:
        raise InvalidArgumentError(f'count must be >= 1, got {count}')
    workers = config.WORKERS if workers is None else workers
    logger.debug('hogwild batch: %d runs x %d steps on %r with %s', count, steps, model, dm)
    return map_chains(_hogwild_chunk, model, rng.spawn(count), workers, steps, dm)


# ================== Hardware engine ==================

class WriteClock:
    """
    Global write counter.

    Taking the next stamp and storing the spin happen together, so stamp
    order is the order in which writes become visible. Readers load `value`
    without synchronization.
    """

    def __init__(self, limit: int):
        self.value = 0
        self.limit = limit
        self._lock = threading.Lock()

    def publish(self, cells: list, i: int, spin: int) -> int | None:
        with self._lock:
            if self.value >= self.limit:
                return None
            self.value += 1
            cells[i] = spin
            return self.value


class _Worker(threading.Thread):

    def __init__(self, model, cells, clock, stream, start_gun, record_writes):
        super().__init__(daemon=True)
        self.model = model
        self.cells = cells
        self.clock = clock
        self.stream = stream
        self.start_gun = start_gun
        self.record_writes = record_writes
        self.log = DelayLog()

    def run(self):
        model, cells, clock = self.model, self.cells, self.clock
        n = model.n
        index = model.neighbor_index
        gen = self.stream.spins
        self.start_gun.wait()
        while True:
            u_site, u_spin = gen.random(2)
            i = pick_site(u_site, n)
            row = index[i]
            degree = model.degrees[i]
            snapshots = [0] * degree
            values = np.zeros(row.size, dtype=np.int8)
            for k, j in enumerate(row):
                if k < degree:
                    snapshots[k] = clock.value
                values[k] = cells[j]
            p = p_plus_from_field(site_field(model, i, values))
            order = clock.publish(cells, i, threshold_spin(u_spin, p))
            if order is None:
                break
            for k in range(degree):
                self.log.append(order, int(row[k]), order - 1 - snapshots[k])
            if self.record_writes:
                self.log.writes.append(WriteRecord(order, i, tuple(int(v) for v in values), float(u_spin)))


def run_hogwild_hardware(model: IsingModel, threads: int, total_writes: int, seed: int,
                         init: Configuration | None = None, record_writes: bool = False,
                         switch_interval: float | None = None, stream: int = 0) -> tuple[Configuration, DelayLog]:
    """
    Lock-free multi-threaded Gibbs on a shared spin list.

    Each worker picks a site, reads its neighbours without locks, draws the
    new spin and publishes it through the write clock. A read's delay is
    the number of writes published between that read and the write using
    it. Not deterministic across runs.
    """
    if threads < 1:
        raise InvalidArgumentError(f'threads must be >= 1, got {threads}')
    if total_writes < 0:
        raise InvalidArgumentError(f'total_writes must be >= 0, got {total_writes}')
    root = RngStream(seed, stream)
    if init is None:
        init = Configuration.random(model.n, root.init)
    model.check_configuration(init)
    cells = [int(v) for v in init.spins]
    clock = WriteClock(total_writes)
    start_gun = threading.Event()
    workers = [_Worker(model, cells, clock, stream, start_gun, record_writes) for stream in root.spawn(threads)]

    switch_interval = config.SWITCH_INTERVAL if switch_interval is None else switch_interval
    previous = sys.getswitchinterval()
    if switch_interval:
        sys.setswitchinterval(switch_interval)
    try:
        for w in workers:
            w.start()
        start_gun.set()
        for w in workers:
            w.join()
    finally:
        sys.setswitchinterval(previous)

    log = DelayLog.merge([w.log for w in workers])
    logger.debug('hardware hogwild: %d threads, %d writes, %d reads logged', threads, clock.value, len(log))
    return Configuration(np.array(cells, dtype=np.int8)), log


def replay_writes(model: IsingModel, initial: Configuration, writes: Sequence[WriteRecord]) -> Configuration:
    """
    Re-run logged writes in stamp order through the simulated engine's
    update, using each record's read values and uniform; returns the final state.
    """
    trace = VersionedTrace(initial, horizon=0)
    for rec in sorted(writes, key=lambda w: w.order):
        _publish_update(model, trace, rec.site, np.asarray(rec.values, dtype=np.int8), rec.u)
    return trace.current()


def delay_probe(model: IsingModel, threads: int, seed: int, min_reads: int | None = None,
                switch_interval: float | None = None, writes: int | None = None) -> tuple[float, int]:
    """
    Mean observed delay over at least `min_reads` logged reads; returns (tau, reads).

    Runs repeat with `writes` writes each (one stream per round) until the
    read target is met, so every model size sees the same run length.
    """
    min_reads = config.MIN_LOGGED_READS if min_reads is None else min_reads
    writes = config.PROBE_WRITES if writes is None else writes
    if writes < threads:
        raise InvalidArgumentError(f'writes per round ({writes}) must be >= threads ({threads})')
    logs = []
    reads = 0
    round_ = 0
    while reads < min_reads or not logs:
        _, log = run_hogwild_hardware(model, threads, writes, seed, switch_interval=switch_interval, stream=round_)
        logs.append(log)
        reads += len(log)
        round_ += 1
        if reads == 0:
            raise EmptyInputError(f'no reads logged on {model!r}; the model has no edges')
    log = DelayLog.merge(logs)
    logger.debug('delay probe: %d rounds of %d writes, %d reads', round_, writes, reads)
    return estimate_tau(log), len(log)
