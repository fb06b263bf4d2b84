"""In-order, single-issue cycle model of a schedule under cache hits/misses.

An instruction issues ``exec`` cycles after the previous one unless one of
its operands is still in flight.  A load issued at cycle ``c`` delivers its
value at ``c + hit`` or ``c + miss``; a consumer issuing at or after that
cycle does not stall.  So a load whose first use is ``>= miss`` slots away
can never stall, whatever the cache does.

Hit/miss patterns are boolean arrays (True = miss) indexed by the program
order of the memory ops, i.e. the T-table lookup trace order.
"""

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .aes import SBOX_TABLE, KeySchedule, encrypt_ttable_batch, encrypt_ttable_trace, trace_layout


class SimulationError(Exception):
    pass


@dataclass(frozen=True)
class LatencyModel:
    exec: int = 1
    hit: int = 2
    miss: int = 6

    def __post_init__(self):
        if not 1 <= self.exec <= self.hit < self.miss:
            raise ValueError(f"need 1 <= exec <= hit < miss, got {self}")

    @classmethod
    def parse(cls, text: str) -> "LatencyModel":
        """From ``"exec,hit,miss"``."""
        parts = [int(x) for x in text.split(",")]
        if len(parts) != 3:
            raise ValueError(f"expected exec,hit,miss, got {text!r}")
        return cls(*parts)


# --- simulation


@dataclass(frozen=True)
class _Plan:
    n_slots: int
    n_mem: int
    events: tuple  # (slot, memory ranks read, own memory rank or None)


def _plan(schedule) -> _Plan:
    ranks = schedule.memory_ranks()
    last_def = {}
    events = []
    for i, op in enumerate(schedule.slots):
        reads = tuple(sorted({ranks[last_def[s]] for s in op.srcs
                              if s in last_def and ranks[last_def[s]] is not None}))
        if reads or ranks[i] is not None:
            events.append((i, reads, ranks[i]))
        if op.dst is not None:
            last_def[op.dst] = i
    n_mem = sum(r is not None for r in ranks)
    return _Plan(len(schedule.slots), n_mem, tuple(events))


_plans = {}


def _plan_cached(schedule) -> _Plan:
    # keyed by identity: hashing a long schedule costs more than a replay
    hit = _plans.get(id(schedule))
    if hit is not None and hit[0] is schedule:
        return hit[1]
    if len(_plans) >= 64:
        _plans.clear()
    plan = _plan(schedule)
    _plans[id(schedule)] = (schedule, plan)
    return plan


def memory_op_count(schedule) -> int:
    return _plan_cached(schedule).n_mem


def simulate_batch(schedule, patterns, lm: LatencyModel = LatencyModel()) -> np.ndarray:
    """Cycle counts for a ``(B, M)`` array of hit/miss patterns (True = miss)."""
    plan = _plan_cached(schedule)
    patterns = np.asarray(patterns, dtype=bool)
    if patterns.ndim != 2 or patterns.shape[1] != plan.n_mem:
        raise SimulationError(
            f"pattern shape {patterns.shape} does not match {plan.n_mem} memory ops"
        )
    if plan.n_slots == 0:
        return np.zeros(len(patterns), dtype=np.int64)
    ready_after = np.where(patterns, lm.miss, lm.hit).astype(np.int64)
    load_issue = np.zeros_like(ready_after)
    cur = np.full(len(patterns), -lm.exec, dtype=np.int64)  # issue cycle of previous slot
    last = -1
    for slot, reads, rank in plan.events:
        cur = cur + lm.exec * (slot - last)
        for r in reads:
            np.maximum(cur, load_issue[:, r] + ready_after[:, r], out=cur)
        if rank is not None:
            load_issue[:, rank] = cur
        last = slot
    return cur + lm.exec * (plan.n_slots - last)


def simulate(schedule, pattern, lm: LatencyModel = LatencyModel()) -> int:
    """Cycle count of one schedule under one hit/miss pattern."""
    plan = _plan_cached(schedule)
    pattern = [bool(x) for x in pattern]
    if len(pattern) != plan.n_mem:
        raise SimulationError(f"pattern length {len(pattern)} != {plan.n_mem} memory ops")
    if plan.n_slots == 0:
        return 0
    ready = [0] * plan.n_mem  # cycle at which each load's value is usable
    cur, last = -lm.exec, -1
    for slot, reads, rank in plan.events:
        cur += lm.exec * (slot - last)
        for r in reads:
            if ready[r] > cur:
                cur = ready[r]
        if rank is not None:
            ready[rank] = cur + (lm.miss if pattern[rank] else lm.hit)
        last = slot
    return cur + lm.exec * (plan.n_slots - last)


@dataclass(frozen=True)
class Spread:
    min: int
    max: int
    variance: float
    n_patterns: int
    exhaustive: bool

    @property
    def width(self) -> int:
        return self.max - self.min


def timing_spread(schedule, lm: LatencyModel = LatencyModel(), samples: int = 10_000,
                  seed: int = 0, chunk: int = 4096) -> Spread:
    """Cycle-count spread over all-hit, all-miss and random patterns.

    With at most 12 memory ops every pattern is enumerated instead.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    m = memory_op_count(schedule)
    if m <= 12:
        pats = np.array(list(itertools.product([False, True], repeat=m)), dtype=bool).reshape(2 ** m, m)
        cycles = simulate_batch(schedule, pats, lm)
        exhaustive = True
    else:
        rng = np.random.default_rng(seed)
        parts = [simulate_batch(schedule, np.zeros((1, m), bool), lm),
                 simulate_batch(schedule, np.ones((1, m), bool), lm)]
        left = samples
        while left:
            n = min(chunk, left)
            parts.append(simulate_batch(schedule, rng.random((n, m)) < 0.5, lm))
            left -= n
        cycles = np.concatenate(parts)
        exhaustive = False
    return Spread(int(cycles.min()), int(cycles.max()), float(cycles.var()), len(cycles), exhaustive)


# --- cache model


@dataclass(frozen=True)
class MemoryLayout:
    """Byte addresses of the tables and of the request buffers.

    Te0..Te3 sit back to back from 0, the S-box after them.  The buffer
    bases only matter for the warm-cache model, where the request handler's
    copies evict whatever table lines share their cache sets.
    """

    sbox_base: int = 4096 + 5 * 64
    in_base: int = 0x10000 + 19 * 64
    workarea_base: int = 0x20000 + 37 * 64
    out_base: int = 0x30000 + 52 * 64

    def table_address(self, table: int, index):
        if table == SBOX_TABLE:
            return self.sbox_base + index
        return 1024 * table + 4 * index


@dataclass(frozen=True)
class CacheConfig:
    """Direct-mapped data cache."""

    line_size: int = 64
    cache_size: int = 4096
    layout: MemoryLayout = MemoryLayout()

    def __post_init__(self):
        if self.line_size < 4 or 1024 % self.line_size:
            raise ValueError(f"line size must divide 1024, got {self.line_size}")
        if self.cache_size % self.line_size or self.cache_size < 1024:
            raise ValueError(f"bad cache size {self.cache_size}")

    @property
    def entries_per_line(self) -> int:
        return self.line_size // 4

    @property
    def n_sets(self) -> int:
        return self.cache_size // self.line_size

    def cold_state(self) -> np.ndarray:
        return np.full(self.n_sets, -1, dtype=np.int64)


def _touch(state, cfg: CacheConfig, start: int, length: int) -> None:
    for line in range(start // cfg.line_size, (start + length - 1) // cfg.line_size + 1):
        state[line % cfg.n_sets] = line


@lru_cache(maxsize=32)
def _window_state(cfg, packet_len):
    state = _window_state_uncached(cfg, packet_len)
    state.setflags(write=False)
    return state


def window_state(cfg: CacheConfig, packet_len: int) -> np.ndarray:
    return _window_state(cfg, packet_len)


def _window_state_uncached(cfg: CacheConfig, packet_len: int) -> np.ndarray:
    """Cache contents when the encryption starts inside the measurement window.

    Previous requests leave every table line resident, the S-box last (it is
    used by the final round).  Then this request zeroes the 40-byte reply,
    reads the packet and copies bytes 16..len to the work area.
    """
    lay = cfg.layout
    state = cfg.cold_state()
    for t in range(4):
        _touch(state, cfg, lay.table_address(t, 0), 1024)
    _touch(state, cfg, lay.sbox_base, 256)
    _touch(state, cfg, lay.out_base, 40)
    _touch(state, cfg, lay.in_base, packet_len)
    if packet_len > 16:
        _touch(state, cfg, lay.workarea_base + 16, packet_len - 16)
    return state


def pattern_from_trace(trace, cfg: CacheConfig = CacheConfig(), start=None) -> np.ndarray:
    """Replay ``(table, index)`` lookups through the cache.  ``start`` is the
    initial per-set state; None means a cold cache."""
    state = [int(x) for x in (cfg.cold_state() if start is None else start)]
    addr, size, n_sets = cfg.layout.table_address, cfg.line_size, cfg.n_sets
    out = []
    for table, index in trace:
        line = addr(table, index) // size
        s = line % n_sets
        out.append(state[s] != line)
        state[s] = line
    return np.array(out, dtype=bool)


def pattern_from_data(pt, ks: KeySchedule, cfg: CacheConfig = CacheConfig(), start=None) -> np.ndarray:
    """Hit/miss pattern of one T-table encryption (cold cache unless ``start``)."""
    _, trace = encrypt_ttable_trace(pt, ks)
    return pattern_from_trace(trace, cfg, start)


def patterns_from_indices(indices: np.ndarray, cfg: CacheConfig = CacheConfig(), start=None) -> np.ndarray:
    """Vectorised replay of ``(N, 160)`` lookup indices from
    :func:`encrypt_ttable_batch`; returns ``(N, 160)`` miss flags."""
    indices = np.asarray(indices, dtype=np.int64)
    n = len(indices)
    init = cfg.cold_state() if start is None else np.asarray(start, dtype=np.int64)
    state = np.repeat(init[None, :], n, axis=0)
    rows = np.arange(n)
    out = np.empty(indices.shape, dtype=bool)
    for i, table in enumerate(trace_layout()):
        line = cfg.layout.table_address(table, indices[:, i]) // cfg.line_size
        s = line % cfg.n_sets
        out[:, i] = state[rows, s] != line
        state[rows, s] = line
    return out


@dataclass(frozen=True)
class TimingModel:
    """Cycles for encrypting a block: cache replay feeding the cycle model.

    ``packet_len`` selects the warm-cache start state of a request with that
    length; ``None`` uses a cold cache.  ``offset`` stands for the
    non-encryption work inside the measured window.
    """

    schedule: object
    lm: LatencyModel = LatencyModel()
    cache: CacheConfig = CacheConfig()
    packet_len: int = None
    offset: int = 0

    def start_state(self):
        if self.packet_len is None:
            return None
        return window_state(self.cache, self.packet_len)

    def cycles_batch(self, pts: np.ndarray, ks: KeySchedule) -> np.ndarray:
        _, idx = encrypt_ttable_batch(pts, ks, trace=True)
        pats = patterns_from_indices(idx, self.cache, self.start_state())
        return simulate_batch(self.schedule, pats, self.lm) + self.offset

    def cycles(self, pt, ks: KeySchedule) -> int:
        """Scalar path, used per request by the simulated server clock."""
        _, trace = encrypt_ttable_trace(pt, ks)
        pat = pattern_from_trace(trace, self.cache, self.start_state())
        return simulate(self.schedule, pat, self.lm) + self.offset
