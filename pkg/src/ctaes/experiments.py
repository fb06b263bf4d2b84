"""Depth sweeps and profile exports built from the other modules."""

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .aes import as_block
from .attack import SimulatedOracle, run_attack
from .micro_ir import decompose_encryption
from .scheduler import schedule_program, sequential, verify_gaps
from .timing_sim import CacheConfig, LatencyModel, TimingModel, simulate, timing_spread

log = logging.getLogger(__name__)

DEFAULT_DEPTHS = (6, 8, 10, 12, 14)
# demo secret for simulated servers; any key works
DEFAULT_KEY = bytes.fromhex("2b7e151628aed2a6abf7158809cf4f3c")


class SweepError(Exception):
    def __init__(self, depth, message):
        super().__init__(f"depth {depth}: {message}")
        self.depth = depth


@dataclass
class ExperimentConfig:
    depths: tuple = DEFAULT_DEPTHS
    lm: LatencyModel = field(default_factory=LatencyModel)
    line_size: int = 64
    packets_per_cell: int = 1024
    packet_len: int = 800
    margin: float = 1.0
    seed: int = 0
    samples: int = 10_000
    key: bytes = DEFAULT_KEY
    out_dir: Path = None

    def __post_init__(self):
        self.key = as_block(self.key)
        if not self.depths or min(self.depths) < 1:
            raise ValueError("depths must be positive")
        CacheConfig(self.line_size)  # validates
        if self.packets_per_cell < 1:
            raise ValueError("packets_per_cell must be >= 1")

    @property
    def cache(self) -> CacheConfig:
        return CacheConfig(self.line_size)


@dataclass
class DepthResult:
    depth: int
    slot_count: int
    nop_count: int
    min_gap: int
    gaps_ok: bool
    cycles_all_hit: int
    overhead: float
    spread_min: int
    spread_max: int
    key_space_log2: float
    key_space: float


@dataclass
class ReportBundle:
    unscheduled_cycles_all_hit: int
    unscheduled_spread: tuple
    unprotected_key_space_log2: float
    unprotected_contained: list
    rows: list
    files: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(r.gaps_ok for r in self.rows)


def model_for(schedule, cfg: ExperimentConfig) -> TimingModel:
    return TimingModel(schedule, cfg.lm, cfg.cache, cfg.packet_len)


def simulated_attack(schedule, cfg: ExperimentConfig, packets_per_cell=None):
    oracle = SimulatedOracle(cfg.key, model_for(schedule, cfg))
    return run_attack(oracle, packets_per_cell or cfg.packets_per_cell, cfg.packet_len,
                      cfg.margin, true_key=cfg.key, seed=cfg.seed)


def sweep(cfg: ExperimentConfig) -> ReportBundle:
    program = decompose_encryption()
    base = sequential(program)
    m = sum(op.is_memory for op in program.ops)
    base_cycles = simulate(base, np.zeros(m, bool), cfg.lm)
    base_spread = timing_spread(base, cfg.lm, cfg.samples, cfg.seed)
    log.info("unprotected: %d cycles all-hit, spread %d..%d", base_cycles, base_spread.min, base_spread.max)
    unprot = simulated_attack(base, cfg)
    files = []
    if cfg.out_dir is not None:
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        files.append(out / "profile_unprotected.csv")
        files[-1].write_text(unprot.attack.to_csv())

    rows = []
    for depth in cfg.depths:
        try:
            sched = schedule_program(program, depth)
        except Exception as exc:
            raise SweepError(depth, f"scheduling failed: {exc}") from exc
        report = verify_gaps(sched, depth)
        spread = timing_spread(sched, cfg.lm, cfg.samples, cfg.seed)
        cycles = simulate(sched, np.zeros(m, bool), cfg.lm)
        attack = simulated_attack(sched, cfg)
        rows.append(DepthResult(
            depth=depth,
            slot_count=sched.slot_count,
            nop_count=sched.nop_count,
            min_gap=int(report.min_load_use_gap),
            gaps_ok=report.passed,
            cycles_all_hit=cycles,
            overhead=cycles / base_cycles,
            spread_min=spread.min,
            spread_max=spread.max,
            key_space_log2=attack.estimate.size_log2,
            key_space=attack.estimate.size_decimal,
        ))
        log.info("depth %d: %s", depth, rows[-1])
        if cfg.out_dir is not None:
            files.append(Path(cfg.out_dir) / f"profile_protected_d{depth}.csv")
            files[-1].write_text(attack.attack.to_csv())

    bundle = ReportBundle(base_cycles, (base_spread.min, base_spread.max),
                          unprot.estimate.size_log2, unprot.contained, rows, files)
    if cfg.out_dir is not None:
        path = Path(cfg.out_dir) / "sweep.csv"
        write_sweep_csv(bundle, path)
        files.insert(0, path)
    return bundle


SWEEP_COLUMNS = ["depth", "slot_count", "nop_count", "min_gap", "gaps_ok", "cycles_all_hit",
                 "unscheduled_cycles_all_hit", "overhead", "spread_min", "spread_max",
                 "key_space_log2", "key_space"]


def write_sweep_csv(bundle: ReportBundle, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for r in bundle.rows:
            w.writerow([r.depth, r.slot_count, r.nop_count, r.min_gap, int(r.gaps_ok),
                        r.cycles_all_hit, bundle.unscheduled_cycles_all_hit, f"{r.overhead:.6f}",
                        r.spread_min, r.spread_max, f"{r.key_space_log2:.6f}", f"{r.key_space:.6e}"])


def profile_csv(mode: str, packets_per_cell: int, path, depth: int = 6,
                cfg: ExperimentConfig = None) -> Path:
    """Attack-phase timing profile of a simulated server, as CSV."""
    cfg = cfg or ExperimentConfig(packets_per_cell=packets_per_cell)
    program = decompose_encryption()
    if mode == "protected":
        sched = schedule_program(program, depth)
    elif mode == "unprotected":
        sched = sequential(program)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    report = simulated_attack(sched, cfg, packets_per_cell)
    path = Path(path)
    path.write_text(report.attack.to_csv())
    return path
