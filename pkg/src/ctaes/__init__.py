"""Constant-time T-table AES by load-use scheduling, with a cycle model and
a cache-timing attack harness to check it."""

from .aes import (TTableSet, KeySchedule, encrypt_reference, encrypt_ttable, encrypt_ttable_trace,
                  expand_key, generate_tables)
from .micro_ir import MicroOp, MicroProgram, OpKind, decompose_encryption, interpret
from .scheduler import Schedule, build_queues, schedule, schedule_program, sequential, verify_gaps
from .timing_sim import CacheConfig, LatencyModel, pattern_from_data, simulate, timing_spread
from .attack import build_profile, candidate_sets, correlate, run_attack

__version__ = "0.1.0"
