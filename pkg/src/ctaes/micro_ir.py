"""Straight-line micro-operations for T-table AES and their interpreter.

Each round output word is computed by an 18-op fragment of the shape::

    u00 = COPY(s0)          u01 = COPY(s1)   ...   u03 = COPY(s3)
    u00 = SHR[24](u00)      u01 = SHR[16](u01)     u03 = MASK[255](u03)
    v00 = TLOAD[0](u00)     u01 = MASK[255](u01)   v03 = TLOAD[3](u03)
    t0 = RK_XOR[4](v00)     v01 = TLOAD[1](u01)    t0 = XOR_ACC(t0, v03)
                            t0 = XOR_ACC(t0, v01)

Every op carries a queue tag ``r<round>.<word>`` naming the output word it
feeds.  Ops of different tags within one round never read each other's
results, which is what lets the scheduler interleave them.
"""

import enum
import re
from dataclasses import dataclass

import numpy as np

from .aes import N_ROUNDS, KeySchedule, TTableSet, generate_tables, round_key_columns


class IRError(Exception):
    """Malformed micro-program: unknown register, bad operand, parse failure."""


class OpKind(enum.Enum):
    COPY = "COPY"
    SHR = "SHR"
    MASK = "MASK"
    TLOAD = "TLOAD"
    SLOAD = "SLOAD"
    RK_XOR = "RK_XOR"
    XOR_ACC = "XOR_ACC"
    NOP = "NOP"


MEMORY_KINDS = frozenset({OpKind.TLOAD, OpKind.SLOAD})

# number of register operands each kind reads
_ARITY = {
    OpKind.COPY: 1, OpKind.SHR: 1, OpKind.MASK: 1, OpKind.TLOAD: 1,
    OpKind.SLOAD: 1, OpKind.RK_XOR: 1, OpKind.XOR_ACC: 2, OpKind.NOP: 0,
}
# kinds that need an immediate: shift amount, mask, table id, lane shift, rk index
_HAS_ARG = frozenset({OpKind.SHR, OpKind.MASK, OpKind.TLOAD, OpKind.SLOAD, OpKind.RK_XOR})


@dataclass(frozen=True)
class MicroOp:
    """One micro-operation.

    ``arg`` is the immediate: the shift for SHR, the constant for MASK, the
    table id for TLOAD, the byte-lane shift for SLOAD (the S-box byte is
    placed at ``<< arg``, standing in for OpenSSL's masked ``Te4`` lookup)
    and the round-key word index for RK_XOR.
    """

    kind: OpKind
    dst: str = None
    srcs: tuple = ()
    arg: int = None
    queue: str = None

    def __post_init__(self):
        if len(self.srcs) != _ARITY[self.kind]:
            raise IRError(f"{self.kind.value} takes {_ARITY[self.kind]} operands, got {self.srcs}")
        if (self.arg is not None) != (self.kind in _HAS_ARG):
            raise IRError(f"{self.kind.value}: immediate {self.arg!r} not allowed/missing")
        if (self.dst is None) != (self.kind is OpKind.NOP):
            raise IRError(f"{self.kind.value}: destination {self.dst!r} not allowed/missing")
        if self.kind is OpKind.SHR and self.arg not in (0, 8, 16, 24):
            raise IRError(f"bad shift amount {self.arg}")
        if self.kind is OpKind.TLOAD and self.arg not in range(4):
            raise IRError(f"bad table id {self.arg}")

    @property
    def is_memory(self) -> bool:
        return self.kind in MEMORY_KINDS

    @property
    def is_nop(self) -> bool:
        return self.kind is OpKind.NOP

    def format(self) -> str:
        if self.kind is OpKind.NOP:
            text = "NOP"
        else:
            imm = f"[{self.arg}]" if self.arg is not None else ""
            text = f"{self.dst} = {self.kind.value}{imm}({', '.join(self.srcs)})"
        if self.queue is not None:
            text += f" [queue={self.queue}]"
        return text


NOP = MicroOp(OpKind.NOP)


@dataclass(frozen=True)
class MicroProgram:
    ops: tuple
    inputs: tuple = ()
    outputs: tuple = ()

    @property
    def memory_ops(self) -> list:
        return [op for op in self.ops if op.is_memory]

    def count(self, kind: OpKind) -> int:
        return sum(op.kind is kind for op in self.ops)


# --- decomposition


def queue_tag(rnd: int, word: str) -> str:
    return f"r{rnd}.{word}"


def round_of(tag: str):
    """Round number encoded in a queue tag, or None for foreign tags."""
    m = re.fullmatch(r"r(\d+)\..+", tag or "")
    return int(m.group(1)) if m else None


def _state_names(rnd: int):
    """(source, destination) word-name prefixes; rounds alternate s -> t -> s."""
    return ("s", "t") if rnd % 2 else ("t", "s")


def _fragment(rnd: int, word: int, final: bool) -> list:
    src, dst = _state_names(rnd)
    acc = f"{dst}{word}"
    tag = queue_tag(rnd, acc)
    ops = []
    for k in range(4):
        u, v = f"u{word}{k}", f"v{word}{k}"
        shift = 24 - 8 * k
        ops.append(MicroOp(OpKind.COPY, u, (f"{src}{(word + k) % 4}",), queue=tag))
        if shift:
            ops.append(MicroOp(OpKind.SHR, u, (u,), shift, tag))
        if k:
            # a logical shift by 24 already leaves only the top byte
            ops.append(MicroOp(OpKind.MASK, u, (u,), 0xFF, tag))
        if final:
            ops.append(MicroOp(OpKind.SLOAD, v, (u,), shift, tag))
        else:
            ops.append(MicroOp(OpKind.TLOAD, v, (u,), k, tag))
        if k == 0:
            ops.append(MicroOp(OpKind.RK_XOR, acc, (v,), 4 * rnd + word, tag))
        else:
            ops.append(MicroOp(OpKind.XOR_ACC, acc, (acc, v), queue=tag))
    return ops


def decompose_word(rnd: int, word: int) -> list:
    """Ops computing output ``word`` of main round ``rnd`` (1..9)."""
    if not 1 <= rnd <= N_ROUNDS - 1 or word not in range(4):
        raise IRError(f"no main-round word ({rnd}, {word})")
    return _fragment(rnd, word, final=False)


def decompose_final_word(word: int) -> list:
    """Final-round fragment: S-box loads instead of T-table loads."""
    if word not in range(4):
        raise IRError(f"no final-round word {word}")
    return _fragment(N_ROUNDS, word, final=True)


def whitening() -> list:
    return [MicroOp(OpKind.RK_XOR, f"s{w}", (f"p{w}",), w, queue_tag(0, f"s{w}")) for w in range(4)]


def decompose_encryption() -> MicroProgram:
    """The whole AES-128 encryption as one straight-line program.

    Inputs ``p0..p3`` are the big-endian plaintext words; outputs ``s0..s3``
    the ciphertext words.
    """
    ops = whitening()
    for rnd in range(1, N_ROUNDS):
        for w in range(4):
            ops += decompose_word(rnd, w)
    for w in range(4):
        ops += decompose_final_word(w)
    return MicroProgram(tuple(ops), ("p0", "p1", "p2", "p3"), ("s0", "s1", "s2", "s3"))


# --- well-formedness


def check_defined(ops, inputs=()) -> None:
    """Raise IRError if some op reads a register not defined before it."""
    defined = set(inputs)
    for i, op in enumerate(ops):
        for s in op.srcs:
            if s not in defined:
                raise IRError(f"op {i} ({op.format()}) reads undefined register {s!r}")
        if op.dst is not None:
            defined.add(op.dst)


def cross_queue_reads(ops) -> list:
    """(reader_index, writer_tag) pairs where an op reads a register written
    by a different queue of the same round.  Empty for a well-formed program."""
    writers = {}
    for op in ops:
        if op.dst is not None:
            writers.setdefault((round_of(op.queue), op.dst), set()).add(op.queue)
    bad = []
    for i, op in enumerate(ops):
        for s in op.srcs:
            for tag in writers.get((round_of(op.queue), s), ()):
                if tag != op.queue:
                    bad.append((i, tag))
    return bad


# --- interpreter


def _as_words(pts) -> list:
    pts = np.ascontiguousarray(pts, dtype=np.uint8).reshape(-1, 16)
    return [pts[:, 4 * i:4 * i + 4].view(">u4").ravel().astype(np.uint32) for i in range(4)]


def execute(ops, regs: dict, ks: KeySchedule, tables: TTableSet = None) -> dict:
    """Run ``ops`` in order over ``regs`` (name -> uint32 array); returns the
    updated register file.  NOP slots are skipped.  ``ks`` may be an
    ``(N, 44)`` stack of round keys, one per row."""
    tables = tables or generate_tables()
    rk = round_key_columns(ks)
    regs = dict(regs)

    def read(name):
        try:
            return regs[name]
        except KeyError:
            raise IRError(f"read of undefined register {name!r}") from None

    for op in ops:
        kind = op.kind
        if kind is OpKind.NOP:
            continue
        a = read(op.srcs[0])
        if kind is OpKind.COPY:
            val = a
        elif kind is OpKind.SHR:
            val = a >> np.uint32(op.arg)
        elif kind is OpKind.MASK:
            val = a & np.uint32(op.arg)
        elif kind is OpKind.TLOAD:
            val = tables.te[op.arg][a]
        elif kind is OpKind.SLOAD:
            val = tables.sbox[a].astype(np.uint32) << np.uint32(op.arg)
        elif kind is OpKind.RK_XOR:
            val = a ^ rk[op.arg]
        else:  # XOR_ACC
            val = a ^ read(op.srcs[1])
        regs[op.dst] = val
    return regs


def interpret_batch(program, pts, ks: KeySchedule, tables: TTableSet = None) -> np.ndarray:
    """Encrypt an ``(N, 16)`` uint8 array by executing ``program``.

    ``program`` is a MicroProgram or anything with ``ops``/``inputs``/``outputs``
    (a Schedule works too; its NOP slots are no-ops).
    """
    regs = dict(zip(program.inputs, _as_words(pts)))
    regs = execute(program.ops, regs, ks, tables)
    try:
        out = np.stack([regs[o] for o in program.outputs], axis=1)
    except KeyError as exc:
        raise IRError(f"output register {exc.args[0]!r} never written") from None
    return out.astype(">u4").view(np.uint8).reshape(-1, 16)


def interpret(program, pt, ks: KeySchedule, tables: TTableSet = None) -> bytes:
    pts = np.frombuffer(bytes(pt), dtype=np.uint8)
    if pts.size != 16:
        raise ValueError("block must be 16 bytes")
    return interpret_batch(program, pts, ks, tables).tobytes()


# --- text format

_LINE = re.compile(
    r"^(?:(?P<nop>NOP)|(?P<dst>\w+)\s*=\s*(?P<kind>[A-Z_]+)(?:\[(?P<arg>\d+)\])?"
    r"\((?P<srcs>[^)]*)\))\s*(?:\[queue=(?P<queue>[^\]]+)\])?$"
)


def format_ops(ops, inputs=(), outputs=()) -> str:
    lines = [f"# inputs: {' '.join(inputs)}", f"# outputs: {' '.join(outputs)}"]
    lines += [op.format() for op in ops]
    return "\n".join(lines) + "\n"


def format_program(p: MicroProgram) -> str:
    return format_ops(p.ops, p.inputs, p.outputs)


def parse_op(line: str) -> MicroOp:
    m = _LINE.match(line.strip())
    if not m:
        raise IRError(f"cannot parse op: {line!r}")
    if m["nop"]:
        return MicroOp(OpKind.NOP, queue=m["queue"])
    try:
        kind = OpKind(m["kind"])
    except ValueError:
        raise IRError(f"unknown op kind {m['kind']!r}") from None
    srcs = tuple(s.strip() for s in m["srcs"].split(",") if s.strip())
    arg = int(m["arg"]) if m["arg"] is not None else None
    return MicroOp(kind, m["dst"], srcs, arg, m["queue"])


def parse_ops(text: str):
    """Parse the text format; returns ``(ops, inputs, outputs)``."""
    ops, inputs, outputs = [], (), ()
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            head, _, rest = line[1:].partition(":")
            if head.strip() == "inputs":
                inputs = tuple(rest.split())
            elif head.strip() == "outputs":
                outputs = tuple(rest.split())
            continue
        ops.append(parse_op(line))
    return ops, inputs, outputs


def parse_program(text: str) -> MicroProgram:
    ops, inputs, outputs = parse_ops(text)
    return MicroProgram(tuple(ops), inputs, outputs)
