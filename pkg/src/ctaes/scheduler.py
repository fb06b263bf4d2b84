"""Load-use gap scheduling: the constant-time countermeasure.

Ops are split into per-output-word queues.  Queues of one round are
independent, so they are interleaved round-robin; an op is issued only
once every memory load it reads is at least ``depth`` slots behind it, and
a NOP is issued when no queue has a ready op.  Rounds are scheduled one at
a time because round ``r + 1`` reads the words round ``r`` writes.
"""

from collections import defaultdict
from dataclasses import dataclass, field

from .micro_ir import NOP, MicroProgram, cross_queue_reads, format_ops, parse_ops, round_of


class SchedulingError(Exception):
    pass


@dataclass(frozen=True)
class OpQueue:
    tag: str
    ops: tuple
    positions: tuple  # index of each op in the source program

    def __len__(self):
        return len(self.ops)


@dataclass(frozen=True)
class Schedule:
    """Issue slots in order.

    ``provenance[i]`` is ``(queue_tag, program_position)`` for a real op and
    ``None`` for a NOP.  ``inputs``/``outputs`` come from the source program
    so a Schedule can be interpreted like one.
    """

    slots: tuple
    depth: int
    provenance: tuple
    inputs: tuple = ()
    outputs: tuple = ()

    @property
    def ops(self):
        return self.slots

    @property
    def slot_count(self) -> int:
        return len(self.slots)

    @property
    def nop_count(self) -> int:
        return sum(op.is_nop for op in self.slots)

    def without_nops(self) -> MicroProgram:
        """Un-interleave back to program order, dropping NOPs."""
        real = sorted((p[1], op) for op, p in zip(self.slots, self.provenance) if p is not None)
        return MicroProgram(tuple(op for _, op in real), self.inputs, self.outputs)

    def memory_ranks(self) -> list:
        """For each slot, the rank of its memory op in program order (None if
        not a memory op).  Hit/miss patterns are indexed by this rank."""
        mem = [(p[1], i) for i, (op, p) in enumerate(zip(self.slots, self.provenance))
               if op.is_memory]
        ranks = [None] * len(self.slots)
        for r, (_, i) in enumerate(sorted(mem)):
            ranks[i] = r
        return ranks


@dataclass
class ScheduleReport:
    depth: int
    min_load_use_gap: float
    nop_count: int
    slot_count: int
    gaps: list = field(default_factory=list)  # (load_slot, consumer_slot, gap) per load
    order_violations: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.min_load_use_gap >= self.depth and not self.order_violations


def sequential(program: MicroProgram, depth: int = 1) -> Schedule:
    """The unscheduled layout: program order, no NOPs."""
    prov = tuple((op.queue, i) for i, op in enumerate(program.ops))
    return Schedule(tuple(program.ops), depth, prov, program.inputs, program.outputs)


def build_queues(program) -> list:
    """Partition ``program`` (a MicroProgram or op sequence) by queue tag,
    keeping program order within each queue; queues appear in order of their
    first op."""
    ops = program.ops if isinstance(program, MicroProgram) else tuple(program)
    grouped = defaultdict(list)
    for i, op in enumerate(ops):
        if op.queue is None:
            raise SchedulingError(f"op {i} ({op.format()}) has no queue tag")
        grouped[op.queue].append(i)
    return [OpQueue(tag, tuple(ops[i] for i in idx), tuple(idx)) for tag, idx in grouped.items()]


def _check_independent(queues) -> None:
    written = defaultdict(set)
    for q in queues:
        for op in q.ops:
            if op.dst is not None:
                written[op.dst].add(q.tag)
    for q in queues:
        for op in q.ops:
            for s in op.srcs:
                others = written.get(s, set()) - {q.tag}
                if others:
                    raise SchedulingError(
                        f"queue {q.tag} reads {s!r} written by {sorted(others)}: "
                        "queues must be data independent"
                    )


def schedule(queues, depth: int, start_slot: int = 0) -> Schedule:
    """Greedy rotating round-robin over mutually independent queues.

    At each slot the queues are polled starting after the one that issued
    last; the first whose head op is ready issues.  A head is ready when
    each register it reads was produced at least ``depth`` slots earlier by
    a memory op (or any earlier slot by an arithmetic op).
    """
    if depth < 1:
        raise SchedulingError(f"depth must be >= 1, got {depth}")
    queues = [q for q in queues if len(q)]
    if not queues:
        raise SchedulingError("nothing to schedule")
    _check_independent(queues)

    heads = [0] * len(queues)
    # per queue: register -> (slot, is_memory) of its latest definition
    defs = [dict() for _ in queues]
    slots, prov = [], []
    remaining = sum(len(q) for q in queues)
    turn = 0
    while remaining:
        slot = start_slot + len(slots)
        chosen = None
        for k in range(len(queues)):
            qi = (turn + k) % len(queues)
            q = queues[qi]
            if heads[qi] == len(q):
                continue
            op = q.ops[heads[qi]]
            ready = True
            for s in op.srcs:
                d = defs[qi].get(s)
                if d is not None and d[1] and slot - d[0] < depth:
                    ready = False
                    break
            if ready:
                chosen = qi
                break
        if chosen is None:
            slots.append(NOP)
            prov.append(None)
            continue
        q = queues[chosen]
        op = q.ops[heads[chosen]]
        slots.append(op)
        prov.append((q.tag, q.positions[heads[chosen]]))
        defs[chosen][op.dst] = (slot, op.is_memory)
        heads[chosen] += 1
        remaining -= 1
        turn = chosen + 1
    return Schedule(tuple(slots), depth, tuple(prov))


def schedule_program(program: MicroProgram, depth: int) -> Schedule:
    """Schedule a whole program round by round and concatenate the result."""
    if cross_queue_reads(program.ops):
        raise SchedulingError("program has reads across queues of the same round")
    by_round = defaultdict(list)
    for q in build_queues(program):
        by_round[round_of(q.tag)].append(q)
    slots, prov = [], []
    for rnd in sorted(by_round, key=lambda r: (r is None, r or 0)):
        part = schedule(by_round[rnd], depth, start_slot=len(slots))
        slots += part.slots
        prov += part.provenance
    return Schedule(tuple(slots), depth, tuple(prov), program.inputs, program.outputs)


def load_use_gaps(s: Schedule) -> list:
    """``(load_slot, first_consumer_slot, gap)`` for every memory op that has
    a consumer, computed by reaching definitions in slot order."""
    last_def = {}
    pending = {}  # load slot -> register it defines, until first read
    out = []
    for i, op in enumerate(s.slots):
        for src in op.srcs:
            j = last_def.get(src)
            if j is not None and j in pending:
                del pending[j]
                out.append((j, i, i - j))
        if op.dst is not None:
            j = last_def.get(op.dst)
            pending.pop(j, None)  # overwritten before use
            last_def[op.dst] = i
            if op.is_memory:
                pending[i] = op.dst
    return sorted(out)


def verify_gaps(s: Schedule, depth: int) -> ScheduleReport:
    gaps = load_use_gaps(s)
    violations = []
    last_pos = {}
    for i, p in enumerate(s.provenance):
        if p is None:
            continue
        tag, pos = p
        if tag in last_pos and pos < last_pos[tag]:
            violations.append((tag, i))
        last_pos[tag] = pos
    return ScheduleReport(
        depth=depth,
        min_load_use_gap=min((g for *_, g in gaps), default=float("inf")),
        nop_count=s.nop_count,
        slot_count=s.slot_count,
        gaps=gaps,
        order_violations=violations,
    )


# --- text format: the micro-IR lines plus bare NOP lines


def format_schedule(s: Schedule) -> str:
    header = f"# depth: {s.depth}\n"
    return header + format_ops(s.slots, s.inputs, s.outputs)


def parse_schedule(text: str) -> Schedule:
    """Inverse of :func:`format_schedule`.  Program positions are recovered
    as the order of appearance, which is exact for a schedule that preserves
    each queue's order."""
    depth = 1
    for line in text.splitlines():
        if line.startswith("# depth:"):
            depth = int(line.split(":", 1)[1])
    ops, inputs, outputs = parse_ops(text)
    # re-derive program order: within a round, queue by queue
    per_queue = defaultdict(list)
    for i, op in enumerate(ops):
        if not op.is_nop:
            per_queue[op.queue].append(i)
    order = sorted(per_queue, key=lambda t: (round_of(t) is None, round_of(t) or 0, per_queue[t][0]))
    position = {}
    n = 0
    for tag in order:
        for i in per_queue[tag]:
            position[i] = n
            n += 1
    prov = tuple(None if op.is_nop else (op.queue, position[i]) for i, op in enumerate(ops))
    return Schedule(tuple(ops), depth, prov, inputs, outputs)
