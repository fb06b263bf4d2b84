"""Cycle model: a miss only costs time when the consumer is too close."""

import numpy as np

from ctaes.micro_ir import MicroOp, MicroProgram, OpKind, decompose_encryption
from ctaes.scheduler import schedule_program, sequential
from ctaes.timing_sim import LatencyModel, simulate, timing_spread

lm = LatencyModel(exec=1, hit=2, miss=6)


def toy(consumer):
    # eight instructions; #2 loads, #consumer uses the value
    ops = []
    for i in range(1, 9):
        if i == 2:
            ops.append(MicroOp(OpKind.TLOAD, "v", ("a",), 0, "q"))
        elif i == consumer:
            ops.append(MicroOp(OpKind.XOR_ACC, "t", ("t", "v"), queue="q"))
        else:
            ops.append(MicroOp(OpKind.MASK, f"f{i}", ("a",), 255, "q"))
    return sequential(MicroProgram(tuple(ops)))


for name, consumer in (("use at 6", 6), ("use at 8", 8)):
    s = toy(consumer)
    print(f"{name}: hit {simulate(s, [False], lm)} cycles, miss {simulate(s, [True], lm)} cycles")

program = decompose_encryption()
print("\nfull AES, 10^4 random hit/miss patterns plus all-hit and all-miss")
sp = timing_spread(sequential(program), lm)
print(f"  unscheduled: {sp.min}..{sp.max} cycles, std {np.sqrt(sp.variance):.1f}")
for depth in (4, 6, 10, 14):
    sp = timing_spread(schedule_program(program, depth), lm)
    print(f"  depth {depth:2d}:   {sp.min}..{sp.max} cycles")
