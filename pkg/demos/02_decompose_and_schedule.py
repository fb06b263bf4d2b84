"""Split AES into micro-ops, then interleave them so every load has room."""

from ctaes.micro_ir import decompose_encryption, decompose_word, format_ops
from ctaes.scheduler import build_queues, schedule, schedule_program, sequential, verify_gaps

# One output word of round 1: four table terms, eighteen ops.
print(format_ops(decompose_word(1, 0)))

program = decompose_encryption()
print(f"{len(program.ops)} ops, {len(program.memory_ops)} loads")

# In program order, each load is consumed by the very next op.
print("unscheduled min load-use gap:", verify_gaps(sequential(program), 1).min_load_use_gap)

# Two independent words at depth 6: loads issue back to back, the
# consumers wait six slots, NOPs fill the hole.
two = schedule(build_queues(decompose_word(1, 0) + decompose_word(1, 1)), 6)
for i, op in enumerate(two.slots[:14]):
    print(f"{i:3d}  {op.format()}")

print("\ndepth  slots  nops  min_gap")
for depth in (1, 4, 6, 8, 10, 12, 14):
    s = schedule_program(program, depth)
    r = verify_gaps(s, depth)
    print(f"{depth:5d}  {s.slot_count:5d}  {s.nop_count:4d}  {r.min_load_use_gap}")
