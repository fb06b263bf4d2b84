import pytest

from ctaes.micro_ir import decompose_encryption
from ctaes.scheduler import schedule_program, sequential

FIPS_KEY = bytes.fromhex("000102030405060708090a0b0c0d0e0f")
FIPS_PT = bytes.fromhex("00112233445566778899aabbccddeeff")
FIPS_CT = bytes.fromhex("69c4e0d86a7b0430d8cdb78070b4c55a")


@pytest.fixture(scope="session")
def program():
    return decompose_encryption()


@pytest.fixture(scope="session")
def unscheduled(program):
    return sequential(program)


@pytest.fixture(scope="session")
def schedules(program):
    return {d: schedule_program(program, d) for d in range(1, 15)}


def toy_layout(consumer: int):
    """Eight single-issue instructions numbered 1..8: a load at 2 whose
    value is first used by instruction ``consumer``; the rest is filler."""
    from ctaes.micro_ir import MicroOp, MicroProgram, OpKind

    ops = []
    for i in range(1, 9):
        if i == 2:
            ops.append(MicroOp(OpKind.TLOAD, "v", ("a",), 0, "q"))
        elif i == consumer:
            ops.append(MicroOp(OpKind.XOR_ACC, "t", ("t", "v"), queue="q"))
        else:
            ops.append(MicroOp(OpKind.MASK, f"f{i}", ("a",), 255, "q"))
    return sequential(MicroProgram(tuple(ops), ("a", "t"), ("t",)))
