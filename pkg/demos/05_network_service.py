"""The datagram timing server on loopback, with simulated cycle counts."""

import numpy as np

from ctaes.attack import run_attack
from ctaes.service import Collector, NetworkOracle, ServerConfig, TimingServer, parse_response

key = bytes.fromhex("2b7e151628aed2a6abf7158809cf4f3c")

srv = TimingServer(ServerConfig(key, clock_start=0xFFFFFF00))
raw = srv.handle(bytes(range(16)) + bytes(84))
r = parse_response(raw)
print("reply:", raw.hex())
print(f"echo={r.nonce.hex()} start={r.start:#x} end={r.end:#x} cycles={r.cycles}")
print("15-byte request ->", srv.handle(bytes(15)))

with TimingServer(ServerConfig(key)) as target, TimingServer(ServerConfig(bytes(16))) as study:
    with Collector(target.address) as c:
        rng = np.random.default_rng(0)
        print("five timings:", [c.query(rng.bytes(800)) for _ in range(5)])
    report = run_attack(NetworkOracle(target.address), 16, 800, true_key=key,
                        study_oracle=NetworkOracle(study.address))
    print(report.text().splitlines()[0], f"(lost {report.lost})")
