import socket

import numpy as np
import pytest

from ctaes.aes import expand_key
from ctaes.attack import SimulatedOracle, run_attack
from ctaes.service import (Collector, NetworkOracle, ServerConfig, ServiceError, ServiceUnavailable,
                           TimingServer, build_response, collect, cycle_delta, parse_endpoint,
                           parse_response)
from ctaes.timing_sim import TimingModel
from conftest import FIPS_KEY

NONCE = bytes(range(16))
SCRAMBLED = bytes.fromhex("c6a13b37878f5b826f4f8162a1c8d879")  # AES of zeros under FIPS_KEY


def test_golden_response_bytes():
    got = build_response(NONCE, SCRAMBLED, 0x11223344, 0x55667788)
    assert got.hex() == ("000102030405060708090a0b0c0d0e0f"
                         "c6a13b37878f5b826f4f8162a1c8d879"
                         "44332211" "88776655")
    r = parse_response(got)
    assert r.nonce == NONCE and r.scrambled == SCRAMBLED
    assert r.cycles == 0x55667788 - 0x11223344
    with pytest.raises(ServiceError):
        parse_response(got[:39])


def test_wraparound():
    assert cycle_delta(0xFFFFFFF0, 0x00000010) == 0x20


def test_handle_layout_sim_clock():
    srv = TimingServer(ServerConfig(FIPS_KEY, clock_start=0x11223344))
    assert srv.scrambled_zero == SCRAMBLED
    reply = srv.handle(NONCE + bytes(100))
    model = TimingModel(srv.schedule, packet_len=116)
    expect = model.cycles(NONCE, expand_key(FIPS_KEY))
    assert reply == build_response(NONCE, SCRAMBLED, 0x11223344, 0x11223344 + expect)


def test_handle_wraps_counter():
    srv = TimingServer(ServerConfig(FIPS_KEY, clock_start=0xFFFFFFF0))
    r = parse_response(srv.handle(bytes(16)))
    assert r.end < r.start
    assert r.cycles == TimingModel(srv.schedule, packet_len=16).cycles(bytes(16), srv.ks)


def test_short_and_long_packets_dropped():
    srv = TimingServer(ServerConfig(FIPS_KEY))
    assert srv.handle(bytes(15)) is None
    assert srv.handle(b"") is None
    assert srv.handle(bytes(801)) is None
    assert len(srv.handle(bytes(16))) == 40
    assert len(srv.handle(bytes(800))) == 40


def test_scrambled_zero_constant():
    srv = TimingServer(ServerConfig(FIPS_KEY, mode="protected", depth=6))
    rng = np.random.default_rng(0)
    seen = set()
    for _ in range(20):
        pkt = rng.bytes(int(rng.integers(16, 801)))
        r = parse_response(srv.handle(pkt))
        assert r.nonce == pkt[:16]
        seen.add(r.scrambled)
        assert r.cycles == 804  # protected: constant
    assert seen == {SCRAMBLED}


def test_protected_encrypts_correctly():
    a = TimingServer(ServerConfig(FIPS_KEY, mode="protected", depth=6))
    b = TimingServer(ServerConfig(FIPS_KEY))
    block = bytes(range(16, 32))
    assert a.encrypt(block) == b.encrypt(block)


def test_config_validation():
    with pytest.raises(ValueError):
        ServerConfig(FIPS_KEY, mode="protected")
    with pytest.raises(ValueError):
        ServerConfig(FIPS_KEY, mode="fast")
    with pytest.raises(ValueError):
        ServerConfig(FIPS_KEY, timing="hpet")
    with pytest.raises(ValueError):
        ServerConfig(bytes(3))


def test_parse_endpoint():
    assert parse_endpoint("10.0.0.1:9000") == ("10.0.0.1", 9000)
    assert parse_endpoint(":9000") == ("127.0.0.1", 9000)


def test_loopback_matches_injected_simulator():
    with TimingServer(ServerConfig(FIPS_KEY)) as srv:
        with Collector(srv.address) as c:
            rng = np.random.default_rng(1)
            for _ in range(50):
                pkt = rng.bytes(64)
                want = TimingModel(srv.schedule, packet_len=64).cycles(pkt[:16], srv.ks)
                assert c.query(pkt) == want
            # a short packet gets no reply and counts as lost
            c.timeout = 0.05
            assert c.query(bytes(15)) is None
            assert c.lost == 1
        assert srv.handled == 50


def test_collect_ten_thousand():
    with TimingServer(ServerConfig(FIPS_KEY)) as srv:
        res = collect(srv.address, 10_000, packet_len=800, seed=0)
    assert res.sent == 10_000
    assert res.loss_rate == res.lost / res.sent
    assert len(res.samples) == res.sent - res.lost
    assert res.loss_rate < 0.01


def test_real_clock_mode_runs():
    with TimingServer(ServerConfig(FIPS_KEY, timing="real")) as srv:
        res = collect(srv.address, 20, packet_len=100)
    assert len(res.samples) == 20


def test_endpoint_down():
    s = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    s.bind(("127.0.0.1", 0))
    addr = s.getsockname()
    s.close()
    with pytest.raises(ServiceUnavailable):
        collect(addr, 100, timeout=0.05)


def test_network_attack_equals_in_process():
    key = np.random.default_rng(5).bytes(16)
    cfg_a = ServerConfig(key)
    cfg_s = ServerConfig(bytes(16))
    with TimingServer(cfg_a) as target, TimingServer(cfg_s) as study:
        net = run_attack(NetworkOracle(target.address), 4, 800, true_key=key,
                         study_oracle=NetworkOracle(study.address), seed=3)
    local_model = TimingModel(target.schedule, packet_len=800)
    local = run_attack(SimulatedOracle(key, local_model), 4, 800, true_key=key, seed=3)
    assert net.lost == 0
    assert net.estimate == local.estimate
    assert np.array_equal(net.attack.mean_dev, local.attack.mean_dev)
