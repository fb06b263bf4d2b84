import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ctaes.aes import (SBOX_TABLE, as_block, encrypt_reference, encrypt_ttable, encrypt_ttable_batch,
                       encrypt_ttable_trace, expand_key, generate_tables, gf_mul, stack_key_schedules,
                       trace_layout)
from conftest import FIPS_CT, FIPS_KEY, FIPS_PT
from oracles import SBOX, clmul_mod, oracle_encrypt, oracle_expand, oracle_te0

blocks = st.binary(min_size=16, max_size=16)


def test_sbox_matches_oracle():
    t = generate_tables()
    assert t.sbox[0] == 0x63
    assert t.sbox[0x53] == 0xED  # FIPS-197 worked example
    assert list(t.sbox) == SBOX
    assert sorted(t.sbox) == list(range(256))


def test_te_tables():
    t = generate_tables()
    assert sum(a.nbytes for a in t.te) == 4096
    assert all(a.dtype == np.uint32 and a.shape == (256,) for a in t.te)
    assert list(t.te0) == oracle_te0()
    assert t.te0[0] == 0xC66363A5
    for k in (1, 2, 3):
        expect = [((w >> (8 * k)) | (w << (32 - 8 * k))) & 0xFFFFFFFF for w in oracle_te0()]
        assert list(t.te[k]) == expect


def test_tables_read_only():
    t = generate_tables()
    with pytest.raises(ValueError):
        t.te0[0] = 0


def test_gf_mul_against_clmul():
    for a in range(0, 256, 7):
        for b in range(256):
            assert gf_mul(a, b) == clmul_mod(a, b)


def test_key_expansion_vectors():
    assert expand_key(bytes(16))[4] == 0x62636363
    ks = expand_key(FIPS_KEY)
    assert ks.words[40:] == (0x13111D7F, 0xE3944A17, 0xF307A78B, 0x4D2B30C5)
    ks = expand_key("2b7e151628aed2a6abf7158809cf4f3c")
    assert ks[4] == 0xA0FAFE17
    assert ks[43] == 0xB6630CA6


def test_key_expansion_random_keys():
    rng = np.random.default_rng(7)
    for _ in range(200):
        key = rng.bytes(16)
        assert list(expand_key(key).words) == oracle_expand(key)


def test_fips_vector_all_forms():
    ks = expand_key(FIPS_KEY)
    assert encrypt_reference(FIPS_PT, ks) == FIPS_CT
    assert encrypt_ttable(FIPS_PT, ks) == FIPS_CT
    ct = encrypt_ttable_batch(np.frombuffer(FIPS_PT, np.uint8)[None], ks)
    assert ct.tobytes() == FIPS_CT


def test_zero_key_zero_block():
    ks = expand_key(bytes(16))
    ct = encrypt_reference(bytes(16), ks)
    assert ct.hex() == "66e94bd4ef8a2c3b884cfa59ca342b2e"
    assert encrypt_ttable(bytes(16), ks) == ct


def test_batch_agrees_with_oracle():
    rng = np.random.default_rng(1)
    for _ in range(5):
        key = rng.bytes(16)
        ks = expand_key(key)
        pts = rng.integers(0, 256, (200, 16), dtype=np.uint8)
        cts = encrypt_ttable_batch(pts, ks)
        for p, c in zip(pts[:20], cts[:20]):
            assert c.tobytes() == oracle_encrypt(key, p.tobytes())
        for p, c in zip(pts, cts):
            assert c.tobytes() == encrypt_ttable(p.tobytes(), ks)


@settings(max_examples=60, deadline=None)
@given(blocks, blocks)
def test_reference_matches_ttable(key, pt):
    ks = expand_key(key)
    ct = oracle_encrypt(key, pt)
    assert encrypt_reference(pt, ks) == ct
    assert encrypt_ttable(pt, ks) == ct


def test_trace_shape_and_first_round():
    ks = expand_key(FIPS_KEY)
    _, trace = encrypt_ttable_trace(FIPS_PT, ks)
    assert len(trace) == 160
    assert [t for t, _ in trace] == trace_layout()
    assert trace_layout().count(SBOX_TABLE) == 16
    # first-round indices are plaintext ^ key bytes, ShiftRows order
    x = bytes(a ^ b for a, b in zip(FIPS_PT, FIPS_KEY))
    expect = [x[4 * ((w + k) % 4) + k] for w in range(4) for k in range(4)]
    assert [i for _, i in trace[:16]] == expect


def test_batch_trace_matches_scalar():
    rng = np.random.default_rng(2)
    ks = expand_key(rng.bytes(16))
    pts = rng.integers(0, 256, (30, 16), dtype=np.uint8)
    _, idx = encrypt_ttable_batch(pts, ks, trace=True)
    assert idx.shape == (30, 160)
    for p, row in zip(pts, idx):
        _, trace = encrypt_ttable_trace(p.tobytes(), ks)
        assert [i for _, i in trace] == list(row)


def test_as_block_errors():
    assert as_block("00" * 16) == bytes(16)
    with pytest.raises(ValueError):
        as_block("zz" * 16)
    with pytest.raises(ValueError):
        as_block(b"short")
    with pytest.raises(ValueError):
        expand_key(bytes(15))


def test_per_row_key_schedules():
    rng = np.random.default_rng(9)
    keys = [rng.bytes(16) for _ in range(64)]
    pts = rng.integers(0, 256, (64, 16), dtype=np.uint8)
    rk = stack_key_schedules([expand_key(k) for k in keys])
    assert rk.shape == (64, 44)
    cts = encrypt_ttable_batch(pts, rk)
    for k, p, c in zip(keys, pts, cts):
        assert c.tobytes() == oracle_encrypt(k, p.tobytes())
    with pytest.raises(ValueError):
        encrypt_ttable_batch(pts, rk[:, :40])
