"""AES-128 encryption: a four-step reference cipher and the T-table form.

The T-table form is the one whose secret-indexed memory lookups leak
through the cache.  State and round-key words are packed big-endian, so
``s0 >> 24`` selects byte 0 of the block.
"""

from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

BLOCK_SIZE = 16
N_ROUNDS = 10

# Trace table ids: 0..3 are Te0..Te3, 4 is the final-round S-box.
SBOX_TABLE = 4


def xtime(a: int) -> int:
    a <<= 1
    if a & 0x100:
        a ^= 0x11B
    return a & 0xFF


def gf_mul(a: int, b: int) -> int:
    """Multiply two elements of GF(2^8) modulo x^8 + x^4 + x^3 + x + 1."""
    r = 0
    while b:
        if b & 1:
            r ^= a
        a = xtime(a)
        b >>= 1
    return r


def gf_inv(a: int) -> int:
    # a^254 == a^-1 in GF(2^8); 0 maps to 0
    r = 1
    for _ in range(254):
        r = gf_mul(r, a)
    return r if a else 0


def _affine(b: int) -> int:
    r = 0x63
    for i in range(8):
        bit = 0
        for k in (0, 4, 5, 6, 7):
            bit ^= (b >> ((i + k) % 8)) & 1
        r ^= bit << i
    return r


def rotr32(w: int, n: int) -> int:
    return ((w >> n) | (w << (32 - n))) & 0xFFFFFFFF


@dataclass(frozen=True)
class TTableSet:
    """The four 1 KB round tables plus the S-box used by the final round."""

    te0: np.ndarray
    te1: np.ndarray
    te2: np.ndarray
    te3: np.ndarray
    sbox: np.ndarray

    @property
    def te(self):
        return (self.te0, self.te1, self.te2, self.te3)

    @cached_property
    def as_lists(self):
        # plain-int copies for the scalar code paths
        return [[int(x) for x in t] for t in self.te] + [[int(x) for x in self.sbox]]

    def lookup(self, table: int, index):
        if table == SBOX_TABLE:
            return self.sbox[index]
        return self.te[table][index]


@lru_cache(maxsize=None)
def generate_tables() -> TTableSet:
    sbox = [_affine(gf_inv(x)) for x in range(256)]
    te0 = []
    for x in range(256):
        s = sbox[x]
        te0.append((gf_mul(s, 2) << 24) | (s << 16) | (s << 8) | gf_mul(s, 3))
    te = [te0] + [[rotr32(w, 8 * k) for w in te0] for k in (1, 2, 3)]
    arrays = [np.array(t, dtype=np.uint32) for t in te]
    arrays.append(np.array(sbox, dtype=np.uint8))
    for a in arrays:
        a.setflags(write=False)
    return TTableSet(*arrays)


@dataclass(frozen=True)
class KeySchedule:
    """The 44 expanded round-key words rk[0..43]."""

    words: tuple

    def __post_init__(self):
        if len(self.words) != 4 * (N_ROUNDS + 1):
            raise ValueError("AES-128 key schedule must hold 44 words")

    def __getitem__(self, i):
        return self.words[i]

    @property
    def array(self) -> np.ndarray:
        return np.array(self.words, dtype=np.uint32)


def stack_key_schedules(schedules) -> np.ndarray:
    """``(N, 44)`` uint32 round keys, for batch calls with one key per row."""
    return np.array([ks.words for ks in schedules], dtype=np.uint32)


def round_key_columns(ks):
    """Index ``rk[i]`` works for one KeySchedule (scalar words) or an
    ``(N, 44)`` stack (a column per word)."""
    if isinstance(ks, KeySchedule):
        return ks.array
    rk = np.asarray(ks, dtype=np.uint32)
    if rk.ndim != 2 or rk.shape[1] != 44:
        raise ValueError(f"expected (N, 44) round keys, got {rk.shape}")
    return rk.T


def as_block(value) -> bytes:
    """Coerce bytes-like or a 32-digit hex string to a 16-byte block."""
    if isinstance(value, str):
        try:
            value = bytes.fromhex(value)
        except ValueError as exc:
            raise ValueError(f"not a hex string: {value!r}") from exc
    value = bytes(value)
    if len(value) != BLOCK_SIZE:
        raise ValueError(f"expected {BLOCK_SIZE} bytes, got {len(value)}")
    return value


def pack_words(block: bytes) -> list:
    return [int.from_bytes(block[4 * i:4 * i + 4], "big") for i in range(4)]


def unpack_words(words) -> bytes:
    return b"".join(int(w).to_bytes(4, "big") for w in words)


def expand_key(key) -> KeySchedule:
    key = as_block(key)
    sbox = generate_tables().sbox
    rk = pack_words(key)
    rcon = 1
    for i in range(4, 44):
        t = rk[i - 1]
        if i % 4 == 0:
            t = rotr32(t, 24)  # RotWord
            t = int.from_bytes(bytes(int(sbox[b]) for b in t.to_bytes(4, "big")), "big")
            t ^= rcon << 24
            rcon = xtime(rcon)
        rk.append(rk[i - 4] ^ t)
    return KeySchedule(tuple(rk))


# --- reference cipher: SubBytes, ShiftRows, MixColumns, AddRoundKey on a 4x4 state


def _add_round_key(state, ks, rnd):
    rk = unpack_words(ks.words[4 * rnd:4 * rnd + 4])
    return [s ^ k for s, k in zip(state, rk)]


def _sub_bytes(state, sbox):
    return [int(sbox[b]) for b in state]


def _shift_rows(state):
    # state[r + 4c] is row r, column c
    return [state[r + 4 * ((c + r) % 4)] for c in range(4) for r in range(4)]


def _mix_columns(state):
    out = []
    for c in range(4):
        a = state[4 * c:4 * c + 4]
        for r in range(4):
            out.append(
                gf_mul(a[r], 2) ^ gf_mul(a[(r + 1) % 4], 3) ^ a[(r + 2) % 4] ^ a[(r + 3) % 4]
            )
    return out


def encrypt_reference(pt, ks: KeySchedule) -> bytes:
    sbox = generate_tables().sbox
    state = _add_round_key(list(as_block(pt)), ks, 0)
    for rnd in range(1, N_ROUNDS + 1):
        state = _shift_rows(_sub_bytes(state, sbox))
        if rnd != N_ROUNDS:
            state = _mix_columns(state)
        state = _add_round_key(state, ks, rnd)
    return bytes(state)


# --- T-table cipher


def trace_layout() -> list:
    """Table id of each of the 160 lookups, in execution order."""
    main = [k for _ in range(N_ROUNDS - 1) for _w in range(4) for k in range(4)]
    return main + [SBOX_TABLE] * 16


def encrypt_ttable_trace(pt, ks: KeySchedule, tables: TTableSet = None):
    """Encrypt one block and return ``(ciphertext, lookups)``.

    ``lookups`` lists every ``(table_id, index)`` in execution order: per
    round, output word 0..3, and within a word the Te0..Te3 terms.
    """
    tables = tables or generate_tables()
    *te, sbox = tables.as_lists
    rk = ks.words
    s = [w ^ rk[i] for i, w in enumerate(pack_words(as_block(pt)))]
    trace = []
    for rnd in range(1, N_ROUNDS):
        t = []
        for w in range(4):
            acc = rk[4 * rnd + w]
            for k in range(4):
                idx = (s[(w + k) % 4] >> (24 - 8 * k)) & 0xFF
                trace.append((k, idx))
                acc ^= te[k][idx]
            t.append(acc)
        s = t
    out = []
    for w in range(4):
        acc = rk[40 + w]
        for k in range(4):
            idx = (s[(w + k) % 4] >> (24 - 8 * k)) & 0xFF
            trace.append((SBOX_TABLE, idx))
            acc ^= sbox[idx] << (24 - 8 * k)
        out.append(acc)
    return unpack_words(out), trace


def encrypt_ttable(pt, ks: KeySchedule, tables: TTableSet = None) -> bytes:
    return encrypt_ttable_trace(pt, ks, tables)[0]


def encrypt_ttable_batch(pts: np.ndarray, ks: KeySchedule, tables: TTableSet = None,
                         trace: bool = False):
    """Vectorised T-table encryption of an ``(N, 16)`` uint8 array.

    ``ks`` is one KeySchedule or an ``(N, 44)`` stack with a key per row.
    Returns the ``(N, 16)`` ciphertexts, and with ``trace=True`` also the
    ``(N, 160)`` lookup indices ordered as in :func:`trace_layout`.
    """
    tables = tables or generate_tables()
    pts = np.ascontiguousarray(pts, dtype=np.uint8).reshape(-1, 16)
    rk = round_key_columns(ks)
    zero = np.zeros(len(pts), dtype=np.uint32)
    s = [pts[:, 4 * i:4 * i + 4].view(">u4").ravel().astype(np.uint32) ^ rk[i] for i in range(4)]
    indices = []
    for rnd in range(1, N_ROUNDS):
        t = []
        for w in range(4):
            acc = zero ^ rk[4 * rnd + w]
            for k in range(4):
                idx = (s[(w + k) % 4] >> np.uint32(24 - 8 * k)) & np.uint32(0xFF)
                indices.append(idx)
                acc ^= tables.te[k][idx]
            t.append(acc)
        s = t
    out = []
    for w in range(4):
        acc = zero ^ rk[40 + w]
        for k in range(4):
            idx = (s[(w + k) % 4] >> np.uint32(24 - 8 * k)) & np.uint32(0xFF)
            indices.append(idx)
            acc ^= tables.sbox[idx].astype(np.uint32) << np.uint32(24 - 8 * k)
        out.append(acc)
    cts = np.stack(out, axis=1).astype(">u4").view(np.uint8).reshape(len(pts), 16)
    if trace:
        return cts, np.stack(indices, axis=1).astype(np.uint8)
    return cts
