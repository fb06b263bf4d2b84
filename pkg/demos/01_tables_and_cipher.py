"""T-table AES: where the secret-indexed lookups come from."""

import numpy as np

from ctaes import encrypt_reference, encrypt_ttable, encrypt_ttable_trace, expand_key, generate_tables

tables = generate_tables()
print("S-box[0x00..0x07]:", " ".join(f"{x:02x}" for x in tables.sbox[:8]))
print("Te0[0..3]:        ", " ".join(f"{int(x):08x}" for x in tables.te0[:4]))
print("table bytes:", sum(t.nbytes for t in tables.te))

# Te1..Te3 are byte rotations of Te0
assert all(int(tables.te1[x]) == ((int(tables.te0[x]) >> 8) | (int(tables.te0[x]) << 24)) & 0xFFFFFFFF
           for x in range(256))

key = bytes.fromhex("000102030405060708090a0b0c0d0e0f")
pt = bytes.fromhex("00112233445566778899aabbccddeeff")
ks = expand_key(key)
print("reference:", encrypt_reference(pt, ks).hex())
print("t-table:  ", encrypt_ttable(pt, ks).hex())

# The first sixteen lookups are indexed by pt ^ key, which is what the
# cache-timing attack exploits.
ct, trace = encrypt_ttable_trace(pt, ks)
print("lookups per block:", len(trace))
print("round-1 indices:", [idx for _, idx in trace[:16]])
x = np.frombuffer(pt, np.uint8) ^ np.frombuffer(key, np.uint8)
print("pt ^ key bytes: ", x.tolist())
