"""Bit-at-a-time reference Trivium, used as the oracle for the fast engine.

Written straight from the cipher's public description: a 288-bit state in
three shift registers (93 + 84 + 111 bits), an 80-bit key loaded into
s1..s80, an 80-bit IV loaded into s94..s173, the three top bits of the
last register set to one, and 4 x 288 warm-up rounds before any keystream
is emitted.

Byte/bit convention used throughout this package: byte 0 of the key, IV,
and keystream carries the first 8 bits, least significant bit first.

This module intentionally shares no code with cipher.py; equivalence of
the two implementations is asserted by the test suite.
"""

from __future__ import annotations


def _bits_lsb_first(data: bytes, nbits: int) -> list[int]:
    return [(data[i >> 3] >> (i & 7)) & 1 for i in range(nbits)]


def ref_keystream(key: bytes, iv: bytes, nbytes: int) -> bytes:
    """First `nbytes` of Trivium keystream for an 80-bit key and IV."""
    if len(key) != 10 or len(iv) != 10:
        raise ValueError("key and IV must be 80 bits (10 bytes) each")
    s = [0] * 288
    s[0:80] = _bits_lsb_first(key, 80)
    s[93:173] = _bits_lsb_first(iv, 80)
    s[285] = s[286] = s[287] = 1

    def step() -> int:
        t1 = s[65] ^ s[92]
        t2 = s[161] ^ s[176]
        t3 = s[242] ^ s[287]
        z = t1 ^ t2 ^ t3
        f1 = t1 ^ (s[90] & s[91]) ^ s[170]
        f2 = t2 ^ (s[174] & s[175]) ^ s[263]
        f3 = t3 ^ (s[285] & s[286]) ^ s[68]
        s[1:93] = s[0:92]
        s[0] = f3
        s[94:177] = s[93:176]
        s[93] = f1
        s[178:288] = s[177:287]
        s[177] = f2
        return z

    for _ in range(4 * 288):
        step()

    out = bytearray(nbytes)
    for i in range(nbytes * 8):
        out[i >> 3] |= step() << (i & 7)
    return bytes(out)
