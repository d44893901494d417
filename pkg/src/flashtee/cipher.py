"""Stream-cipher datapath between the flash controller and SSD DRAM.

The engine is Trivium (80-bit key, 80-bit IV, 288-bit state) implemented
64 bits per step: all taps of the 64 steps in a batch depend only on the
pre-batch state, which is what lets the hardware produce 64 keystream bits
per cycle.  Equivalence with the bit-at-a-time oracle in trivium_ref.py is
asserted by the test suite on multi-kilobyte streams.

IVs are public and never reused: the 80-bit value is the page's physical
address (spatial half) concatenated with a per-epoch PRNG draw (temporal
half).  An epoch here is one erase cycle of the page's block, so a
physical page is never encrypted twice under the same IV.  A ledger of
issued IVs enforces uniqueness at run time.

Keys live in a secure-register model: they are never serialized into
reports, traces, or logs.
"""

from __future__ import annotations

import hashlib

from .errors import IvSpaceExhausted
from .flash import ceil_div
from .kernel import Rng

_M64 = (1 << 64) - 1

KEY_BITS = 80
IV_BITS = 80


def _reverse_bits(value: int, width: int) -> int:
    out = 0
    for _ in range(width):
        out = (out << 1) | (value & 1)
        value >>= 1
    return out


class TriviumEngine:
    """64-bit-sliced Trivium keystream generator."""

    def __init__(self, key: bytes):
        if len(key) != 10:
            raise ValueError("Trivium key must be 10 bytes")
        # state registers hold s1..s93, s94..s177, s178..s288 with the
        # newest bit (s1/s94/s178) at the top of each integer
        self._key_a = _reverse_bits(int.from_bytes(key, "little"), 80) << 13

    def _init_state(self, iv: bytes) -> tuple[int, int, int]:
        if len(iv) != 10:
            raise ValueError("Trivium IV must be 10 bytes")
        a = self._key_a
        b = _reverse_bits(int.from_bytes(iv, "little"), 80) << 4
        c = 0b111  # s286..s288 set to one
        for _ in range(18):  # 4 * 288 warm-up steps, 64 at a time
            a, b, c, _ = self._batch(a, b, c)
        return a, b, c

    @staticmethod
    def _batch(a: int, b: int, c: int) -> tuple[int, int, int, int]:
        """Advance 64 steps; returns the new state and the keystream word
        (bit j of the word is the j-th keystream bit of the batch)."""
        a66 = (a >> 27) & _M64
        a69 = (a >> 24) & _M64
        a91 = (a >> 2) & _M64
        a92 = (a >> 1) & _M64
        a93 = a & _M64
        b69 = (b >> 15) & _M64
        b78 = (b >> 6) & _M64
        b82 = (b >> 2) & _M64
        b83 = (b >> 1) & _M64
        b84 = b & _M64
        c66 = (c >> 45) & _M64
        c87 = (c >> 24) & _M64
        c109 = (c >> 2) & _M64
        c110 = (c >> 1) & _M64
        c111 = c & _M64
        t1 = a66 ^ a93
        t2 = b69 ^ b84
        t3 = c66 ^ c111
        z = t1 ^ t2 ^ t3
        f1 = t1 ^ (a91 & a92) ^ b78
        f2 = t2 ^ (b82 & b83) ^ c87
        f3 = t3 ^ (c109 & c110) ^ a69
        a = (a >> 64) | (f3 << 29)
        b = (b >> 64) | (f1 << 20)
        c = (c >> 64) | (f2 << 47)
        return a, b, c, z

    def keystream(self, iv: bytes, nbytes: int) -> bytes:
        a, b, c = self._init_state(iv)
        out = bytearray()
        for _ in range(ceil_div(nbytes, 8)):
            a, b, c, z = self._batch(a, b, c)
            out += z.to_bytes(8, "little")
        return bytes(out[:nbytes])


class CipherKey:
    """80-bit symmetric key held in the secure-register model."""

    def __init__(self, key: bytes):
        if len(key) != 10:
            raise ValueError("key must be 10 bytes")
        self._key = key

    @classmethod
    def from_seed(cls, seed: int) -> "CipherKey":
        digest = hashlib.blake2b(seed.to_bytes(8, "little"),
                                 digest_size=10, person=b"flash-key").digest()
        return cls(digest)

    def reveal(self) -> bytes:
        """Only the cipher engine itself should call this."""
        return self._key

    def __repr__(self):
        return "<CipherKey hidden>"


class CipherTiming:
    """Throughput model: 64 keystream bits per engine cycle."""

    def __init__(self, bits_per_cycle: int = 64, engine_clock_hz: int = 1_600_000_000):
        self.bits_per_cycle = bits_per_cycle
        self.engine_clock_hz = engine_clock_hz

    def keystream_ns(self, nbytes: int) -> int:
        cycles = ceil_div(nbytes * 8, self.bits_per_cycle)
        return ceil_div(cycles * 1_000_000_000, self.engine_clock_hz)


class IvFactory:
    """Builds PPA-and-PRNG IVs and refuses to issue the same value twice."""

    def __init__(self, rng: Rng, spatial_bits: int = 40, temporal_bits: int = 40):
        if spatial_bits + temporal_bits != IV_BITS:
            raise ValueError("IV split must total 80 bits")
        self.spatial_bits = spatial_bits
        self.temporal_bits = temporal_bits
        self._rng = rng
        self._epoch_draws: dict[int, int] = {}
        self._issued: set[int] = set()
        self.issued_count = 0

    def epoch_draw(self, epoch: int) -> int:
        draw = self._epoch_draws.get(epoch)
        if draw is None:
            draw = self._epoch_draws[epoch] = self._rng.bits(self.temporal_bits)
        return draw

    def next_iv(self, ppa: int, epoch: int) -> int:
        if not 0 <= ppa < (1 << self.spatial_bits):
            raise ValueError(f"ppa {ppa} exceeds the {self.spatial_bits}-bit spatial field")
        iv = (ppa << self.temporal_bits) | self.epoch_draw(epoch)
        if iv in self._issued:
            raise IvSpaceExhausted(f"IV for ppa {ppa}, epoch {epoch} already issued")
        self._issued.add(iv)
        self.issued_count += 1
        return iv


def iv_bytes(iv: int) -> bytes:
    return iv.to_bytes(10, "little")


class PageCipher:
    """XOR page payloads with Trivium keystream; records IVs for decryption."""

    def __init__(self, key: CipherKey, ivf: IvFactory,
                 timing: CipherTiming | None = None, page_bytes: int = 4096):
        self._engine = TriviumEngine(key.reveal())
        self.ivf = ivf
        self.timing = timing or CipherTiming()
        self.page_bytes = page_bytes

    def encrypt_page(self, ppa: int, epoch: int, plaintext: bytes) -> tuple[bytes, int, int]:
        """Returns (ciphertext, iv, latency_ns)."""
        iv = self.ivf.next_iv(ppa, epoch)
        ct = self._xor(iv, plaintext)
        return ct, iv, self.timing.keystream_ns(len(plaintext))

    def decrypt_page(self, iv: int, ciphertext: bytes) -> bytes:
        return self._xor(iv, ciphertext)

    def _xor(self, iv: int, data: bytes) -> bytes:
        if not data:
            return b""
        ks = self._engine.keystream(iv_bytes(iv), len(data))
        n = len(data)
        return (int.from_bytes(data, "little") ^ int.from_bytes(ks, "little")).to_bytes(n, "little")

    def page_latency_ns(self) -> int:
        return self.timing.keystream_ns(self.page_bytes)
