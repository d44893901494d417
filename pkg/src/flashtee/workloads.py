"""Workload suite: synthetic scan operators, simplified query mixes, and
write-heavy transaction/text jobs, plus the dataset they run over.

Datasets are page-granular: one 4 KiB record per logical page, striped
round-robin across channels.  Page contents are a pure function of
(dataset seed, lpa), so results are computable both from the generator
(fast runs) and from bytes that traveled the full encrypt/store/decrypt
pipeline (faithful runs); the two must agree bit for bit.

Per-record compute costs are fitted constants, not measurements: they are
chosen so that the scenario comparisons land in plausible bands at desk
scale, and they are visible here and in the run configuration.  Storage
costs are multiples of 300 ns so the host-core cost (one third) stays a
multiple of 100 ns, which keeps the SGX compute multiplier (2.03) exact in
integer arithmetic.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, UnknownWorkload
from .kernel import Rng

_M64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

FLUSH_SLOTS = 1024  # spare LPAs per task for heap flush-back
HEAP_PAGE_SLOTS = 4096  # 16 MiB of 4 KiB pages


def mix64(x: int) -> int:
    """Scalar splitmix64 finalizer."""
    x = (x + _GOLDEN) & _M64
    x ^= x >> 30
    x = (x * 0xBF58476D1CE4E5B9) & _M64
    x ^= x >> 27
    x = (x * 0x94D049BB133111EB) & _M64
    x ^= x >> 31
    return x


@dataclass(frozen=True)
class Dataset:
    total_bytes: int
    page_bytes: int
    base_lpa: int
    seed: int

    def __post_init__(self):
        if self.total_bytes % self.page_bytes:
            raise ConfigError("dataset size must be whole pages")

    @property
    def pages(self) -> int:
        return self.total_bytes // self.page_bytes

    @property
    def values_per_page(self) -> int:
        return self.page_bytes // 8

    @property
    def flush_base_lpa(self) -> int:
        return self.base_lpa + self.pages

    def lpa_of(self, record: int) -> int:
        return self.base_lpa + record

    def page_values(self, record: int) -> np.ndarray:
        """512 deterministic uint64 values for one record page."""
        base = mix64(self.seed ^ mix64(self.base_lpa + record))
        idx = np.arange(1, self.values_per_page + 1, dtype=np.uint64)
        x = np.uint64(base) + idx * np.uint64(_GOLDEN)
        x ^= x >> np.uint64(30)
        x *= np.uint64(0xBF58476D1CE4E5B9)
        x ^= x >> np.uint64(27)
        x *= np.uint64(0x94D049BB133111EB)
        x ^= x >> np.uint64(31)
        return x

    def page_payload(self, record: int) -> bytes:
        return self.page_values(record).astype("<u8").tobytes()

    def page_digest(self, record: int) -> int:
        return mix64(self.seed ^ mix64(0xD1657 ^ (self.base_lpa + record)))


@dataclass(frozen=True)
class WorkloadSpec:
    name: str
    description: str
    kind: str  # scan | join | txn | text
    storage_compute_ns: int  # per record on one storage core
    heap_lines_per_record: int
    heap_pages_used: int
    random_probe: bool = False
    build_fraction: float = 0.0  # join build side, fraction of records
    selectivity: float = 0.1
    hot_lines: int = 0  # >0: most writes land in this many hot heap lines
    hot_weight: float = 0.9
    flush_per_1000: int = 0  # heap pages flushed back to flash per 1000 records

    def __post_init__(self):
        if self.storage_compute_ns % 300:
            raise ConfigError(f"{self.name}: storage compute must be a multiple of 300 ns")
        if not 0 <= self.selectivity <= 1:
            raise ConfigError(f"{self.name}: selectivity out of range")

    def host_compute_ns(self, host_speed_multiplier: int = 3) -> int:
        return self.storage_compute_ns // host_speed_multiplier

    @property
    def read_fraction(self) -> float:
        # page-equivalent mix: one page read per record vs heap-line writes
        writes = self.heap_lines_per_record / 64.0
        return 1.0 / (1.0 + writes)


WORKLOADS: dict[str, WorkloadSpec] = {}


def _register(spec: WorkloadSpec) -> None:
    WORKLOADS[spec.name] = spec


_register(WorkloadSpec("arithmetic", "math operators over every record",
                       "scan", 2400, 2, 4))
_register(WorkloadSpec("aggregate", "running average over every record",
                       "scan", 2100, 2, 4))
_register(WorkloadSpec("filter", "select records matching a predicate",
                       "scan", 1800, 1, 4))
_register(WorkloadSpec("q1_like", "pricing-summary style scan with grouped sums",
                       "scan", 3300, 3, 8))
_register(WorkloadSpec("q3_like", "shipping-priority style build+probe join",
                       "join", 2700, 6, 512, random_probe=True, build_fraction=0.10))
_register(WorkloadSpec("q12_like", "shipping-modes style join",
                       "join", 2400, 4, 384, random_probe=True, build_fraction=0.08))
_register(WorkloadSpec("q14_like", "promotion-response style join",
                       "join", 2700, 6, 512, random_probe=True, build_fraction=0.12))
_register(WorkloadSpec("q19_like", "discounted-revenue join plus aggregate",
                       "join", 3000, 9, 768, random_probe=True, build_fraction=0.15))
_register(WorkloadSpec("tpcb_like", "bank-branch transaction updates",
                       "txn", 2400, 12, 1024, random_probe=True,
                       hot_lines=4096, flush_per_1000=15))
_register(WorkloadSpec("tpcc_like", "warehouse transaction updates",
                       "txn", 2700, 16, 1536, random_probe=True,
                       hot_lines=8192, flush_per_1000=20))
_register(WorkloadSpec("wordcount_like", "word counting over text pages",
                       "text", 2400, 26, 32, hot_lines=512, flush_per_1000=10))

READ_INTENSIVE = ("arithmetic", "aggregate", "filter", "q1_like")
SCAN_WORKLOADS = READ_INTENSIVE
WRITE_HEAVY = ("tpcb_like", "tpcc_like", "wordcount_like")


def get_workload(name: str) -> WorkloadSpec:
    try:
        return WORKLOADS[name]
    except KeyError:
        raise UnknownWorkload(f"{name!r}; known: {', '.join(sorted(WORKLOADS))}") from None


@dataclass
class AccessTrace:
    """Deterministic record access order plus heap-write targeting."""
    spec: WorkloadSpec
    dataset: Dataset
    seed: int
    order: list[int] = field(repr=False, default_factory=list)

    def __post_init__(self):
        n = self.dataset.pages
        rng = Rng(mix64(self.seed ^ 0xACCE55))
        if self.spec.kind == "scan" or self.spec.kind == "text":
            self.order = list(range(n))
        elif self.spec.kind == "join":
            build = int(n * self.spec.build_fraction)
            probe = list(range(build, n))
            rng.shuffle(probe)
            self.order = list(range(build)) + probe
        else:  # txn
            self.order = list(range(n))
            rng.shuffle(self.order)
        self._salt = mix64(self.seed ^ mix64(hash_name(self.spec.name)))

    @property
    def records(self) -> int:
        return len(self.order)

    def heap_lines(self, i: int) -> list[tuple[int, int]]:
        """(heap page slot, line index) targets written while processing
        record i.  Hot-line workloads concentrate writes so minor counters
        overflow, like repeated in-place updates would."""
        spec = self.spec
        out = []
        for j in range(spec.heap_lines_per_record):
            h = mix64(self._salt ^ (i * 0x100000001B3 + j))
            if spec.hot_lines and h % 100 < int(spec.hot_weight * 100):
                g = h % spec.hot_lines
            else:
                g = h % (spec.heap_pages_used * 64)
            out.append((g // 64, g % 64))
        return out

    def flushes(self, i: int) -> bool:
        return self.spec.flush_per_1000 > 0 and (i % 1000) < self.spec.flush_per_1000

    def flush_lpa(self, i: int) -> int:
        return self.dataset.flush_base_lpa + (i % FLUSH_SLOTS)

    def measured_read_fraction(self) -> float:
        reads = self.records
        writes = self.records * self.spec.heap_lines_per_record / 64.0
        return reads / (reads + writes)


def hash_name(name: str) -> int:
    h = 0xCBF29CE484222325
    for ch in name.encode():
        h = ((h ^ ch) * 0x100000001B3) & _M64
    return h


def generate_trace(workload: str, dataset: Dataset, seed: int) -> AccessTrace:
    return AccessTrace(get_workload(workload), dataset, seed)


# ----------------------------------------------------------------------
# result computation and verification

def compute_result(workload: str, dataset: Dataset, values_of=None) -> bytes:
    """The workload's answer over the dataset.

    values_of(record) -> uint64 array; defaults to the dataset generator.
    Faithful runs pass a provider backed by pipeline-decrypted bytes, which
    must produce the identical blob.
    """
    spec = get_workload(workload)
    if values_of is None:
        values_of = dataset.page_values
    n = dataset.pages
    if spec.kind == "scan":
        if spec.name == "filter":
            threshold = int(spec.selectivity * 1000)
            count = 0
            for r in range(n):
                count += int(np.count_nonzero(values_of(r) % np.uint64(1000)
                                              < np.uint64(threshold)))
            return struct.pack("<Q", count)
        if spec.name == "aggregate":
            total = np.uint64(0)
            count = 0
            for r in range(n):
                v = values_of(r)
                total = np.uint64((int(total) + int(v.sum(dtype=np.uint64))) & _M64)
                count += v.size
            return struct.pack("<QQ", int(total), count)
        if spec.name == "q1_like":
            sums = [0, 0, 0, 0]
            for r in range(n):
                v = values_of(r)
                for g in range(4):
                    part = v[(v & np.uint64(3)) == np.uint64(g)]
                    sums[g] = (sums[g] + int(part.sum(dtype=np.uint64))) & _M64
            return struct.pack("<QQQQ", *sums)
        total = 0  # arithmetic
        for r in range(n):
            v = values_of(r)
            total = (total + int((v * np.uint64(3) + np.uint64(7)).sum(dtype=np.uint64))) & _M64
        return struct.pack("<Q", total)
    if spec.kind == "join":
        build = int(n * spec.build_fraction)
        bitmap = np.zeros(65536, dtype=bool)
        for r in range(build):
            bitmap[(values_of(r) & np.uint64(0xFFFF)).astype(np.int64)] = True
        matches = 0
        for r in range(build, n):
            matches += int(np.count_nonzero(bitmap[(values_of(r) & np.uint64(0xFFFF)).astype(np.int64)]))
        return struct.pack("<Q", matches)
    if spec.kind == "txn":
        balance = 0
        for r in range(n):
            balance = (balance + int(values_of(r)[0]) % 1000) & _M64
        return struct.pack("<Q", balance)
    # text: word counting stand-in
    total = 0
    for r in range(n):
        total = (total + int((values_of(r) % np.uint64(97)).sum(dtype=np.uint64))) & _M64
    return struct.pack("<Q", total)


def verify_result(workload: str, dataset: Dataset, result: bytes) -> bool:
    """Recompute the answer directly over the dataset and compare."""
    return compute_result(workload, dataset) == result
