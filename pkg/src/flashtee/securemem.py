"""Secure in-storage DRAM model: hybrid-counter encryption plus integrity.

Pages register as read_only (data streamed in from flash) or writable (TEE
heap); the classification is fixed for the page's lifetime.

Counters follow the hybrid scheme: writable pages carry a split-counter
block (one 64-bit major plus one 7-bit minor per 64-byte line, exactly one
64-byte block per 4 KiB page), while read-only pages need only a major, so
eight read-only page counters pack into one 64-byte cache line.  Counter
lines live in a 128 KB 8-way LRU cache; a minor-counter overflow rolls the
major and re-encrypts the whole page.

Integrity uses two arity-8 Merkle trees over the counter lines (one per
page class) with per-line MACs over (line bytes, address, counter).  Tree
roots sit in a secure-register model; interior nodes are cached on chip,
and a verification walk stops at the first cached (trusted) ancestor while
a write updates the full path.  Per-line MACs are held in metadata bits
alongside the line, so checking one costs a metadata burst and a hash but
no extra bus traffic; counter and tree-node movement is what shows up as
extra memory traffic.

Traffic accounting buckets:
  encryption   = counter-line fetches and write-backs, and overflow
                 re-encryption data movement
  verification = tree-node fetches and write-backs
Both are reported relative to demand traffic (the movement a run without
memory protection would also perform).

With payloads=True the model keeps real line bytes, MACs, and tree digests
and genuinely verifies them (tamper injection works); the default mode
keeps only counters and cache/traffic state and charges identical timing.
"""

from __future__ import annotations

import hashlib
from collections import OrderedDict
from dataclasses import dataclass

from .errors import (
    ConfigError,
    IntegrityViolation,
    PayloadModeRequired,
    ReclassificationForbidden,
    WriteToReadOnly,
)

LINE_BYTES = 64
ARITY = 8
MINOR_BITS = 7
MINOR_LIMIT = 1 << MINOR_BITS  # overflow when a minor would reach this
RO_PAGES_PER_COUNTER_LINE = 8  # eight 64-bit majors per 64-byte line

READ_ONLY = "read_only"
WRITABLE = "writable"


@dataclass
class BatchCost:
    """What one page-granular secure-memory operation costs the caller."""
    port_bytes: int
    base_stall_ns: int
    enc_stall_ns: int
    verif_stall_ns: int

    @property
    def stall_ns(self) -> int:
        return self.base_stall_ns + self.enc_stall_ns + self.verif_stall_ns


class CounterCache:
    """8-way set-associative LRU over 64-byte counter lines."""

    def __init__(self, capacity_bytes: int = 131_072, ways: int = 8):
        if capacity_bytes % (LINE_BYTES * ways):
            raise ConfigError("counter cache must be a whole number of sets")
        self.sets = capacity_bytes // LINE_BYTES // ways
        self.ways = ways
        self._sets: list[OrderedDict[int, bool]] = [OrderedDict() for _ in range(self.sets)]
        self.lookups = 0
        self.hits = 0

    def probe(self, line_uid: int) -> bool:
        self.lookups += 1
        s = self._sets[line_uid % self.sets]
        if line_uid in s:
            s.move_to_end(line_uid)
            self.hits += 1
            return True
        return False

    def repeat_hits(self, line_uid: int, count: int) -> None:
        """Account `count` further lookups that hit the just-touched line."""
        self.lookups += count
        self.hits += count

    def insert(self, line_uid: int, dirty: bool) -> tuple[int, bool] | None:
        """Install a line; returns the evicted (uid, dirty) pair if any."""
        s = self._sets[line_uid % self.sets]
        s[line_uid] = dirty
        s.move_to_end(line_uid)
        if len(s) > self.ways:
            return s.popitem(last=False)
        return None

    def mark_dirty(self, line_uid: int) -> None:
        s = self._sets[line_uid % self.sets]
        if line_uid in s:
            s[line_uid] = True

    def flush(self) -> int:
        """Drop everything; returns the number of dirty lines written back."""
        dirty = 0
        for s in self._sets:
            dirty += sum(1 for d in s.values() if d)
            s.clear()
        return dirty

    @property
    def misses(self) -> int:
        return self.lookups - self.hits

    @property
    def resident_bytes(self) -> int:
        return sum(len(s) for s in self._sets) * LINE_BYTES


class NodeCache:
    """Plain LRU over integrity-tree nodes (on-chip, trusted once loaded)."""

    def __init__(self, capacity_nodes: int = 1024):
        self.capacity = capacity_nodes
        self._nodes: OrderedDict[tuple, bool] = OrderedDict()

    def probe(self, key: tuple) -> bool:
        if key in self._nodes:
            self._nodes.move_to_end(key)
            return True
        return False

    def insert(self, key: tuple, dirty: bool) -> tuple[tuple, bool] | None:
        self._nodes[key] = dirty
        self._nodes.move_to_end(key)
        if len(self._nodes) > self.capacity:
            return self._nodes.popitem(last=False)
        return None

    def mark_dirty(self, key: tuple) -> None:
        if key in self._nodes:
            self._nodes[key] = True

    def flush(self) -> None:
        self._nodes.clear()


class SecureMemory:
    def __init__(self, dram_access_ns: int = 50, aes_pad_ns: int = 60,
                 mac_check_ns: int = 40, counter_cache_bytes: int = 131_072,
                 tree_cache_nodes: int = 1024, page_bytes: int = 4096,
                 payloads: bool = False, mac_key: bytes = b"\x00" * 16):
        if page_bytes % LINE_BYTES:
            raise ConfigError("page size must be a multiple of the line size")
        self.dram_access_ns = dram_access_ns
        self.aes_pad_ns = aes_pad_ns
        self.mac_check_ns = mac_check_ns
        self.page_bytes = page_bytes
        self.lines_per_page = page_bytes // LINE_BYTES
        self.payloads = payloads
        self._mac_key = mac_key

        self.counter_cache = CounterCache(counter_cache_bytes)
        self.tree_cache = NodeCache(tree_cache_nodes)

        self._registry: dict[object, tuple[str, int]] = {}
        self.ro_majors: list[int] = []
        self.rw_majors: list[int] = []
        self.rw_minors: list[list[int]] = []

        # payload-mode state: real bytes, MACs, and tree digests
        self._ro_lines: list[bytearray] = []
        self._rw_lines: list[bytearray] = []
        self._ro_macs: list[list[bytes]] = []
        self._rw_macs: list[list[bytes]] = []
        self._leaf_digests: dict[str, list[bytes]] = {"ro": [], "rw": []}
        self._nodes: dict[str, list[list[bytes]]] = {"ro": [], "rw": []}
        self.roots: dict[str, bytes | None] = {"ro": None, "rw": None}

        # traffic and latency accounting
        self.demand_bytes = 0
        self.enc_extra_bytes = 0
        self.verif_extra_bytes = 0
        self.enc_lat_sum_ns = 0
        self.verif_lat_sum_ns = 0
        self.access_count = 0
        self.secure_reads = 0
        self.secure_writes = 0
        self.minor_overflows = 0
        self.enc_stall_ns = 0
        self.verif_stall_ns = 0
        self.last_write_interior_touched = 0

    # ------------------------------------------------------------------
    # registration and classification

    def classify_page(self, page_key) -> str:
        cls, _ = self._registry[page_key]
        return cls

    def register_ro_page(self, page_key, data: bytes | None = None) -> BatchCost:
        """Pages loaded from flash as TEE input: major counter only."""
        if page_key in self._registry:
            if self._registry[page_key][0] != READ_ONLY:
                raise ReclassificationForbidden(f"page {page_key!r} is writable")
            return BatchCost(0, 0, 0, 0)
        idx = self._register(page_key, READ_ONLY)
        line_uid = self._ro_line_uid(idx // RO_PAGES_PER_COUNTER_LINE)
        if idx % RO_PAGES_PER_COUNTER_LINE == 0:
            self._counter_insert(line_uid, dirty=True)
            self._tree_append_leaf("ro", idx // RO_PAGES_PER_COUNTER_LINE)
        else:
            self._touch_counter_for_write(line_uid)
            if self.payloads:
                self._leaf_recompute("ro", idx // RO_PAGES_PER_COUNTER_LINE)
                self._update_path_digests("ro", idx // RO_PAGES_PER_COUNTER_LINE)
        if self.payloads:
            if data is None or len(data) != self.page_bytes:
                raise PayloadModeRequired("payload mode needs real page bytes")
            self._ro_lines[idx] = bytearray(data)
            self._ro_macs[idx] = [self._line_mac(READ_ONLY, idx, ln)
                                  for ln in range(self.lines_per_page)]
        n = self.lines_per_page
        self.demand_bytes += self.page_bytes
        self.access_count += n
        self.secure_writes += n
        enc = self.aes_pad_ns
        verif = self.mac_check_ns
        self.enc_lat_sum_ns += self.aes_pad_ns * n
        self.verif_lat_sum_ns += self.mac_check_ns * n
        self.enc_stall_ns += enc
        self.verif_stall_ns += verif
        return BatchCost(self.page_bytes, self.dram_access_ns, enc, verif)

    def register_rw_page(self, page_key) -> BatchCost:
        """TEE heap pages: full split-counter block."""
        if page_key in self._registry:
            if self._registry[page_key][0] != WRITABLE:
                raise ReclassificationForbidden(f"page {page_key!r} is read-only")
            return BatchCost(0, 0, 0, 0)
        idx = self._register(page_key, WRITABLE)
        self._counter_insert(self._rw_line_uid(idx), dirty=True)
        self._tree_append_leaf("rw", idx)
        return BatchCost(0, 0, 0, 0)

    def _register(self, page_key, cls: str) -> int:
        prior = self._registry.get(page_key)
        if prior is not None:
            if prior[0] != cls:
                raise ReclassificationForbidden(
                    f"page {page_key!r} is {prior[0]}, cannot become {cls}")
            return prior[1]
        if cls == READ_ONLY:
            idx = len(self.ro_majors)
            self.ro_majors.append(0)
            if self.payloads:
                self._ro_lines.append(bytearray(self.page_bytes))
                self._ro_macs.append([])
        else:
            idx = len(self.rw_majors)
            self.rw_majors.append(0)
            self.rw_minors.append([0] * self.lines_per_page)
            if self.payloads:
                self._rw_lines.append(bytearray(self.page_bytes))
                self._rw_macs.append([self._line_mac(WRITABLE, idx, ln)
                                      for ln in range(self.lines_per_page)])
        self._registry[page_key] = (cls, idx)
        return idx

    def page_index(self, page_key) -> int:
        return self._registry[page_key][1]

    def page_bytes_of(self, page_key) -> bytes:
        """Current plaintext contents of a registered page (payload mode)."""
        if not self.payloads:
            raise PayloadModeRequired("page contents exist only in payload mode")
        cls, idx = self._registry[page_key]
        store = self._ro_lines if cls == READ_ONLY else self._rw_lines
        return bytes(store[idx])

    # ------------------------------------------------------------------
    # line-granular operations

    def secure_read(self, page_key, line_idx: int) -> tuple[int, int]:
        """Read one 64-byte line; returns (latency_ns, extra_traffic_bytes)."""
        cls, idx = self._registry[page_key]
        before = self.enc_extra_bytes + self.verif_extra_bytes
        latency = self._read_line(cls, idx, line_idx)
        self.demand_bytes += LINE_BYTES
        return latency, self.enc_extra_bytes + self.verif_extra_bytes - before

    def secure_write(self, page_key, line_idx: int, content: bytes | None = None
                     ) -> tuple[int, int]:
        """Write one 64-byte line of a writable page."""
        cls, idx = self._registry[page_key]
        if cls != WRITABLE:
            raise WriteToReadOnly(f"page {page_key!r} is read-only")
        before = self.enc_extra_bytes + self.verif_extra_bytes
        latency = self._write_line(idx, line_idx, content)
        self.demand_bytes += LINE_BYTES
        return latency, self.enc_extra_bytes + self.verif_extra_bytes - before

    def _read_line(self, cls: str, idx: int, line_idx: int) -> int:
        self.access_count += 1
        self.secure_reads += 1
        if cls == READ_ONLY:
            line_uid = self._ro_line_uid(idx // RO_PAGES_PER_COUNTER_LINE)
            leaf = idx // RO_PAGES_PER_COUNTER_LINE
            tree = "ro"
        else:
            line_uid = self._rw_line_uid(idx)
            leaf = idx
            tree = "rw"
        enc = self.aes_pad_ns
        verif = self.dram_access_ns + self.mac_check_ns  # MAC metadata burst + check
        if not self.counter_cache.probe(line_uid):
            enc += self.dram_access_ns
            self._account_counter_fill(line_uid, dirty=False)
            verif += self._verify_walk(tree, leaf)
        if self.payloads:
            self._check_mac(cls, idx, line_idx)
        self.enc_lat_sum_ns += enc
        self.verif_lat_sum_ns += verif
        return self.dram_access_ns + enc + verif

    def _write_line(self, idx: int, line_idx: int, content: bytes | None) -> int:
        self.access_count += 1
        self.secure_writes += 1
        line_uid = self._rw_line_uid(idx)
        enc = self.aes_pad_ns
        verif = self.mac_check_ns  # MAC recomputed over the new line
        if not self.counter_cache.probe(line_uid):
            enc += self.dram_access_ns
            self._account_counter_fill(line_uid, dirty=True)
            verif += self._verify_walk("rw", idx)
        else:
            self.counter_cache.mark_dirty(line_uid)
        minors = self.rw_minors[idx]
        minors[line_idx] += 1
        if minors[line_idx] >= MINOR_LIMIT:
            enc += self._overflow_reencrypt(idx)
        if self.payloads:
            if content is not None:
                self._rw_lines[idx][line_idx * LINE_BYTES:(line_idx + 1) * LINE_BYTES] = \
                    content.ljust(LINE_BYTES, b"\x00")[:LINE_BYTES]
            self._rw_macs[idx][line_idx] = self._line_mac(WRITABLE, idx, line_idx)
        verif += self._update_path("rw", idx)
        if self.payloads:
            self._leaf_recompute("rw", idx)
            self._update_path_digests("rw", idx)
        self.enc_lat_sum_ns += enc
        self.verif_lat_sum_ns += verif
        return enc + verif

    def _overflow_reencrypt(self, idx: int) -> int:
        """Minor overflow: roll the major, reset minors, re-encrypt the page."""
        self.minor_overflows += 1
        self.rw_majors[idx] += 1
        self.rw_minors[idx] = [0] * self.lines_per_page
        self.enc_extra_bytes += 2 * self.page_bytes  # read and rewrite every line
        if self.payloads:
            self._rw_macs[idx] = [self._line_mac(WRITABLE, idx, ln)
                                  for ln in range(self.lines_per_page)]
        return self.aes_pad_ns * self.lines_per_page

    # ------------------------------------------------------------------
    # page-granular batches (loop-equivalent, used by the runtime)

    def consume_ro_page(self, page_key) -> BatchCost:
        """The TEE streams one read-only input page (all lines, in order)."""
        cls, idx = self._registry[page_key]
        if cls != READ_ONLY:
            raise ValueError("consume_ro_page needs a read-only page")
        n = self.lines_per_page
        line_uid = self._ro_line_uid(idx // RO_PAGES_PER_COUNTER_LINE)
        enc_first = self.aes_pad_ns
        verif_first = self.dram_access_ns + self.mac_check_ns
        extra_before = self.enc_extra_bytes + self.verif_extra_bytes
        if not self.counter_cache.probe(line_uid):
            enc_first += self.dram_access_ns
            self._account_counter_fill(line_uid, dirty=False)
            verif_first += self._verify_walk("ro", idx // RO_PAGES_PER_COUNTER_LINE)
        self.counter_cache.repeat_hits(line_uid, n - 1)
        if self.payloads:
            for ln in range(n):
                self._check_mac(READ_ONLY, idx, ln)
        extras = self.enc_extra_bytes + self.verif_extra_bytes - extra_before
        self.demand_bytes += self.page_bytes
        self.access_count += n
        self.secure_reads += n
        self.enc_lat_sum_ns += enc_first + self.aes_pad_ns * (n - 1)
        self.verif_lat_sum_ns += verif_first + (self.dram_access_ns + self.mac_check_ns) * (n - 1)
        self.enc_stall_ns += enc_first
        self.verif_stall_ns += verif_first
        return BatchCost(self.page_bytes + extras, self.dram_access_ns,
                         enc_first, verif_first)

    def write_rw_lines(self, page_key, line_indices) -> BatchCost:
        """A burst of heap-line writes from one record's processing."""
        cls, idx = self._registry[page_key]
        if cls != WRITABLE:
            raise WriteToReadOnly(f"page {page_key!r} is read-only")
        extra_before = self.enc_extra_bytes + self.verif_extra_bytes
        enc_before, verif_before = self.enc_lat_sum_ns, self.verif_lat_sum_ns
        stall = 0
        for ln in line_indices:
            stall += self._write_line(idx, ln, None)
            self.demand_bytes += LINE_BYTES
        extras = self.enc_extra_bytes + self.verif_extra_bytes - extra_before
        enc_part = self.enc_lat_sum_ns - enc_before
        verif_part = self.verif_lat_sum_ns - verif_before
        self.enc_stall_ns += enc_part
        self.verif_stall_ns += verif_part
        nbytes = LINE_BYTES * len(line_indices) + extras
        return BatchCost(nbytes, 0, enc_part, verif_part)

    # ------------------------------------------------------------------
    # counter cache and tree mechanics

    def _ro_line_uid(self, ro_line: int) -> int:
        return ro_line * 2

    def _rw_line_uid(self, rw_idx: int) -> int:
        return rw_idx * 2 + 1

    def _counter_insert(self, line_uid: int, dirty: bool) -> None:
        evicted = self.counter_cache.insert(line_uid, dirty)
        if evicted is not None and evicted[1]:
            self.enc_extra_bytes += LINE_BYTES  # dirty counter write-back

    def _touch_counter_for_write(self, line_uid: int) -> None:
        if self.counter_cache.probe(line_uid):
            self.counter_cache.mark_dirty(line_uid)
        else:
            self._account_counter_fill(line_uid, dirty=True)

    def _account_counter_fill(self, line_uid: int, dirty: bool) -> None:
        self.enc_extra_bytes += LINE_BYTES
        self._counter_insert(line_uid, dirty)

    def _interior_levels(self, tree: str) -> int:
        n = len(self.ro_majors_lines()) if tree == "ro" else len(self.rw_majors)
        if n <= 0:
            return 0
        levels = 1
        while n > ARITY:
            n = -(-n // ARITY)
            levels += 1
        return levels

    def ro_majors_lines(self) -> range:
        return range(-(-len(self.ro_majors) // RO_PAGES_PER_COUNTER_LINE))

    def path_length(self, tree: str) -> int:
        return self._interior_levels(tree)

    def _verify_walk(self, tree: str, leaf: int) -> int:
        """Counter-miss verification: climb until a cached (trusted) node."""
        cost = 0
        node = leaf
        for level in range(1, self._interior_levels(tree) + 1):
            node //= ARITY
            key = (tree, level, node)
            cost += self.mac_check_ns
            if self.tree_cache.probe(key):
                break  # trusted ancestor already on chip
            self.verif_extra_bytes += LINE_BYTES
            cost += self.dram_access_ns
            self._node_insert(key, dirty=False)
        return cost

    def _update_path(self, tree: str, leaf: int) -> int:
        """Write path update: every interior node to the root is rehashed."""
        cost = 0
        node = leaf
        touched = 0
        for level in range(1, self._interior_levels(tree) + 1):
            node //= ARITY
            key = (tree, level, node)
            if not self.tree_cache.probe(key):
                self.verif_extra_bytes += LINE_BYTES
                cost += self.dram_access_ns
                self._node_insert(key, dirty=True)
            else:
                self.tree_cache.mark_dirty(key)
            cost += self.mac_check_ns
            touched += 1
        self.last_write_interior_touched = touched
        return cost

    def _node_insert(self, key: tuple, dirty: bool) -> None:
        evicted = self.tree_cache.insert(key, dirty)
        if evicted is not None and evicted[1]:
            self.verif_extra_bytes += LINE_BYTES  # dirty node write-back

    def _tree_append_leaf(self, tree: str, leaf: int) -> None:
        if self.payloads:
            digests = self._leaf_digests[tree]
            assert leaf == len(digests)
            digests.append(b"")
            self._leaf_recompute(tree, leaf)
            self._update_path_digests(tree, leaf)

    def flush_metadata_caches(self) -> None:
        """Model hook: drop on-chip counter/tree state so the next accesses
        refetch from (possibly tampered) DRAM."""
        dirty = self.counter_cache.flush()
        self.enc_extra_bytes += dirty * LINE_BYTES
        self.tree_cache.flush()

    # ------------------------------------------------------------------
    # payload-mode integrity: MACs, digests, verification, tampering

    def _line_bytes(self, cls: str, idx: int, line_idx: int) -> bytes:
        store = self._ro_lines if cls == READ_ONLY else self._rw_lines
        return bytes(store[idx][line_idx * LINE_BYTES:(line_idx + 1) * LINE_BYTES])

    def _line_counter(self, cls: str, idx: int, line_idx: int) -> tuple[int, int]:
        if cls == READ_ONLY:
            return self.ro_majors[idx], 0
        return self.rw_majors[idx], self.rw_minors[idx][line_idx]

    def _line_mac(self, cls: str, idx: int, line_idx: int) -> bytes:
        major, minor = self._line_counter(cls, idx, line_idx)
        h = hashlib.blake2b(key=self._mac_key, digest_size=8)
        h.update(self._line_bytes(cls, idx, line_idx))
        h.update(cls.encode())
        h.update(idx.to_bytes(8, "little"))
        h.update(line_idx.to_bytes(4, "little"))
        h.update(major.to_bytes(8, "little"))
        h.update(minor.to_bytes(2, "little"))
        return h.digest()

    def _check_mac(self, cls: str, idx: int, line_idx: int) -> None:
        stored = (self._ro_macs if cls == READ_ONLY else self._rw_macs)[idx][line_idx]
        if self._line_mac(cls, idx, line_idx) != stored:
            raise IntegrityViolation(f"MAC mismatch: {cls} page {idx} line {line_idx}")

    def _leaf_digest(self, tree: str, leaf: int) -> bytes:
        h = hashlib.blake2b(key=self._mac_key, digest_size=8)
        h.update(tree.encode())
        h.update(leaf.to_bytes(8, "little"))
        if tree == "ro":
            base = leaf * RO_PAGES_PER_COUNTER_LINE
            for i in range(base, min(base + RO_PAGES_PER_COUNTER_LINE, len(self.ro_majors))):
                h.update(self.ro_majors[i].to_bytes(8, "little"))
        else:
            h.update(self.rw_majors[leaf].to_bytes(8, "little"))
            for m in self.rw_minors[leaf]:
                h.update(m.to_bytes(1, "little"))
        return h.digest()

    def _leaf_recompute(self, tree: str, leaf: int) -> None:
        self._leaf_digests[tree][leaf] = self._leaf_digest(tree, leaf)

    def _node_digest(self, tree: str, level: int, index: int) -> bytes:
        below = self._leaf_digests[tree] if level == 1 else self._nodes[tree][level - 2]
        h = hashlib.blake2b(key=self._mac_key, digest_size=8)
        h.update(f"{tree}:{level}:{index}".encode())
        for child in range(index * ARITY, (index + 1) * ARITY):
            h.update(below[child] if child < len(below) else b"\x00" * 8)
        return h.digest()

    def _update_path_digests(self, tree: str, leaf: int) -> None:
        levels = self._interior_levels(tree)
        nodes = self._nodes[tree]
        while len(nodes) < levels:
            nodes.append([])
        idx = leaf
        for level in range(1, levels + 1):
            idx //= ARITY
            row = nodes[level - 1]
            while len(row) <= idx:
                row.append(b"\x00" * 8)
            row[idx] = self._node_digest(tree, level, idx)
        # rows above may have shrunk conceptually when levels grew; recompute tops
        for level in range(1, levels + 1):
            row = nodes[level - 1]
            expected = -(-len(self._leaf_digests[tree]) // (ARITY ** level))
            del row[expected:]
        self.roots[tree] = nodes[levels - 1][0] if nodes else None

    def verify_root(self, tree: str) -> None:
        """Full recomputation from counters; raises naming the first mismatch."""
        if not self.payloads:
            raise PayloadModeRequired("verify_root needs payload mode")
        leaves = self._leaf_digests[tree]
        if not leaves:
            raise ValueError(f"{tree} tree is empty")
        for leaf in range(len(leaves)):
            if self._leaf_digest(tree, leaf) != leaves[leaf]:
                raise IntegrityViolation(f"{tree} tree leaf {leaf} digest mismatch")
        levels = self._interior_levels(tree)
        for level in range(1, levels + 1):
            row = self._nodes[tree][level - 1]
            for index in range(len(row)):
                if self._node_digest(tree, level, index) != row[index]:
                    raise IntegrityViolation(
                        f"{tree} tree node level {level} index {index} mismatch")
        if self._nodes[tree][levels - 1][0] != self.roots[tree]:
            raise IntegrityViolation(f"{tree} tree root does not match secure register")

    # --- tamper injection (tests and the CLI demo) ---

    def corrupt_data_bit(self, page_key, line_idx: int, bit: int) -> None:
        cls, idx = self._registry[page_key]
        store = self._ro_lines if cls == READ_ONLY else self._rw_lines
        store[idx][line_idx * LINE_BYTES + bit // 8] ^= 1 << (bit % 8)

    def corrupt_mac_bit(self, page_key, line_idx: int, bit: int) -> None:
        cls, idx = self._registry[page_key]
        macs = self._ro_macs if cls == READ_ONLY else self._rw_macs
        mac = bytearray(macs[idx][line_idx])
        mac[bit // 8] ^= 1 << (bit % 8)
        macs[idx][line_idx] = bytes(mac)

    def corrupt_counter_bit(self, page_key, bit: int, line_idx: int = 0) -> None:
        cls, idx = self._registry[page_key]
        if cls == READ_ONLY:
            self.ro_majors[idx] ^= 1 << (bit % 64)
        elif bit < 64:
            self.rw_majors[idx] ^= 1 << bit
        else:
            self.rw_minors[idx][line_idx] ^= 1 << (bit % MINOR_BITS)

    def corrupt_node_bit(self, tree: str, level: int, index: int, bit: int) -> None:
        if level == 0:
            row = self._leaf_digests[tree]
        else:
            row = self._nodes[tree][level - 1]
        node = bytearray(row[index])
        node[bit // 8] ^= 1 << (bit % 8)
        row[index] = bytes(node)

    # ------------------------------------------------------------------
    # reporting

    def traffic_report(self) -> dict:
        demand = self.demand_bytes
        return {
            "demand_bytes": demand,
            "encryption_extra_bytes": self.enc_extra_bytes,
            "verification_extra_bytes": self.verif_extra_bytes,
            "encryption_extra_pct": 100.0 * self.enc_extra_bytes / demand if demand else 0.0,
            "verification_extra_pct": 100.0 * self.verif_extra_bytes / demand if demand else 0.0,
            "counter_lookups": self.counter_cache.lookups,
            "counter_hits": self.counter_cache.hits,
            "minor_overflows": self.minor_overflows,
        }

    def mean_enc_latency_ns(self) -> float:
        return self.enc_lat_sum_ns / self.access_count if self.access_count else 0.0

    def mean_verif_latency_ns(self) -> float:
        return self.verif_lat_sum_ns / self.access_count if self.access_count else 0.0
