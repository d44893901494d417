"""Flash translation layer with per-task access control.

Mapping entries are packed 8-byte records:

    [valid:1][read_only:1][reserved:14][tee_id:8][ppa:40]

tee_id 0 is the FTL itself and bypasses permission checks (it must be able
to relocate any page during garbage collection).

Allocation and cleaning policy (the test oracle reimplements exactly this):

* Writes target a channel (explicit hint, else lpa modulo channel count).
  Within the channel, successive page allocations rotate round-robin
  across its dies (way interleaving), and each die keeps one active block,
  filled sequentially.  A new active block for a die is that die's free
  block with the lowest erase count, ties broken by the lowest block
  index; never-erased blocks therefore activate in index order.  If the
  rotation's die has no free block, the remaining dies are tried in
  rotation order.
* Before allocating, if the channel's free-block fraction is below the
  watermark, garbage collection runs in that channel: victim is the full
  block with the fewest valid pages (ties: lowest erase count, then lowest
  index); its valid pages migrate in page order through the normal
  allocator, then the block is erased.  GC stops when the watermark is
  met, or when the best victim has no invalid pages (no progress).  A
  block that has just filled becomes a GC candidate only once the next
  allocation replaces it as the active block.
* DeviceFull is raised when allocation finds no free block after GC.

Translation consults a cache of mapping-table page frames (512 entries per
4 KiB frame, LRU).  A miss costs a flash read of the mapping page; when
secure-world servicing is enabled it additionally pauses the caller for
two world switches (enter and leave the secure world).
"""

from __future__ import annotations

import heapq
from collections import OrderedDict
from dataclasses import dataclass

from .errors import ConfigError, DeviceFull, PermissionDenied, UnmappedLpa
from .flash import FlashArray, PPA_BITS
from .kernel import Kernel

ENTRY_BYTES = 8
ENTRIES_PER_FRAME = 512  # one 4 KiB mapping page

_PPA_MASK = (1 << PPA_BITS) - 1
_TEE_SHIFT = PPA_BITS
_TEE_MASK = 0xFF
_RO_BIT = 1 << 62
_VALID_BIT = 1 << 63

FTL_TEE_ID = 0


def pack_entry(ppa: int, tee_id: int, valid: bool = True, read_only: bool = False) -> int:
    if not 0 <= ppa <= _PPA_MASK:
        raise ValueError(f"ppa {ppa} does not fit in {PPA_BITS} bits")
    if not 0 <= tee_id <= _TEE_MASK:
        raise ValueError(f"tee_id {tee_id} does not fit in 8 bits")
    e = ppa | (tee_id << _TEE_SHIFT)
    if read_only:
        e |= _RO_BIT
    if valid:
        e |= _VALID_BIT
    return e


def entry_ppa(entry: int) -> int:
    return entry & _PPA_MASK


def entry_tee(entry: int) -> int:
    return (entry >> _TEE_SHIFT) & _TEE_MASK


def entry_valid(entry: int) -> bool:
    return bool(entry & _VALID_BIT)


def check_permission(entry: int, requester_tee_id: int) -> bool:
    """Allow iff the requester owns the entry or is the FTL itself."""
    return requester_tee_id == FTL_TEE_ID or entry_tee(entry) == requester_tee_id


@dataclass(frozen=True)
class GcConfig:
    free_block_low_watermark: float = 0.05

    def __post_init__(self):
        if not 0 < self.free_block_low_watermark < 1:
            raise ConfigError("watermark must be in (0, 1)")


class MappingCache:
    """LRU over mapping-table page frames resident in the protected region."""

    def __init__(self, capacity_frames: int):
        if capacity_frames < 1:
            raise ConfigError("mapping cache needs at least one frame")
        self.capacity = capacity_frames
        self._frames: OrderedDict[int, bool] = OrderedDict()
        self.hits = 0
        self.misses = 0

    def probe(self, frame: int) -> bool:
        if frame in self._frames:
            self._frames.move_to_end(frame)
            self.hits += 1
            return True
        self.misses += 1
        return False

    def install(self, frame: int) -> None:
        self._frames[frame] = True
        self._frames.move_to_end(frame)
        while len(self._frames) > self.capacity:
            self._frames.popitem(last=False)

    @property
    def resident(self) -> int:
        return len(self._frames)


@dataclass
class TranslateResult:
    ppa: int
    serviced_from: str  # "cache" or "secure_world"
    latency_ns: int
    completion: int


class Ftl:
    def __init__(self, kernel: Kernel, flash: FlashArray,
                 gc: GcConfig | None = None,
                 cache_frames: int | None = None,
                 secure_service: bool = False,
                 datapath=None):
        self.kernel = kernel
        self.flash = flash
        self.geometry = flash.geometry
        self.latency = flash.latency
        self.gc_config = gc or GcConfig()
        self.secure_service = secure_service
        # optional flash-datapath transform (the stream-cipher engine):
        # encode(ppa, erase_epoch, content) on program, decode(ppa, content)
        # on read; None stores content as given
        self.datapath = datapath
        self.table: dict[int, int] = {}
        self.logical_pages = self.geometry.total_pages
        frames_total = -(-self.logical_pages // ENTRIES_PER_FRAME)
        if cache_frames is None:
            cache_frames = max(1, frames_total // 16)
        self.cache = MappingCache(cache_frames)

        nch = self.geometry.channels
        self._blocks_per_channel = self.geometry.blocks_per_channel
        self._pages_per_block = self.geometry.pages_per_block
        self._ways = self.geometry.dies_per_channel
        self._blocks_per_die = self.geometry.planes_per_die * self.geometry.blocks_per_plane
        ndies = self.geometry.total_dies
        self._active: list[int | None] = [None] * ndies  # one per (channel, way)
        self._active_fill: list[int] = [0] * ndies
        self._next_virgin: list[int] = [d * self._blocks_per_die for d in range(ndies)]
        self._recycled: list[list[tuple[int, int]]] = [[] for _ in range(ndies)]
        self._rotation: list[int] = [0] * nch
        self._free_count: list[int] = [self._blocks_per_channel] * nch
        self._full_blocks: list[dict[int, bool]] = [{} for _ in range(nch)]

        self.translations = 0
        self.world_switches = 0
        self.gc_blocks_erased = 0
        self.gc_pages_migrated = 0
        self.gc_time_ns = 0

    # --- translation ---

    def translate(self, lpa: int, requester_tee_id: int, at: int) -> TranslateResult:
        if not 0 <= lpa < self.logical_pages:
            raise UnmappedLpa(f"lpa {lpa} outside logical space")
        self.translations += 1
        frame = lpa // ENTRIES_PER_FRAME
        if self.cache.probe(frame):
            completion = at + self.latency.dram_access_ns
            source = "cache"
        else:
            start = at
            if self.secure_service:
                self.world_switches += 2
                start += self.latency.world_switch_ns
            completion = self.flash.time_read(self._mapping_page_ppa(frame), start)
            if self.secure_service:
                completion += self.latency.world_switch_ns
            self.cache.install(frame)
            source = "secure_world"
        entry = self.table.get(lpa)
        if entry is None or not entry_valid(entry):
            raise UnmappedLpa(f"lpa {lpa} has no valid mapping")
        if not check_permission(entry, requester_tee_id):
            raise PermissionDenied(
                f"lpa {lpa} owned by tee {entry_tee(entry)}, requester {requester_tee_id}")
        return TranslateResult(entry_ppa(entry), source, completion - at, completion)

    def _mapping_page_ppa(self, frame: int) -> int:
        # Mapping pages are modeled for timing only: spread them across
        # channels and dies so misses contend like ordinary reads.
        ch = frame % self.geometry.channels
        die_in_ch = (frame // self.geometry.channels) % self.geometry.dies_per_channel
        blocks_per_die = self.geometry.planes_per_die * self.geometry.blocks_per_plane
        die_global = ch * self.geometry.dies_per_channel + die_in_ch
        return die_global * blocks_per_die * self._pages_per_block

    # --- ownership ---

    def set_id_bits(self, lpas, tee_id: int, at: int):
        """Set ownership bits for each LPA; conflicts are collected, not fatal.

        Returns (count_updated, conflicts, completion).
        """
        updated = 0
        conflicts = []
        for lpa in lpas:
            entry = self.table.get(lpa)
            if entry is None:
                self.table[lpa] = pack_entry(0, tee_id, valid=False)
                updated += 1
            else:
                owner = entry_tee(entry)
                if owner in (FTL_TEE_ID, tee_id):
                    self.table[lpa] = (entry & ~(_TEE_MASK << _TEE_SHIFT)) | (tee_id << _TEE_SHIFT)
                    updated += 1
                else:
                    conflicts.append(lpa)
        completion = at + len(lpas) * self.latency.dram_access_ns
        return updated, conflicts, completion

    def owner_of(self, lpa: int) -> int | None:
        entry = self.table.get(lpa)
        return None if entry is None else entry_tee(entry)

    # --- data path ---

    def decode_content(self, ppa: int, stored):
        return self.datapath.decode(ppa, stored) if self.datapath else stored

    def read_lpa(self, lpa: int, requester_tee_id: int, at: int):
        tr = self.translate(lpa, requester_tee_id, at)
        stored, completion = self.flash.read_page(tr.ppa, tr.completion)
        return self.decode_content(tr.ppa, stored), completion

    def write_lpa(self, lpa: int, content, requester_tee_id: int, at: int,
                  channel_hint: int | None = None, timed: bool = True
                  ) -> tuple[int, int]:
        """Out-of-place write; returns (new ppa, completion time)."""
        if not 0 <= lpa < self.logical_pages:
            raise UnmappedLpa(f"lpa {lpa} outside logical space")
        old = self.table.get(lpa)
        if old is not None and not check_permission(old, requester_tee_id):
            raise PermissionDenied(
                f"lpa {lpa} owned by tee {entry_tee(old)}, requester {requester_tee_id}")
        ch = channel_hint if channel_hint is not None else lpa % self.geometry.channels
        at = self._maybe_collect(ch, at, timed)
        ppa, at = self._allocate_page(ch, at)
        if self.datapath is not None:
            content = self.datapath.encode(ppa, self._erase_epoch(ppa), content)
        completion = self.flash.program_page(ppa, content, at, owner_lpa=lpa, timed=timed)
        if old is not None and entry_valid(old):
            self.flash.invalidate_page(entry_ppa(old))
        owner = requester_tee_id if old is None else entry_tee(old)
        self.table[lpa] = pack_entry(ppa, owner, valid=True)
        return ppa, completion

    def _erase_epoch(self, ppa: int) -> int:
        return self.flash.erase_count.get(self.flash.block_of(ppa), 0)

    # --- allocation ---

    def _allocate_page(self, ch: int, at: int) -> tuple[int, int]:
        start_way = self._rotation[ch] % self._ways
        for step in range(self._ways):
            way = (start_way + step) % self._ways
            die = ch * self._ways + way
            block = self._active[die]
            if block is None or self._active_fill[die] == self._pages_per_block:
                if block is not None:
                    self._full_blocks[ch][block] = True
                    self._active[die] = None
                block = self._pop_free_block(die)
                if block is None:
                    continue  # this die is exhausted; try the next way
                self._active[die] = block
                self._active_fill[die] = 0
                self._free_count[ch] -= 1
            self._rotation[ch] = way + 1  # next allocation starts one way later
            ppa = block * self._pages_per_block + self._active_fill[die]
            self._active_fill[die] += 1
            return ppa, at
        raise DeviceFull(f"channel {ch}: no free block")

    def _pop_free_block(self, die: int) -> int | None:
        heap = self._recycled[die]
        virgin = self._next_virgin[die]
        virgin_end = (die + 1) * self._blocks_per_die
        # Virgins have erase count 0, so they always precede recycled blocks.
        if virgin < virgin_end:
            self._next_virgin[die] = virgin + 1
            return virgin
        if heap:
            return heapq.heappop(heap)[1]
        return None

    def free_fraction(self, ch: int) -> float:
        return self._free_count[ch] / self._blocks_per_channel

    # --- garbage collection ---

    def _maybe_collect(self, ch: int, at: int, timed: bool) -> int:
        if self.free_fraction(ch) < self.gc_config.free_block_low_watermark:
            _, _, at = self.collect_garbage(at, channel=ch, timed=timed)
        return at

    def collect_garbage(self, at: int, channel: int | None = None, timed: bool = True):
        """Greedy cleaning; returns (blocks_erased, pages_migrated, completion)."""
        channels = range(self.geometry.channels) if channel is None else (channel,)
        erased = 0
        migrated = 0
        start = at
        for ch in channels:
            while self.free_fraction(ch) < self.gc_config.free_block_low_watermark:
                victim = self._pick_victim(ch)
                if victim is None:
                    break
                if self.flash.valid_count.get(victim, 0) == self._pages_per_block:
                    break  # nothing reclaimable
                moved, move_done = self._migrate_block(victim, ch, at, timed)
                migrated += moved
                at = max(move_done, self.flash.erase_block(victim, at, timed=timed))
                del self._full_blocks[ch][victim]
                self._free_count[ch] += 1
                heapq.heappush(self._recycled[self.flash.die_of_block(victim)],
                               (self.flash.erase_count[victim], victim))
                erased += 1
        self.gc_blocks_erased += erased
        self.gc_pages_migrated += migrated
        self.gc_time_ns += at - start
        return erased, migrated, at

    def _pick_victim(self, ch: int) -> int | None:
        best = None
        best_key = None
        for block in self._full_blocks[ch]:
            key = (self.flash.valid_count.get(block, 0),
                   self.flash.erase_count.get(block, 0),
                   block)
            if best_key is None or key < best_key:
                best, best_key = block, key
        return best

    def _migrate_block(self, victim: int, ch: int, at: int, timed: bool) -> tuple[int, int]:
        moved = 0
        done = at
        base = victim * self._pages_per_block
        for ppa in range(base, base + self._pages_per_block):
            if self.flash.page_state(ppa) != 1:  # PAGE_VALID
                continue
            lpa = self.flash.page_owner(ppa)
            if timed:
                content, t = self.flash.read_page(ppa, at)
            else:
                content, t = self.flash.page_content(ppa), at
            new_ppa, t = self._allocate_page(ch, t)
            if self.datapath is not None:
                # relocation re-keys the page under the new address's IV
                content = self.datapath.encode(
                    new_ppa, self._erase_epoch(new_ppa),
                    self.datapath.decode(ppa, content))
            done = max(done, self.flash.program_page(new_ppa, content, t,
                                                     owner_lpa=lpa, timed=timed))
            self.flash.invalidate_page(ppa)
            old = self.table[lpa]
            self.table[lpa] = pack_entry(new_ppa, entry_tee(old), valid=True)
            moved += 1
        return moved, done
