"""NAND flash array model: geometry, page/block state, and operation timing.

The default geometry is an enterprise 1 TiB drive: 8 channels, 4 chips per
channel, 4 dies per chip, 2 planes per die, 2048 blocks per plane, 512
pages per block, 4 KiB pages.  Dies are independent resources; each
channel is a separate transfer resource at 600 MB/s.  Page payloads are
stored as 64-bit digests by default; faithful mode keeps the real bytes so
the crypto pipeline can be checked end to end.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import (
    ConfigError,
    ProgramOutOfOrder,
    ProgramToNonFreePage,
    ReadOfFreePage,
    ReadOfInvalidPage,
)
from .kernel import Kernel, Resource

PAGE_FREE = 0
PAGE_VALID = 1
PAGE_INVALID = 2

PPA_BITS = 40  # fits 1 TiB of 4 KiB pages with headroom


def ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def transfer_ns(nbytes: int, bw_bytes_per_s: int) -> int:
    """Pure payload transfer time, rounded up to whole nanoseconds."""
    return ceil_div(nbytes * 1_000_000_000, bw_bytes_per_s)


@dataclass(frozen=True)
class FlashGeometry:
    channels: int = 8
    chips_per_channel: int = 4
    dies_per_chip: int = 4
    planes_per_die: int = 2
    blocks_per_plane: int = 2048
    pages_per_block: int = 512
    page_bytes: int = 4096

    def __post_init__(self):
        for name, v in self.__dict__.items():
            if v < 1:
                raise ConfigError(f"geometry field {name} must be >= 1, got {v}")
        if self.total_pages > (1 << PPA_BITS):
            raise ConfigError("geometry exceeds the 40-bit physical address space")

    @property
    def dies_per_channel(self) -> int:
        return self.chips_per_channel * self.dies_per_chip

    @property
    def total_dies(self) -> int:
        return self.channels * self.dies_per_channel

    @property
    def blocks_per_channel(self) -> int:
        return self.dies_per_channel * self.planes_per_die * self.blocks_per_plane

    @property
    def total_blocks(self) -> int:
        return self.channels * self.blocks_per_channel

    @property
    def total_pages(self) -> int:
        return self.total_blocks * self.pages_per_block

    @property
    def total_bytes(self) -> int:
        return self.total_pages * self.page_bytes


def total_capacity(geometry: FlashGeometry) -> int:
    return geometry.total_bytes


@dataclass(frozen=True)
class LatencyConfig:
    t_rd_ns: int = 50_000
    t_wr_ns: int = 300_000
    t_erase_ns: int = 3_000_000  # typical NAND value; not a measured figure
    channel_bw_bytes_per_s: int = 600_000_000
    dram_access_ns: int = 50
    dram_bw_bytes_per_s: int = 12_800_000_000  # DDR3-1600, one channel
    aes_pad_ns: int = 60
    mac_check_ns: int = 40
    world_switch_ns: int = 3_800
    tee_create_ns: int = 95_000
    tee_delete_ns: int = 58_000
    host_link_bw_bytes_per_s: int = 3_200_000_000  # PCIe-class cap, configurable

    def __post_init__(self):
        for name, v in self.__dict__.items():
            if v <= 0:
                raise ConfigError(f"latency field {name} must be positive, got {v}")


class PhysicalPageAddress:
    """Coordinate view of a flat page index for the active geometry."""

    __slots__ = ("channel", "chip", "die", "plane", "block", "page")

    def __init__(self, channel, chip, die, plane, block, page):
        self.channel = channel
        self.chip = chip
        self.die = die
        self.plane = plane
        self.block = block
        self.page = page

    def __repr__(self):
        return (f"PPA(ch={self.channel},chip={self.chip},die={self.die},"
                f"pl={self.plane},blk={self.block},pg={self.page})")


def ppa_decode(geometry: FlashGeometry, ppa: int) -> PhysicalPageAddress:
    if not 0 <= ppa < geometry.total_pages:
        raise ValueError(f"ppa {ppa} out of range")
    ppa, page = divmod(ppa, geometry.pages_per_block)
    ppa, block = divmod(ppa, geometry.blocks_per_plane)
    ppa, plane = divmod(ppa, geometry.planes_per_die)
    ppa, die = divmod(ppa, geometry.dies_per_chip)
    channel, chip = divmod(ppa, geometry.chips_per_channel)
    return PhysicalPageAddress(channel, chip, die, plane, block, page)


def ppa_encode(geometry: FlashGeometry, channel, chip, die, plane, block, page) -> int:
    idx = channel
    idx = idx * geometry.chips_per_channel + chip
    idx = idx * geometry.dies_per_chip + die
    idx = idx * geometry.planes_per_die + plane
    idx = idx * geometry.blocks_per_plane + block
    idx = idx * geometry.pages_per_block + page
    return idx


class FlashArray:
    """Page store plus the die/channel contention model.

    All timed operations queue on their die and channel at call time
    (request order equals FIFO order) and return the completion time;
    callers schedule their continuations off that.
    """

    def __init__(self, kernel: Kernel, geometry: FlashGeometry,
                 latency: LatencyConfig):
        self.kernel = kernel
        self.geometry = geometry
        self.latency = latency
        self.channel_res = [Resource(f"chan{i}") for i in range(geometry.channels)]
        self._die_res: dict[int, Resource] = {}
        # page index -> (state, owner_lpa); absent means Free with no owner
        self._pages: dict[int, tuple[int, int | None]] = {}
        self._data: dict[int, object] = {}  # digest int or bytes
        self._cursor: dict[int, int] = {}  # block index -> next program offset
        self.erase_count: dict[int, int] = {}
        self.valid_count: dict[int, int] = {}
        self._page_xfer_ns = transfer_ns(geometry.page_bytes,
                                         latency.channel_bw_bytes_per_s)

    # --- address helpers ---

    def block_of(self, ppa: int) -> int:
        return ppa // self.geometry.pages_per_block

    def channel_of_block(self, block: int) -> int:
        return block // self.geometry.blocks_per_channel

    def die_of_block(self, block: int) -> int:
        blocks_per_die = self.geometry.planes_per_die * self.geometry.blocks_per_plane
        return block // blocks_per_die

    def die_resource(self, die_idx: int) -> Resource:
        res = self._die_res.get(die_idx)
        if res is None:
            res = self._die_res[die_idx] = Resource(f"die{die_idx}")
        return res

    def page_state(self, ppa: int) -> int:
        return self._pages.get(ppa, (PAGE_FREE, None))[0]

    def page_content(self, ppa: int):
        return self._data[ppa]

    def page_owner(self, ppa: int) -> int | None:
        return self._pages.get(ppa, (PAGE_FREE, None))[1]

    # --- timed operations ---

    def read_page(self, ppa: int, at: int) -> tuple[object, int]:
        """Returns (stored content, completion time)."""
        state, _ = self._pages.get(ppa, (PAGE_FREE, None))
        if state == PAGE_FREE:
            raise ReadOfFreePage(f"ppa {ppa}")
        if state == PAGE_INVALID:
            raise ReadOfInvalidPage(f"ppa {ppa}")
        completion = self.time_read(ppa, at)
        return self._data[ppa], completion

    def time_read(self, ppa: int, at: int) -> int:
        """Timing of a page read without touching page state (used for
        mapping-table page fetches, which are modeled but not stored)."""
        block = self.block_of(ppa)
        die = self.die_resource(self.die_of_block(block))
        chan = self.channel_res[self.channel_of_block(block)]
        die_done = die.acquire(at, self.latency.t_rd_ns) + self.latency.t_rd_ns
        ch_done = chan.acquire(die_done, self._page_xfer_ns) + self._page_xfer_ns
        return ch_done

    def program_page(self, ppa: int, content, at: int, owner_lpa: int | None = None,
                     timed: bool = True) -> int:
        """Program a Free page at the block's cursor; returns completion time.

        timed=False performs the state change only (bulk dataset loads,
        whose cost is excluded from the measured phase).
        """
        state, _ = self._pages.get(ppa, (PAGE_FREE, None))
        if state != PAGE_FREE:
            raise ProgramToNonFreePage(f"ppa {ppa}")
        block = self.block_of(ppa)
        offset = ppa % self.geometry.pages_per_block
        cursor = self._cursor.get(block, 0)
        if offset != cursor:
            raise ProgramOutOfOrder(f"block {block}: page {offset}, cursor {cursor}")
        self._cursor[block] = cursor + 1
        self._pages[ppa] = (PAGE_VALID, owner_lpa)
        self._data[ppa] = content
        self.valid_count[block] = self.valid_count.get(block, 0) + 1
        if not timed:
            return at
        die = self.die_resource(self.die_of_block(block))
        chan = self.channel_res[self.channel_of_block(block)]
        ch_done = chan.acquire(at, self._page_xfer_ns) + self._page_xfer_ns
        die_done = die.acquire(ch_done, self.latency.t_wr_ns) + self.latency.t_wr_ns
        return die_done

    def invalidate_page(self, ppa: int) -> None:
        state, owner = self._pages.get(ppa, (PAGE_FREE, None))
        if state == PAGE_VALID:
            block = self.block_of(ppa)
            self.valid_count[block] -= 1
        self._pages[ppa] = (PAGE_INVALID, owner)

    def erase_block(self, block: int, at: int, timed: bool = True) -> int:
        base = block * self.geometry.pages_per_block
        for ppa in range(base, base + self.geometry.pages_per_block):
            self._pages.pop(ppa, None)
            self._data.pop(ppa, None)
        self._cursor[block] = 0
        self.valid_count[block] = 0
        self.erase_count[block] = self.erase_count.get(block, 0) + 1
        if not timed:
            return at
        die = self.die_resource(self.die_of_block(block))
        return die.acquire(at, self.latency.t_erase_ns) + self.latency.t_erase_ns

    @property
    def page_transfer_ns(self) -> int:
        return self._page_xfer_ns
