"""Task lifecycle and the scenario execution engine.

A run proceeds in serial phases per task, which is how the comparison
figures break down: data load (flash to DRAM, and onward over the host
link for host scenarios), then compute (records consumed from DRAM by a
pool of cores).  Each phase is event-driven and contends for channels,
dies, the DRAM port, the host link, and cores, so concurrent tasks
interleave realistically.

Secured in-storage runs add the task lifecycle around those phases:
creation charges 95 us and two world switches, deletion 58 us and two
more; address-translation misses pause the task for a world-switch round
trip while the secure world fetches mapping pages; input pages flow
through the stream-cipher datapath and register as read-only secure
memory; heap writes go through the split-counter path.

Abort handling follows the three runtime failure classes: access-control
violation, corrupted task metadata, and program exception.  An aborted
task releases its heap immediately and schedules no further work.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import (
    AbortedByRuntime,
    AlreadyRetrieved,
    CreateFailed,
    InvalidState,
    NotReady,
    PermissionDenied,
    TidInUse,
)
from .flash import transfer_ns
from .workloads import AccessTrace, Dataset, HEAP_PAGE_SLOTS

CREATING = "Creating"
READY = "Ready"
RUNNING = "Running"
PAUSED = "Paused"
ABORTED = "Aborted"
TERMINATED = "Terminated"

_TRANSITIONS = {
    CREATING: {READY},
    READY: {RUNNING},
    RUNNING: {PAUSED, ABORTED, TERMINATED},
    PAUSED: {RUNNING, ABORTED},
    ABORTED: set(),
    TERMINATED: set(),
}

CAUSE_ACCESS_CONTROL = "AccessControlViolated"
CAUSE_METADATA = "MetadataCorrupted"
CAUSE_EXCEPTION = "ProgramException"

DEFAULT_HEAP_BYTES = HEAP_PAGE_SLOTS * 4096  # 16 MiB preallocated per task


@dataclass(frozen=True)
class MemoryRegionMap:
    """Normal/protected/secure split of the SSD DRAM."""
    dram_bytes: int = 4 << 30
    secure_bytes: int = 256 << 20
    protected_bytes: int = 256 << 20

    def __post_init__(self):
        if self.secure_bytes + self.protected_bytes >= self.dram_bytes:
            raise ValueError("regions exceed DRAM capacity")

    @property
    def normal_bytes(self) -> int:
        return self.dram_bytes - self.secure_bytes - self.protected_bytes

    @property
    def mapping_cache_bytes(self) -> int:
        return self.protected_bytes // 2


class NormalRegion:
    """Byte allocator for the normal region (task heaps and program images)."""

    def __init__(self, total_bytes: int):
        self.total_bytes = total_bytes
        self.free_bytes = total_bytes
        self.live: dict[int, int] = {}

    def alloc(self, tid: int, nbytes: int) -> None:
        if nbytes > self.free_bytes:
            raise CreateFailed(
                f"task {tid} needs {nbytes} bytes, {self.free_bytes} free")
        self.free_bytes -= nbytes
        self.live[tid] = self.live.get(tid, 0) + nbytes

    def release(self, tid: int) -> None:
        self.free_bytes += self.live.pop(tid, 0)


@dataclass
class OffloadRequest:
    tid: int
    program_bytes: int
    lpas: list[int]
    workload: str


@dataclass
class TeeDescriptor:
    tid: int
    state: str = CREATING
    program_bytes: int = 0
    heap_bytes: int = DEFAULT_HEAP_BYTES
    lpa_grant: list[int] = field(default_factory=list, repr=False)
    result: bytes | None = None
    result_retrieved: bool = False
    abort_cause: str | None = None
    metadata_corrupted: bool = False  # tamper-injection hook
    # accounting
    created_at: int = 0
    load_start: int = 0
    load_end: int = 0
    compute_start: int = 0
    compute_end: int = 0
    finished_at: int = 0
    translations: int = 0
    mapping_misses: int = 0
    world_switches: int = 0
    pages_loaded: int = 0
    records_done: int = 0
    heap_line_writes: int = 0
    flash_flushes: int = 0
    enc_stall_ns: int = 0
    verif_stall_ns: int = 0
    enc_extra_bytes: int = 0
    verif_extra_bytes: int = 0
    demand_bytes: int = 0

    def transition(self, new_state: str) -> None:
        if new_state not in _TRANSITIONS[self.state]:
            raise InvalidState(f"task {self.tid}: {self.state} -> {new_state}")
        self.state = new_state


class RunEnv:
    """Everything a scenario job needs; built once per run by the bench."""

    def __init__(self, kernel, ftl, flash, dram_port, host_link, cores,
                 host_core, latency, secmem=None, cipher_page_ns: int = 0,
                 host_mem_ns: int = 100, host_speed_multiplier: int = 3,
                 sgx_multiplier_x100: int = 203, window: int = 64,
                 faithful: bool = False, trace_fn=None):
        self.kernel = kernel
        self.ftl = ftl
        self.flash = flash
        self.dram_port = dram_port
        self.host_link = host_link
        self.cores = cores
        self.host_core = host_core
        self.latency = latency
        self.secmem = secmem
        self.cipher_page_ns = cipher_page_ns
        self.host_mem_ns = host_mem_ns
        self.host_speed_multiplier = host_speed_multiplier
        self.sgx_multiplier_x100 = sgx_multiplier_x100
        self.window = window
        self.faithful = faithful
        self.trace_fn = trace_fn
        self.dram_bw = latency.dram_bw_bytes_per_s
        self.host_bytes_moved = 0

    def log(self, at: int, msg: str) -> None:
        if self.trace_fn is not None:
            self.trace_fn(at, msg)

    def port_hold_ns(self, nbytes: int) -> int:
        return transfer_ns(nbytes, self.dram_bw)


class ScenarioJob:
    """One task's load and compute phases under a given scenario."""

    def __init__(self, env: RunEnv, scenario: str, dataset: Dataset,
                 trace: AccessTrace, desc: TeeDescriptor, on_done=None):
        if scenario not in ("host", "host_sgx", "isc", "isc_tee"):
            raise ValueError(f"unknown scenario {scenario!r}")
        self.env = env
        self.scenario = scenario
        self.secured = scenario == "isc_tee"
        self.on_host = scenario in ("host", "host_sgx")
        self.dataset = dataset
        self.trace = trace
        self.desc = desc
        self.on_done = on_done
        spec = trace.spec
        self._c_arm = spec.storage_compute_ns
        self._c_host = spec.host_compute_ns(env.host_speed_multiplier)
        self._records = trace.records
        self._next_load = 0
        self._inflight = 0
        self._loaded = 0
        self._next_rec = 0
        self._workers_left = 0
        self._stopped = False

    # --- phase driving ---

    def start(self, at: int) -> None:
        self.desc.load_start = at
        self.env.log(at, f"tid={self.desc.tid} load_start")
        if self._records == 0:
            self._finish_load(at)
            return
        self.env.kernel.schedule_at(at, "job.issue", self._issue)

    def _issue(self) -> None:
        env = self.env
        while (not self._stopped and self._inflight < env.window
               and self._next_load < self._records):
            i = self._next_load
            self._next_load += 1
            self._inflight += 1
            try:
                done = self._load_chain(i, env.kernel.now)
            except PermissionDenied:
                self._abort(CAUSE_ACCESS_CONTROL)
                return
            env.kernel.schedule_at(done, "job.page", self._page_done)

    def _page_done(self) -> None:
        self._inflight -= 1
        if self._stopped:
            return
        self._loaded += 1
        self.desc.pages_loaded += 1
        if self._loaded == self._records:
            self._finish_load(self.env.kernel.now)
        else:
            self._issue()

    def _finish_load(self, at: int) -> None:
        self.desc.load_end = at
        self.desc.compute_start = at
        self.env.log(at, f"tid={self.desc.tid} compute_start")
        if self._records == 0:
            self._finish_compute(at)
            return
        workers = 1 if self.on_host else len(self.env.cores.members)
        self._workers_left = min(workers, self._records)
        for _ in range(self._workers_left):
            self.env.kernel.schedule_at(at, "job.worker", self._worker)

    def _worker(self) -> None:
        if self._stopped:
            return
        if self.secured and self.desc.metadata_corrupted:
            self._abort(CAUSE_METADATA)
            return
        i = self._next_rec
        if i >= self._records:
            self._workers_left -= 1
            if self._workers_left == 0:
                self._finish_compute(self.env.kernel.now)
            return
        self._next_rec += 1
        done = self._consume_chain(i, self.env.kernel.now)
        self.desc.records_done += 1
        self.env.kernel.schedule_at(done, "job.record", self._worker)

    def _finish_compute(self, at: int) -> None:
        self.desc.compute_end = at
        self.env.log(at, f"tid={self.desc.tid} compute_end")
        if self.on_done is not None:
            self.on_done(self, at, False)

    def _abort(self, cause: str) -> None:
        self._stopped = True
        at = self.env.kernel.now
        self.desc.compute_end = max(self.desc.compute_end, at)
        if self.desc.load_end == 0:
            self.desc.load_end = at
        self.env.log(at, f"tid={self.desc.tid} abort cause={cause}")
        if self.on_done is not None:
            self.on_done(self, at, True, cause)

    # --- per-record chains ---

    def _load_chain(self, i: int, t: int) -> int:
        env = self.env
        lpa = self.dataset.lpa_of(i)
        tr = env.ftl.translate(lpa, self.desc.tid, t)
        self.desc.translations += 1
        if tr.serviced_from == "secure_world":
            self.desc.mapping_misses += 1
            if self.secured:
                self.desc.world_switches += 2
        stored, t2 = env.flash.read_page(tr.ppa, tr.completion)
        if self.secured:
            t2 += env.cipher_page_ns
            payload = env.ftl.decode_content(tr.ppa, stored) if env.faithful else None
            before_e, before_v = self._stall_snapshot()
            cost = env.secmem.register_ro_page(lpa, payload)
            self._stall_delta(before_e, before_v)
            port_bytes = cost.port_bytes
            stall = cost.stall_ns
        else:
            port_bytes = self.dataset.page_bytes
            stall = 0
        self.desc.demand_bytes += self.dataset.page_bytes
        hold = env.port_hold_ns(port_bytes)
        t3 = env.dram_port.acquire(t2, hold) + hold + stall
        if self.on_host:
            link_hold = transfer_ns(self.dataset.page_bytes,
                                    env.latency.host_link_bw_bytes_per_s)
            t3 = env.host_link.acquire(t3, link_hold) + link_hold
            env.host_bytes_moved += self.dataset.page_bytes
        return t3

    def _consume_chain(self, i: int, t: int) -> int:
        env = self.env
        rec = self.trace.order[i]
        lines = self.trace.heap_lines(rec)
        if self.on_host:
            total = env.host_mem_ns + self._c_host + len(lines) * env.host_mem_ns
            if self.scenario == "host_sgx":
                total = total * env.sgx_multiplier_x100 // 100
            g = env.host_core.acquire(t, total)
            self.desc.heap_line_writes += len(lines)
            return g + total
        lpa = self.dataset.lpa_of(rec)
        if self.secured:
            before_e, before_v = self._stall_snapshot()
            cost = env.secmem.consume_ro_page(lpa)
            wbytes, wstall = self._heap_writes(rec, lines)
            self._stall_delta(before_e, before_v)
            port_bytes = cost.port_bytes + wbytes
            fill = cost.stall_ns
        else:
            wbytes, wstall = self._heap_writes(rec, lines)
            port_bytes = self.dataset.page_bytes + wbytes
            fill = env.latency.dram_access_ns
        self.desc.demand_bytes += self.dataset.page_bytes
        # the record's whole DRAM movement (demand fill, counter and tree
        # traffic, heap write-backs) is one port reservation
        hold = env.port_hold_ns(port_bytes)
        t1 = env.dram_port.acquire(t, hold) + hold + fill
        g = env.cores.acquire(t1, self._c_arm)
        t2 = g + self._c_arm + wstall
        if self.trace.flushes(rec):
            t2 = self._flush(rec, t2)
        return t2

    def _heap_writes(self, rec: int, lines: list[tuple[int, int]]) -> tuple[int, int]:
        """Heap-line writes for one record; returns (port_bytes, stall_ns)."""
        if not lines:
            return 0, 0
        env = self.env
        self.desc.heap_line_writes += len(lines)
        self.desc.demand_bytes += 64 * len(lines)
        if not self.secured:
            return 64 * len(lines), len(lines) * env.latency.dram_access_ns
        by_slot: dict[int, list[int]] = {}
        for slot, line in lines:
            by_slot.setdefault(slot, []).append(line)
        port_bytes = 0
        stall = 0
        for slot, slot_lines in by_slot.items():
            cost = env.secmem.write_rw_lines(("heap", self.desc.tid, slot), slot_lines)
            port_bytes += cost.port_bytes
            stall += cost.stall_ns
        return port_bytes, stall

    def _flush(self, rec: int, t: int) -> int:
        env = self.env
        self.desc.flash_flushes += 1
        lpa = self.trace.flush_lpa(rec)
        content: object = bytes(self.dataset.page_bytes) if env.faithful \
            else self.dataset.page_digest(rec) ^ 0xF1A5
        _, done = env.ftl.write_lpa(lpa, content, self.desc.tid, t)
        return done

    # --- secure-memory attribution ---

    def _stall_snapshot(self):
        sm = self.env.secmem
        return ((sm.enc_stall_ns, sm.enc_extra_bytes),
                (sm.verif_stall_ns, sm.verif_extra_bytes))

    def _stall_delta(self, before_e, before_v) -> None:
        sm = self.env.secmem
        self.desc.enc_stall_ns += sm.enc_stall_ns - before_e[0]
        self.desc.enc_extra_bytes += sm.enc_extra_bytes - before_e[1]
        self.desc.verif_stall_ns += sm.verif_stall_ns - before_v[0]
        self.desc.verif_extra_bytes += sm.verif_extra_bytes - before_v[1]


class TeeRuntime:
    """Lifecycle manager for secured in-storage tasks."""

    def __init__(self, env: RunEnv, regions: MemoryRegionMap):
        self.env = env
        self.regions = regions
        self.normal = NormalRegion(regions.normal_bytes)
        self.tasks: dict[int, TeeDescriptor] = {}
        self.lifecycle_switches = 0

    def offload_code(self, req: OffloadRequest, at: int) -> tuple[TeeDescriptor, int]:
        """Transfer the program, create the task, grant its pages."""
        if req.tid in self.tasks:
            raise TidInUse(f"tid {req.tid}")
        if req.tid == 0:
            raise ValueError("tid 0 is reserved for the FTL")
        link_hold = transfer_ns(req.program_bytes,
                                self.env.latency.host_link_bw_bytes_per_s)
        t = self.env.host_link.acquire(at, link_hold) + link_hold
        self.env.host_bytes_moved += req.program_bytes
        desc, t = self.create_tee(req.tid, req.program_bytes, t)
        _, conflicts, t = self.env.ftl.set_id_bits(req.lpas, req.tid, t)
        if conflicts:
            raise PermissionDenied(f"{len(conflicts)} granted LPAs owned elsewhere")
        desc.lpa_grant = list(req.lpas)
        desc.transition(READY)
        self.env.log(t, f"tid={req.tid} ready")
        return desc, t

    def create_tee(self, tid: int, program_bytes: int, at: int) -> tuple[TeeDescriptor, int]:
        desc = TeeDescriptor(tid=tid, program_bytes=program_bytes)
        self.normal.alloc(tid, program_bytes + desc.heap_bytes)
        if self.env.secmem is not None:
            for slot in range(desc.heap_bytes // 4096):
                self.env.secmem.register_rw_page(("heap", tid, slot))
        desc.created_at = at
        desc.world_switches += 2
        self.lifecycle_switches += 2
        self.tasks[tid] = desc
        t = at + self.env.latency.tee_create_ns
        self.env.log(t, f"tid={tid} created")
        return desc, t

    def run_tee(self, tid: int, dataset: Dataset, trace: AccessTrace,
                at: int, on_done) -> ScenarioJob:
        desc = self.tasks[tid]
        desc.transition(RUNNING)
        job = ScenarioJob(self.env, "isc_tee", dataset, trace, desc,
                          on_done=self._wrap_done(on_done))
        job.start(at)
        return job

    def _wrap_done(self, on_done):
        def handler(job, at, aborted, cause=None):
            desc = job.desc
            if aborted:
                self.throw_out_tee(desc.tid, cause)
            on_done(job, at, aborted)
        return handler

    def throw_out_tee(self, tid: int, cause: str) -> None:
        desc = self.tasks[tid]
        if desc.state not in (RUNNING, PAUSED):
            raise InvalidState(f"cannot abort task {tid} in state {desc.state}")
        desc.transition(ABORTED)
        desc.abort_cause = cause
        desc.result = None  # partial results are discarded
        self.normal.release(tid)
        self.env.log(self.env.kernel.now, f"tid={tid} thrown_out cause={cause}")

    def terminate_tee(self, tid: int, result: bytes, at: int) -> int:
        desc = self.tasks[tid]
        if desc.state != RUNNING:
            raise InvalidState(f"cannot terminate task {tid} in state {desc.state}")
        desc.result = result  # copied into the secure metadata region
        desc.transition(TERMINATED)
        desc.world_switches += 2
        self.lifecycle_switches += 2
        self.normal.release(tid)
        t = at + self.env.latency.tee_delete_ns
        desc.finished_at = t
        self.env.log(t, f"tid={tid} terminated")
        return t

    def get_result(self, tid: int, at: int) -> tuple[bytes, int]:
        desc = self.tasks[tid]
        if desc.state != TERMINATED:
            raise NotReady(f"task {tid} is {desc.state}")
        if desc.result_retrieved:
            raise AlreadyRetrieved(f"task {tid}")
        desc.result_retrieved = True
        nbytes = len(desc.result or b"")
        if nbytes:
            hold = transfer_ns(nbytes, self.env.latency.host_link_bw_bytes_per_s)
            at = self.env.host_link.acquire(at, hold) + hold
            self.env.host_bytes_moved += nbytes
        return desc.result or b"", at

    def raise_abort(self, tid: int) -> None:
        desc = self.tasks[tid]
        raise AbortedByRuntime(tid, desc.abort_cause or CAUSE_EXCEPTION)
