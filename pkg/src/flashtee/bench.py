"""Scenario orchestration, run configuration, and report emission.

Four scenarios share one event-driven machinery:

  host      load over flash channels, through the DRAM buffer, out the
            host link; compute on one host core (a configurable multiple
            faster per record than a storage core)
  host_sgx  host, with every record's compute cost scaled by 2.03 exactly
  isc       in-storage compute on the core pool; no security machinery
  isc_tee   isc plus the trusted-execution stack: task lifecycle, mapping
            access control with world-switch miss servicing, the stream
            cipher on the flash datapath, and encrypted/verified DRAM

Reports are one CSV row per task.  Phase semantics: data_load and the
lifecycle/result columns are wall-clock segments; encryption/verification
overheads are the secure-memory stalls averaged over the worker pool plus
the DRAM-port time of their extra traffic, and compute is the compute-wall
remainder, so the phases always sum to at most the makespan.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, fields, replace

import numpy as np
import yaml

from .cipher import CipherKey, CipherTiming, IvFactory, PageCipher
from .errors import ConfigError, UnknownAxis
from .flash import FlashArray, FlashGeometry, LatencyConfig, transfer_ns
from .ftl import ENTRIES_PER_FRAME, Ftl, GcConfig
from .kernel import Kernel, Resource, ResourcePool, Rng
from .runtime import (
    MemoryRegionMap,
    OffloadRequest,
    RunEnv,
    ScenarioJob,
    TeeDescriptor,
    TeeRuntime,
)
from .securemem import SecureMemory
from .workloads import (
    FLUSH_SLOTS,
    AccessTrace,
    Dataset,
    compute_result,
    generate_trace,
    get_workload,
    mix64,
)

SCENARIOS = ("host", "host_sgx", "isc", "isc_tee")

SWEEP_AXES = {
    "channels": (4, 8, 16, 32),
    "t_rd_ns": (10_000, 30_000, 50_000, 70_000, 90_000, 110_000),
    "dram_gib": (2, 4),
    "tenants": (1, 2, 4),
}

DEFAULT_PROGRAM_BYTES = 256 << 10  # within the observed 28-528 KB range


@dataclass(frozen=True)
class RunConfig:
    geometry: FlashGeometry = field(default_factory=FlashGeometry)
    latency: LatencyConfig = field(default_factory=LatencyConfig)
    scenario: str = "isc_tee"
    workload: str = "arithmetic"
    seed: int = 1
    dataset_mib: int = 256
    tenants: int = 1
    tenant_offset: int = 0
    faithful: bool = False
    storage_cores: int = 8
    host_speed_multiplier: int = 3
    sgx_multiplier_x100: int = 203
    host_mem_ns: int = 100
    window: int = 0  # in-flight page reads during load; 0 sizes from geometry
    dram_gib: int = 4
    counter_cache_bytes: int = 131_072
    tree_cache_nodes: int = 1024
    mapping_cache_frames: int = 0  # 0 = derive from table size and DRAM
    gc_watermark: float = 0.05
    program_bytes: int = DEFAULT_PROGRAM_BYTES
    event_cap: int = 1_000_000_000

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        get_workload(self.workload)
        if self.tenants < 1:
            raise ConfigError("tenants must be >= 1")
        if self.dataset_mib < 0:
            raise ConfigError("dataset_mib must be >= 0")


_SECTION_TYPES = {"geometry": FlashGeometry, "latency": LatencyConfig}


def load_config(path: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Build a RunConfig from an optional YAML file plus flat overrides.

    The file has nested sections (geometry:, latency:, run:); overrides use
    dotted keys such as geometry.channels or bare run-level names, and win
    over file values.  Unknown keys are rejected.
    """
    data: dict = {}
    if path is not None:
        with open(path) as fh:
            loaded = yaml.safe_load(fh) or {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        data = loaded
    flat: dict = {}
    sections: dict[str, dict] = {}
    run_fields = {f.name for f in fields(RunConfig)} - set(_SECTION_TYPES)
    for key, value in data.items():
        if key in _SECTION_TYPES:
            if not isinstance(value, dict):
                raise ConfigError(f"section {key} must be a mapping")
            sections[key] = dict(value)
        elif key == "run":
            if not isinstance(value, dict):
                raise ConfigError("section run must be a mapping")
            for k, v in value.items():
                if k not in run_fields:
                    raise ConfigError(f"unknown run option {k!r}")
                flat[k] = v
        else:
            raise ConfigError(f"unknown config section {key!r}")
    for key, value in (overrides or {}).items():
        if "." in key:
            section, sub = key.split(".", 1)
            if section == "run":
                if sub not in run_fields:
                    raise ConfigError(f"unknown run option {sub!r}")
                flat[sub] = value
                continue
            if section not in _SECTION_TYPES:
                raise ConfigError(f"unknown config section {section!r}")
            sections.setdefault(section, {})[sub] = value
        elif key in run_fields:
            flat[key] = value
        else:
            raise ConfigError(f"unknown run option {key!r}")
    kwargs: dict = {}
    for name, cls in _SECTION_TYPES.items():
        params = sections.get(name, {})
        valid = {f.name for f in fields(cls)}
        unknown = set(params) - valid
        if unknown:
            raise ConfigError(f"unknown {name} option(s): {sorted(unknown)}")
        kwargs[name] = cls(**params)
    kwargs.update(flat)
    try:
        return RunConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


# ----------------------------------------------------------------------
# reports

REPORT_COLUMNS = [
    "scenario", "workload", "tenant", "tenants", "seed", "channels",
    "dataset_mib", "faithful", "aborted", "abort_cause",
    "makespan_ns", "data_load_ns", "compute_ns",
    "encryption_overhead_ns", "verification_overhead_ns",
    "lifecycle_ns", "result_return_ns", "records",
    "mapping_requests", "mapping_misses", "mapping_miss_rate",
    "world_switches", "counter_lookups", "counter_hits", "counter_hit_rate",
    "demand_traffic_bytes", "encryption_extra_bytes", "verification_extra_bytes",
    "encryption_extra_pct", "verification_extra_pct",
    "enc_latency_mean_ns", "verif_latency_mean_ns",
    "secure_reads", "secure_writes", "minor_overflows",
    "heap_line_writes", "flash_flushes", "gc_blocks_erased", "gc_pages_migrated",
    "host_bytes_moved",
]

_FLOAT_COLUMNS = {
    "mapping_miss_rate", "counter_hit_rate", "encryption_extra_pct",
    "verification_extra_pct", "enc_latency_mean_ns", "verif_latency_mean_ns",
}


@dataclass
class RunReport:
    scenario: str
    workload: str
    tenant: int
    tenants: int
    seed: int
    channels: int
    dataset_mib: int
    faithful: int
    aborted: int
    abort_cause: str
    makespan_ns: int
    data_load_ns: int
    compute_ns: int
    encryption_overhead_ns: int
    verification_overhead_ns: int
    lifecycle_ns: int
    result_return_ns: int
    records: int
    mapping_requests: int
    mapping_misses: int
    mapping_miss_rate: float
    world_switches: int
    counter_lookups: int
    counter_hits: int
    counter_hit_rate: float
    demand_traffic_bytes: int
    encryption_extra_bytes: int
    verification_extra_bytes: int
    encryption_extra_pct: float
    verification_extra_pct: float
    enc_latency_mean_ns: float
    verif_latency_mean_ns: float
    secure_reads: int
    secure_writes: int
    minor_overflows: int
    heap_line_writes: int
    flash_flushes: int
    gc_blocks_erased: int
    gc_pages_migrated: int
    host_bytes_moved: int

    def __post_init__(self):
        for rate in (self.mapping_miss_rate, self.counter_hit_rate):
            if not 0.0 <= rate <= 1.0:
                raise AssertionError(f"rate out of range: {rate}")
        if self.phases_sum_ns > self.makespan_ns:
            raise AssertionError(
                f"phases {self.phases_sum_ns} exceed makespan {self.makespan_ns}")

    @property
    def phases_sum_ns(self) -> int:
        return (self.data_load_ns + self.compute_ns + self.encryption_overhead_ns
                + self.verification_overhead_ns + self.lifecycle_ns
                + self.result_return_ns)

    def row(self) -> list[str]:
        out = []
        for col in REPORT_COLUMNS:
            v = getattr(self, col)
            out.append(f"{v:.6f}" if col in _FLOAT_COLUMNS else str(v))
        return out


def reports_to_csv(reports: list[RunReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in reports:
        w.writerow(r.row())
    return buf.getvalue()


def emit_report(reports: list[RunReport], path: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(reports_to_csv(reports))


def parse_report_csv(text: str) -> list[dict]:
    rows = list(csv.DictReader(io.StringIO(text)))
    for row in rows:
        for k, v in row.items():
            if k in _FLOAT_COLUMNS:
                row[k] = float(v)
            elif k not in ("scenario", "workload", "abort_cause"):
                row[k] = int(v)
    return rows


# ----------------------------------------------------------------------
# run machinery

class CipherDatapath:
    """Stream-cipher transform applied where the flash controller sits."""

    def __init__(self, cipher: PageCipher):
        self.cipher = cipher
        self._iv_by_ppa: dict[int, int] = {}

    def encode(self, ppa: int, erase_epoch: int, content):
        ct, iv, _ = self.cipher.encrypt_page(ppa, erase_epoch, content)
        self._iv_by_ppa[ppa] = iv
        return ct

    def decode(self, ppa: int, stored):
        return self.cipher.decrypt_page(self._iv_by_ppa[ppa], stored)


@dataclass
class RunOutcome:
    config: RunConfig
    reports: list[RunReport]
    results: dict[int, bytes]
    makespan_ns: int
    trace_lines: list[str]
    # live models, handy for tests and the selftest verb
    kernel: Kernel = field(repr=False, default=None)
    ftl: Ftl = field(repr=False, default=None)
    secmem: SecureMemory | None = field(repr=False, default=None)
    env: RunEnv = field(repr=False, default=None)

    def csv(self) -> str:
        return reports_to_csv(self.reports)


def _tenant_dataset(config: RunConfig, tenant: int) -> Dataset:
    pages = (config.dataset_mib << 20) // config.geometry.page_bytes
    stride = ((pages + FLUSH_SLOTS) // 4096 + 2) * 4096
    return Dataset(total_bytes=config.dataset_mib << 20,
                   page_bytes=config.geometry.page_bytes,
                   base_lpa=tenant * stride,
                   seed=mix64(config.seed ^ mix64(tenant)))


def _mapping_cache_frames(config: RunConfig, regions: MemoryRegionMap) -> int:
    if config.mapping_cache_frames:
        return config.mapping_cache_frames
    table_frames = -(-config.geometry.total_pages // ENTRIES_PER_FRAME)
    by_table = max(1, table_frames // 16)
    by_dram = max(1, regions.mapping_cache_bytes // config.geometry.page_bytes)
    return min(by_table, by_dram)


def run_scenario(config: RunConfig, collect_trace: bool = False) -> RunOutcome:
    """Execute one scenario for every tenant and assemble the reports."""
    kernel = Kernel(seed=config.seed, event_cap=config.event_cap)
    flash = FlashArray(kernel, config.geometry, config.latency)
    secured = config.scenario == "isc_tee"
    dram_bytes = config.dram_gib << 30
    regions = MemoryRegionMap(dram_bytes=dram_bytes,
                              secure_bytes=dram_bytes // 16,
                              protected_bytes=dram_bytes // 16)

    secmem = None
    cipher_page_ns = 0
    datapath = None
    if secured:
        secmem = SecureMemory(
            dram_access_ns=config.latency.dram_access_ns,
            aes_pad_ns=config.latency.aes_pad_ns,
            mac_check_ns=config.latency.mac_check_ns,
            counter_cache_bytes=config.counter_cache_bytes,
            tree_cache_nodes=config.tree_cache_nodes,
            page_bytes=config.geometry.page_bytes,
            payloads=config.faithful,
            mac_key=mix64(config.seed ^ 0x3AC).to_bytes(8, "little") * 2,
        )
        timing = CipherTiming()
        cipher_page_ns = timing.keystream_ns(config.geometry.page_bytes)
        if config.faithful:
            cipher = PageCipher(CipherKey.from_seed(config.seed),
                                IvFactory(Rng(config.seed).spawn(0x17)),
                                timing, config.geometry.page_bytes)
            datapath = CipherDatapath(cipher)

    ftl = Ftl(kernel, flash, GcConfig(config.gc_watermark),
              cache_frames=_mapping_cache_frames(config, regions),
              secure_service=secured, datapath=datapath)

    trace_lines: list[str] = []
    trace_fn = (lambda at, msg: trace_lines.append(f"{at:012d} {msg}")) if collect_trace else None

    window = config.window
    if window == 0:
        # enough in-flight reads to keep every channel's die pipeline fed
        xfer = transfer_ns(config.geometry.page_bytes,
                           config.latency.channel_bw_bytes_per_s)
        per_channel = min(config.geometry.dies_per_channel,
                          -(-config.latency.t_rd_ns // xfer) + 1) + 1
        window = config.geometry.channels * per_channel

    env = RunEnv(kernel, ftl, flash,
                 dram_port=Resource("dram_port"),
                 host_link=Resource("host_link"),
                 cores=ResourcePool("core", config.storage_cores),
                 host_core=Resource("host_core"),
                 latency=config.latency,
                 secmem=secmem,
                 cipher_page_ns=cipher_page_ns,
                 host_mem_ns=config.host_mem_ns,
                 host_speed_multiplier=config.host_speed_multiplier,
                 sgx_multiplier_x100=config.sgx_multiplier_x100,
                 window=window,
                 faithful=config.faithful,
                 trace_fn=trace_fn)

    tenant_ids = [config.tenant_offset + k + 1 for k in range(config.tenants)]
    datasets = {tid: _tenant_dataset(config, tid) for tid in tenant_ids}
    traces = {tid: generate_trace(config.workload, datasets[tid],
                                  mix64(config.seed ^ tid))
              for tid in tenant_ids}

    for tid in tenant_ids:
        _bulk_load(ftl, datasets[tid], config)

    results: dict[int, bytes] = {}
    descs: dict[int, TeeDescriptor] = {}
    result_done_at: dict[int, int] = {}

    if secured:
        runtime = TeeRuntime(env, regions)
        t = 0
        for tid in tenant_ids:
            ds = datasets[tid]
            req = OffloadRequest(tid=tid, program_bytes=config.program_bytes,
                                 lpas=list(range(ds.base_lpa, ds.base_lpa + ds.pages))
                                 + [ds.flush_base_lpa + s for s in range(FLUSH_SLOTS)],
                                 workload=config.workload)
            desc, ready_at = runtime.offload_code(req, t)
            descs[tid] = desc
            t = ready_at

            def finish(job, at, aborted, _tid=tid):
                desc = job.desc
                if aborted:
                    result_done_at[_tid] = at
                    return
                blob = _job_result(config, env, datasets[_tid])
                end = runtime.terminate_tee(_tid, blob, at)
                res, end = runtime.get_result(_tid, end)
                results[_tid] = res
                result_done_at[_tid] = end

            runtime.run_tee(tid, datasets[tid], traces[tid], ready_at, finish)
    else:
        for tid in tenant_ids:
            desc = TeeDescriptor(tid=0)
            desc.tid = 0
            descs[tid] = desc

            def finish(job, at, aborted, cause=None, _tid=tid):
                if aborted:
                    result_done_at[_tid] = at
                    return
                blob = _job_result(config, env, datasets[_tid])
                results[_tid] = blob
                end = at
                if config.scenario == "isc":
                    hold = transfer_ns(len(blob), config.latency.host_link_bw_bytes_per_s)
                    end = env.host_link.acquire(at, hold) + hold
                    env.host_bytes_moved += len(blob)
                result_done_at[_tid] = end

            job = ScenarioJob(env, config.scenario, datasets[tid], traces[tid],
                              descs[tid], on_done=finish)
            job.start(0)

    makespan = kernel.run_until_idle()

    reports = [
        _build_report(config, env, descs[tid], datasets[tid],
                      result_done_at.get(tid, makespan), tid)
        for tid in tenant_ids
    ]
    return RunOutcome(config=config, reports=reports, results=results,
                      makespan_ns=makespan, trace_lines=trace_lines,
                      kernel=kernel, ftl=ftl, secmem=secmem, env=env)


def _bulk_load(ftl: Ftl, dataset: Dataset, config: RunConfig) -> None:
    """Populate the dataset before the measured phase (untimed)."""
    for rec in range(dataset.pages):
        lpa = dataset.lpa_of(rec)
        content: object = dataset.page_payload(rec) if config.faithful \
            else dataset.page_digest(rec)
        ftl.write_lpa(lpa, content, 0, 0,
                      channel_hint=rec % config.geometry.channels, timed=False)


def _job_result(config: RunConfig, env: RunEnv, dataset: Dataset) -> bytes:
    if config.faithful and env.secmem is not None:
        secmem = env.secmem

        def values_of(rec: int):
            return np.frombuffer(secmem.page_bytes_of(dataset.lpa_of(rec)), dtype="<u8")

        return compute_result(config.workload, dataset, values_of)
    return compute_result(config.workload, dataset)


def _build_report(config: RunConfig, env: RunEnv, desc: TeeDescriptor,
                  dataset: Dataset, result_at: int, tenant: int) -> RunReport:
    secured = config.scenario == "isc_tee"
    begin = 0
    load = desc.load_end - desc.load_start
    compute_wall = desc.compute_end - desc.compute_start
    workers = 1 if config.scenario in ("host", "host_sgx") \
        else max(1, min(config.storage_cores, desc.records_done or 1))
    enc = verif = 0
    if secured:
        enc = desc.enc_stall_ns // workers + env.port_hold_ns(desc.enc_extra_bytes)
        verif = desc.verif_stall_ns // workers + env.port_hold_ns(desc.verif_extra_bytes)
    compute = max(0, compute_wall - enc - verif)
    lifecycle = (desc.load_start - begin) + (max(desc.finished_at, desc.compute_end)
                                             - desc.compute_end)
    result_return = max(0, result_at - max(desc.finished_at, desc.compute_end))
    makespan = result_at - begin

    translations = desc.translations
    misses = desc.mapping_misses
    sm = env.secmem
    lookups = sm.counter_cache.lookups if sm else 0
    hits = sm.counter_cache.hits if sm else 0
    demand = desc.demand_bytes
    world_switches = desc.world_switches

    return RunReport(
        scenario=config.scenario,
        workload=config.workload,
        tenant=tenant,
        tenants=config.tenants,
        seed=config.seed,
        channels=config.geometry.channels,
        dataset_mib=config.dataset_mib,
        faithful=int(config.faithful),
        aborted=int(desc.abort_cause is not None),
        abort_cause=desc.abort_cause or "",
        makespan_ns=makespan,
        data_load_ns=load,
        compute_ns=compute,
        encryption_overhead_ns=enc,
        verification_overhead_ns=verif,
        lifecycle_ns=lifecycle,
        result_return_ns=result_return,
        records=desc.records_done,
        mapping_requests=translations,
        mapping_misses=misses,
        mapping_miss_rate=misses / translations if translations else 0.0,
        world_switches=world_switches,
        counter_lookups=lookups,
        counter_hits=hits,
        counter_hit_rate=hits / lookups if lookups else 0.0,
        demand_traffic_bytes=demand,
        encryption_extra_bytes=desc.enc_extra_bytes,
        verification_extra_bytes=desc.verif_extra_bytes,
        encryption_extra_pct=100.0 * desc.enc_extra_bytes / demand if demand else 0.0,
        verification_extra_pct=100.0 * desc.verif_extra_bytes / demand if demand else 0.0,
        enc_latency_mean_ns=sm.mean_enc_latency_ns() if sm else 0.0,
        verif_latency_mean_ns=sm.mean_verif_latency_ns() if sm else 0.0,
        secure_reads=sm.secure_reads if sm else 0,
        secure_writes=sm.secure_writes if sm else 0,
        minor_overflows=sm.minor_overflows if sm else 0,
        heap_line_writes=desc.heap_line_writes,
        flash_flushes=desc.flash_flushes,
        gc_blocks_erased=env.ftl.gc_blocks_erased,
        gc_pages_migrated=env.ftl.gc_pages_migrated,
        host_bytes_moved=env.host_bytes_moved,
    )


def run_sweep(config: RunConfig, axis: str) -> list[RunReport]:
    """One run per axis point, same seed; reports sorted by axis value."""
    if axis not in SWEEP_AXES:
        raise UnknownAxis(f"{axis!r}; known: {', '.join(SWEEP_AXES)}")
    reports: list[RunReport] = []
    for value in SWEEP_AXES[axis]:
        reports.extend(run_scenario(sweep_point(config, axis, value)).reports)
    return reports


def sweep_point(config: RunConfig, axis: str, value) -> RunConfig:
    if axis == "channels":
        return replace(config, geometry=replace(config.geometry, channels=value))
    if axis == "t_rd_ns":
        return replace(config, latency=replace(config.latency, t_rd_ns=value))
    if axis == "dram_gib":
        return replace(config, dram_gib=value)
    if axis == "tenants":
        return replace(config, tenants=value)
    raise UnknownAxis(axis)
