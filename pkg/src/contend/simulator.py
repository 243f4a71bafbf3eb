"""Trace-driven model of a shared banked set-associative cache plus a
finite-bandwidth memory controller.

Timing model: every thread is in-order and blocking.  A hit lets the thread
issue its next access hit_latency cycles later.  A miss enqueues one line
fetch into a single FIFO memory controller that starts at most one request
every mc_service_interval cycles; the fetch completes mem_latency cycles
after it is dequeued and the thread resumes then.  Replacement is true LRU
per set, writes allocate, and dirty evictions optionally consume a
controller slot.  Ties between threads ready in the same cycle go to the
lowest (workload, thread) id, so runs are bit-deterministic.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

from .geometry import CacheGeometry, bank_of, set_of, validate_geometry
from .patterns import WorkloadSpec, iter_ops, validate_workload


class SimulationError(ValueError):
    """Raised for invalid simulator configurations or workload placement."""


@dataclass(frozen=True)
class SimConfig:
    geometry: CacheGeometry
    hit_latency: int = 3
    mem_latency: int = 100
    mc_service_interval: int = 12
    writeback_counts_as_slot: bool = True
    per_thread_event_budget: int = 100_000
    record_hit_miss: bool = False

    def __post_init__(self):
        validate_geometry(self.geometry)
        if self.hit_latency < 1:
            raise SimulationError("hit_latency must be >= 1")
        if self.mem_latency < self.hit_latency:
            raise SimulationError("mem_latency must be >= hit_latency")
        if self.mc_service_interval < 1:
            raise SimulationError("mc_service_interval must be >= 1")
        if self.per_thread_event_budget < 1:
            raise SimulationError("per_thread_event_budget must be >= 1")


@dataclass(frozen=True)
class WorkloadMetrics:
    name: str
    accesses: int
    hits: int
    misses: int
    mpka: float
    lines_fetched: int
    lines_written_back: int
    elapsed_cycles: int
    bandwidth_share: float
    normalized_performance: float


@dataclass(frozen=True)
class SimResult:
    workloads: tuple[WorkloadMetrics, ...]
    elapsed_cycles: int           # whole run, including MC drain of the last slot
    mc_serviced_lines: int
    # per-workload per-thread hit/miss labels, only when cfg.record_hit_miss
    hit_miss: dict = field(default_factory=dict, compare=False)

    def metrics(self, name: str) -> WorkloadMetrics:
        for m in self.workloads:
            if m.name == name:
                return m
        raise KeyError(name)


class LruBankedCache:
    """Functional hit/miss state of the shared cache (no timing).

    One dict per (bank, set); insertion order is recency order, oldest first.
    Values are dirty flags.
    """

    __slots__ = ("sets", "assoc", "_line_shift", "_bank_lo", "_bank_mask",
                 "_set_lo", "_set_mask", "_spb")

    def __init__(self, g: CacheGeometry):
        self.assoc = g.associativity
        self.sets = [dict() for _ in range(g.num_banks * g.sets_per_bank)]
        self._line_shift = g.line_size.bit_length() - 1
        self._bank_lo = g.bank_bits.lo if g.bank_bits is not None else 0
        self._bank_mask = g.num_banks - 1 if g.bank_bits is not None else 0
        self._set_lo = g.set_bits.lo
        self._set_mask = g.sets_per_bank - 1
        self._spb = g.sets_per_bank

    def access(self, addr: int, is_write: bool) -> tuple[bool, bool]:
        """Returns (hit, dirty_line_evicted); allocates on miss."""
        idx = (((addr >> self._bank_lo) & self._bank_mask) * self._spb
               + ((addr >> self._set_lo) & self._set_mask))
        s = self.sets[idx]
        line = addr >> self._line_shift
        if line in s:
            dirty = s.pop(line)
            s[line] = dirty or is_write   # reinsertion refreshes recency
            return True, False
        wrote_back = False
        if len(s) == self.assoc:
            victim = next(iter(s))
            wrote_back = s.pop(victim)
        s[line] = is_write
        return False, wrote_back


def _check_placement(workloads: list[WorkloadSpec], g: CacheGeometry) -> None:
    if len({w.name for w in workloads}) != len(workloads):
        raise SimulationError("workload names must be unique within a run")
    spans = []
    for w in workloads:
        validate_workload(w, g.line_size)
        spans.extend((lo, hi, w.name) for lo, hi in w.arena_intervals())
    spans.sort()
    for (a0, a1, an), (b0, _, bn) in zip(spans, spans[1:]):
        if b0 < a1:
            raise SimulationError(
                f"arenas of {an!r} and {bn!r} overlap at {b0:#x}"
            )


def _run(workloads: list[WorkloadSpec], cfg: SimConfig) -> dict:
    """One raw timed run; returns per-workload counters and timings."""
    g = cfg.geometry
    _check_placement(workloads, g)

    cache = LruBankedCache(g)
    hit_latency = cfg.hit_latency
    mem_latency = cfg.mem_latency
    interval = cfg.mc_service_interval
    wb_slot = cfg.writeback_counts_as_slot
    budget = cfg.per_thread_event_budget
    record = cfg.record_hit_miss

    n_wl = len(workloads)
    accesses = [0] * n_wl
    hits = [0] * n_wl
    fetched = [0] * n_wl
    written_back = [0] * n_wl
    finish = [0] * n_wl
    labels = {w.name: [[] for _ in w.threads] for w in workloads} if record else {}

    iters = []
    ready = []
    for wi, w in enumerate(workloads):
        for ti in range(len(w.threads)):
            iters.append(iter_ops(w, ti, budget))
            heapq.heappush(ready, (0, wi, ti, len(iters) - 1))

    mc_free = 0
    mc_serviced = 0
    last_dequeue = 0
    heappush = heapq.heappush
    heappop = heapq.heappop
    cache_access = cache.access

    while ready:
        t, wi, ti, flat = heappop(ready)
        try:
            op, addr = next(iters[flat])
        except StopIteration:
            if t > finish[wi]:
                finish[wi] = t
            continue
        accesses[wi] += 1
        hit, wrote_back = cache_access(addr, op == "w")
        if record:
            labels[workloads[wi].name][ti].append(hit)
        if hit:
            hits[wi] += 1
            next_t = t + hit_latency
        else:
            dq = mc_free if mc_free > t else t
            mc_free = dq + interval
            last_dequeue = dq
            mc_serviced += 1
            fetched[wi] += 1
            next_t = dq + mem_latency
            if wrote_back:
                written_back[wi] += 1
                if wb_slot:
                    last_dequeue = mc_free
                    mc_free += interval
                    mc_serviced += 1
        heappush(ready, (next_t, wi, ti, flat))

    elapsed = max(finish + [last_dequeue])
    return {
        "accesses": accesses,
        "hits": hits,
        "fetched": fetched,
        "written_back": written_back,
        "finish": finish,
        "elapsed": elapsed,
        "mc_serviced": mc_serviced,
        "labels": labels,
    }


def _build_result(workloads, cfg, raw, solo_elapsed) -> SimResult:
    wb_slot = cfg.writeback_counts_as_slot
    mc_lines = [
        raw["fetched"][i] + (raw["written_back"][i] if wb_slot else 0)
        for i in range(len(workloads))
    ]
    total_mc = sum(mc_lines)
    metrics = []
    for i, w in enumerate(workloads):
        acc = raw["accesses"][i]
        misses = acc - raw["hits"][i]
        co = raw["finish"][i]
        solo = solo_elapsed[w.name]
        norm = 1.0 if co == solo else (solo / co if co else 1.0)
        metrics.append(
            WorkloadMetrics(
                name=w.name,
                accesses=acc,
                hits=raw["hits"][i],
                misses=misses,
                mpka=1000.0 * misses / acc if acc else 0.0,
                lines_fetched=raw["fetched"][i],
                lines_written_back=raw["written_back"][i],
                elapsed_cycles=co,
                bandwidth_share=mc_lines[i] / total_mc if total_mc else 0.0,
                normalized_performance=norm,
            )
        )
    return SimResult(
        workloads=tuple(metrics),
        elapsed_cycles=raw["elapsed"],
        mc_serviced_lines=raw["mc_serviced"],
        hit_miss=raw["labels"],
    )


def simulate(
    workloads: list[WorkloadSpec],
    cfg: SimConfig,
    baselines: dict[str, int] | None = None,
) -> SimResult:
    """Co-run all workloads; normalized performance is solo cycles over
    co-run cycles at the same per-thread event budget.

    baselines maps workload name to a precomputed solo elapsed_cycles and
    saves the internal baseline runs when given.
    """
    workloads = list(workloads)
    if not workloads:
        raise SimulationError("need at least one workload")
    raw = _run(workloads, cfg)
    solo_elapsed = dict(baselines or {})
    for i, w in enumerate(workloads):
        if w.name in solo_elapsed:
            continue
        if len(workloads) == 1:
            solo_elapsed[w.name] = raw["finish"][i]
        else:
            solo_elapsed[w.name] = _run([w], cfg)["finish"][0]
    return _build_result(workloads, cfg, raw, solo_elapsed)


def simulate_solo(w: WorkloadSpec, cfg: SimConfig) -> SimResult:
    """Baseline run of a single workload; normalized performance is 1.0."""
    return simulate([w], cfg)


def solo_baseline(w: WorkloadSpec, cfg: SimConfig) -> int:
    """Solo elapsed_cycles of w, for reuse as a simulate() baseline."""
    return _run([w], cfg)["finish"][0]


@dataclass(frozen=True)
class InterferenceRow:
    secondary: str                      # "idle" or the secondary's name
    primary: WorkloadMetrics            # primary's metrics in this scenario
    secondary_metrics: WorkloadMetrics | None


def interference_report(
    primary: WorkloadSpec,
    secondaries: list[WorkloadSpec],
    cfg: SimConfig,
) -> list[InterferenceRow]:
    """Primary's normalized performance against each co-runner.

    First row is the idle baseline (1.0 by definition), then one row per
    secondary in the given order.  Repeated invocations produce identical
    rows.
    """
    names = [s.name for s in secondaries]
    if len(set(names)) != len(names) or primary.name in names:
        raise SimulationError("secondary names must be unique and differ from the primary")
    solo = simulate_solo(primary, cfg)
    baselines = {primary.name: solo.metrics(primary.name).elapsed_cycles}
    rows = [InterferenceRow("idle", solo.metrics(primary.name), None)]
    for s in secondaries:
        res = simulate([primary, s], cfg, baselines=baselines)
        rows.append(
            InterferenceRow(s.name, res.metrics(primary.name), res.metrics(s.name))
        )
    return rows


def lru_reference(trace, g: CacheGeometry) -> list[bool]:
    """Brute-force per-set recency-list LRU oracle; True means hit.

    Accepts (op, addr) pairs or AccessEvents.  Kept deliberately naive and
    independent of LruBankedCache: plain lists searched linearly.
    """
    validate_geometry(g)
    recency: dict[tuple[int, int], list[int]] = {}
    labels = []
    for ev in trace:
        if isinstance(ev, tuple) and len(ev) == 2:
            _, addr = ev
        else:
            addr = ev.addr
        key = (bank_of(addr, g), set_of(addr, g))
        line = addr // g.line_size
        lst = recency.setdefault(key, [])
        if line in lst:
            lst.remove(line)
            lst.append(line)
            labels.append(True)
        else:
            if len(lst) == g.associativity:
                lst.pop(0)
            lst.append(line)
            labels.append(False)
    return labels
