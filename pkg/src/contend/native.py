"""Execute workload specs as real pinned OS threads and measure bandwidth.

Each pattern becomes one thread running a numpy kernel over mmap-backed
(page-aligned) arenas; numpy releases the GIL for large array operations, so
co-running workloads genuinely contend for the host's caches and memory
controllers.  Reads feed a checksum and writes store index-derived values,
so no access can be elided; whether an access is then satisfied from a cache
is exactly the effect under study.

Timing protocol: allocate and initialize per thread (first touch), one
untimed warm-up pass, then all threads rendezvous on a barrier and run timed
full passes until the requested duration elapses.  Byte accounting is exact:
bytes_touched = passes * bytes_per_pass(pattern).
"""

from __future__ import annotations

import mmap
import os
import platform
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .patterns import (
    BucketSort,
    SharedWalk,
    StreamKernel,
    StridedWalk,
    WorkloadSpec,
    validate_workload,
)

DEFAULT_LINE_SIZE = 64
DEFAULT_LLC_BYTES = 32 * 1024 * 1024

# bytes moved per element, by STREAM convention (read + written)
STREAM_BYTES_PER_ELEM = {"copy": 16, "scale": 16, "add": 24, "triad": 24}


class NativeError(RuntimeError):
    """Raised for allocation, pinning, or sizing failures in native runs."""


@dataclass(frozen=True)
class ThreadResult:
    thread: int
    cpu: int | None
    passes: int
    bytes_touched: int
    elapsed: float
    bandwidth: float
    checksum: int


@dataclass(frozen=True)
class NativeResult:
    workload: str
    threads: tuple[ThreadResult, ...]
    bytes_touched: int
    aggregate_bandwidth: float       # sum of per-thread bandwidths
    checksum: int                    # xor of per-thread checksums
    metadata: dict = field(default_factory=dict, compare=False)


def host_metadata() -> dict:
    return {
        "platform": platform.platform(),
        "machine": platform.machine(),
        "cpu_count": os.cpu_count(),
        "usable_cpus": sorted(available_cpus()),
    }


def available_cpus() -> set[int]:
    try:
        return set(os.sched_getaffinity(0))
    except AttributeError:  # non-Linux
        return set(range(os.cpu_count() or 1))


def pinning_supported() -> bool:
    return hasattr(os, "sched_setaffinity")


def _alloc_words(n_words: int, hugepages: bool) -> np.ndarray:
    nbytes = max(n_words * 8, mmap.PAGESIZE)
    try:
        mm = mmap.mmap(-1, nbytes)
    except (OSError, OverflowError) as e:
        raise NativeError(f"cannot allocate {nbytes} bytes: {e}") from e
    if hugepages:
        advice = getattr(mmap, "MADV_HUGEPAGE", None)
        if advice is None or not hasattr(mm, "madvise"):
            raise NativeError("transparent huge pages not supported on this host")
        mm.madvise(advice)
    # frombuffer holds a view of mm, keeping the mapping alive with the array
    return np.frombuffer(mm, dtype=np.int64, count=n_words)


def bytes_per_pass(pattern, line_size: int = DEFAULT_LINE_SIZE) -> int:
    """Exact bytes accounted to one full pass of a pattern.

    Walk patterns touch one line per access; stream kernels move the STREAM
    byte count per element; bucket sort touches one 4-byte word per event.
    """
    if isinstance(pattern, (StridedWalk, SharedWalk)):
        return pattern.pass_length * line_size
    if isinstance(pattern, StreamKernel):
        return pattern.n_elems * STREAM_BYTES_PER_ELEM[pattern.kind]
    if isinstance(pattern, BucketSort):
        return pattern.pass_length * 4
    raise NativeError(f"unsupported pattern {type(pattern).__name__}")


def events_per_pass(pattern) -> int:
    return pattern.pass_length


class _Runner:
    """Per-thread kernel: allocates state, then runs pass-invariant passes."""

    def __init__(self, pattern, shared_arrays, hugepages):
        self.pattern = pattern
        self.shared_arrays = shared_arrays
        self.hugepages = hugepages

    def setup(self):
        p = self.pattern
        if isinstance(p, (StridedWalk, SharedWalk)) and p.stride_bytes % 8 != 0:
            raise NativeError(
                f"native walks step in 8-byte words; stride {p.stride_bytes} "
                "is not a multiple of 8"
            )
        if isinstance(p, StridedWalk):
            words = p.arena_bytes // 8
            self.arr = _alloc_words(words, self.hugepages)
            self.arr[:] = np.arange(words, dtype=np.int64) & 0xFFFF
            self.view = self.arr[:: p.stride_bytes // 8]
            self.fill = np.arange(len(self.view), dtype=np.int64)
        elif isinstance(p, SharedWalk):
            arr = self.shared_arrays[p.arena]
            step = p.stride_bytes // 8
            lanes = arr[::step]
            self.head = lanes[p.start_offset // p.stride_bytes :]
            self.tail = lanes[: p.start_offset // p.stride_bytes]
        elif isinstance(p, StreamKernel):
            n = p.n_elems
            self.a = _alloc_words(n, self.hugepages)
            self.b = _alloc_words(n, self.hugepages)
            self.c = _alloc_words(n, self.hugepages)
            idx = np.arange(n, dtype=np.int64) & 0x3FF
            self.a[:] = idx
            self.b[:] = idx + 1
            self.c[:] = idx + 2
        else:  # BucketSort
            rng = np.random.Generator(np.random.PCG64(p.seed))
            self.keys = rng.integers(0, 1 << 32, p.n_keys, dtype=np.uint64)
            self.buckets = ((self.keys * p.n_buckets) >> 32).astype(np.intp)
            self.out = np.zeros(p.n_keys, dtype=np.uint64)

    def run_pass(self) -> int:
        """One full pass; returns a pass-invariant checksum."""
        p = self.pattern
        if isinstance(p, StridedWalk):
            if p.op_mix == "read":
                return int(self.view.sum())
            if p.op_mix == "write":
                self.view[:] = self.fill
                return int(self.fill.sum())
            self.view[:] = self.fill
            return int(self.view.sum())
        if isinstance(p, SharedWalk):
            return int(self.head.sum()) + int(self.tail.sum())
        if isinstance(p, StreamKernel):
            if p.kind == "copy":
                self.c[:] = self.a
                return int(self.c.sum())
            if p.kind == "scale":
                self.b[:] = 3 * self.c
                return int(self.b.sum())
            if p.kind == "add":
                self.c[:] = self.a + self.b
                return int(self.c.sum())
            self.a[:] = self.b + 3 * self.c
            return int(self.a.sum())
        counts = np.bincount(self.buckets, minlength=p.n_buckets)
        starts = np.cumsum(counts) - counts
        order = np.argsort(self.buckets, kind="stable")
        self.out[:] = self.keys[order]
        return int(self.out.sum() + starts.sum()) & 0xFFFFFFFFFFFFFFFF


def _thread_main(idx, runner, cpu, duration, barrier, results, errors):
    try:
        if cpu is not None:
            try:
                os.sched_setaffinity(0, {cpu})
            except (AttributeError, OSError) as e:
                raise NativeError(f"cannot pin thread {idx} to cpu {cpu}: {e}") from e
        runner.setup()
        runner.run_pass()  # warm-up, untimed
        barrier.wait()
        bpp = bytes_per_pass(runner.pattern)
        monotonic = time.monotonic
        t0 = monotonic()
        passes = 0
        checksum = 0
        while monotonic() - t0 < duration:
            checksum = runner.run_pass()
            passes += 1
        elapsed = monotonic() - t0
        results[idx] = ThreadResult(
            thread=idx,
            cpu=cpu,
            passes=passes,
            bytes_touched=passes * bpp,
            elapsed=elapsed,
            bandwidth=passes * bpp / elapsed if elapsed > 0 else 0.0,
            checksum=checksum & 0xFFFFFFFFFFFFFFFF,
        )
    except BaseException as e:  # surface failures to the controller
        errors[idx] = e
        try:
            barrier.wait(timeout=1.0)
        except threading.BrokenBarrierError:
            pass


def _check_cpu_hints(workloads) -> None:
    usable = available_cpus()
    for w in workloads:
        for t in w.threads:
            if t.cpu_hint is not None:
                if not pinning_supported():
                    raise NativeError("cpu pinning is not supported on this host")
                if t.cpu_hint not in usable:
                    raise NativeError(
                        f"{w.name}: cpu hint {t.cpu_hint} not in usable set "
                        f"{sorted(usable)}"
                    )


def _launch(workloads, duration, hugepages) -> list[NativeResult]:
    """Run all workloads' threads concurrently behind one start barrier."""
    if duration <= 0:
        raise NativeError("duration must be > 0 seconds")
    for w in workloads:
        validate_workload(w)
    _check_cpu_hints(workloads)

    shared: dict[int, dict[str, np.ndarray]] = {}
    for wi, w in enumerate(workloads):
        shared[wi] = {}
        for arena_id in w.shared_arenas:
            size = max(
                (t.pattern.arena_bytes
                 for t in w.threads
                 if isinstance(t.pattern, SharedWalk) and t.pattern.arena == arena_id),
                default=0,
            )
            if size == 0:
                continue
            arr = _alloc_words(size // 8, hugepages)
            arr[:] = np.arange(size // 8, dtype=np.int64) & 0xFFFF
            shared[wi][arena_id] = arr

    jobs = []  # (workload idx, thread idx within workload, runner, cpu)
    for wi, w in enumerate(workloads):
        for ti, t in enumerate(w.threads):
            jobs.append((wi, ti, _Runner(t.pattern, shared[wi], hugepages), t.cpu_hint))

    n = len(jobs)
    barrier = threading.Barrier(n + 1)
    results: list[ThreadResult | None] = [None] * n
    errors: list[BaseException | None] = [None] * n
    threads = []
    for j, (wi, ti, runner, cpu) in enumerate(jobs):
        th = threading.Thread(
            target=_thread_main,
            args=(j, runner, cpu, duration, barrier, results, errors),
            name=f"{workloads[wi].name}-{ti}",
            daemon=True,
        )
        threads.append(th)
        th.start()
    try:
        barrier.wait(timeout=max(300.0, 60.0 + duration))
    except threading.BrokenBarrierError:
        pass
    for th in threads:
        th.join()
    raised = [e for e in errors if e is not None]
    if raised:
        # a pre-barrier failure breaks the barrier for healthy threads too;
        # report the root cause, not the collateral BrokenBarrierError
        for e in raised:
            if isinstance(e, NativeError):
                raise e
        for e in raised:
            if not isinstance(e, threading.BrokenBarrierError):
                raise NativeError(str(e))
        raise NativeError("start barrier broken")

    meta = host_metadata()
    meta["duration_s"] = duration
    meta["hugepages"] = hugepages
    out = []
    for wi, w in enumerate(workloads):
        trs = []
        for j, (jwi, ti, runner, cpu) in enumerate(jobs):
            if jwi != wi:
                continue
            tr = results[j]
            trs.append(
                ThreadResult(ti, tr.cpu, tr.passes, tr.bytes_touched,
                             tr.elapsed, tr.bandwidth, tr.checksum)
            )
        checksum = 0
        for tr in trs:
            checksum ^= tr.checksum
        wmeta = dict(meta)
        wmeta["pinnings"] = [tr.cpu for tr in trs]
        out.append(
            NativeResult(
                workload=w.name,
                threads=tuple(trs),
                bytes_touched=sum(tr.bytes_touched for tr in trs),
                aggregate_bandwidth=sum(tr.bandwidth for tr in trs),
                checksum=checksum,
                metadata=wmeta,
            )
        )
    return out


def run_native(w: WorkloadSpec, duration: float, hugepages: bool = False) -> NativeResult:
    """Execute one workload natively for roughly duration seconds."""
    return _launch([w], duration, hugepages)[0]


def co_run(
    primary: WorkloadSpec,
    secondary: WorkloadSpec,
    duration: float,
    hugepages: bool = False,
) -> tuple[NativeResult, NativeResult]:
    """Run two workloads concurrently behind a common start barrier."""
    p_pins = {t.cpu_hint for t in primary.threads if t.cpu_hint is not None}
    s_pins = {t.cpu_hint for t in secondary.threads if t.cpu_hint is not None}
    clash = p_pins & s_pins
    if clash:
        raise NativeError(f"primary and secondary pinned to the same cpus: {sorted(clash)}")
    res = _launch([primary, secondary], duration, hugepages)
    return res[0], res[1]


def measure_stream(
    kind: str,
    n_elems: int,
    repetitions: int = 5,
    llc_bytes: int = DEFAULT_LLC_BYTES,
    hugepages: bool = False,
) -> float:
    """Best-of-repetitions bandwidth (bytes/s) for one vector kernel.

    Refuses array sizes that fit in the declared last-level cache: the three
    arrays must total at least 4x llc_bytes so the kernel streams from
    memory rather than cache.
    """
    if repetitions < 1:
        raise NativeError("repetitions must be >= 1")
    total = 3 * 8 * n_elems
    if total < 4 * llc_bytes:
        need = (4 * llc_bytes + 23) // 24
        raise NativeError(
            f"arrays total {total} bytes and would fit in the declared "
            f"{llc_bytes}-byte cache; use n_elems >= {need} (or declare a "
            f"smaller cache via llc_bytes)"
        )
    runner = _Runner(StreamKernel(kind, n_elems), {}, hugepages)
    runner.setup()
    runner.run_pass()  # warm-up
    bpp = n_elems * STREAM_BYTES_PER_ELEM[kind]
    best = 0.0
    for _ in range(repetitions):
        t0 = time.monotonic()
        runner.run_pass()
        dt = time.monotonic() - t0
        if dt > 0:
            best = max(best, bpp / dt)
    return best


@dataclass(frozen=True)
class NativeRow:
    secondary: str
    normalized_bandwidth: float
    primary: NativeResult
    secondary_result: NativeResult | None


def native_interference_report(
    primary: WorkloadSpec,
    secondaries: list[WorkloadSpec],
    duration: float,
    hugepages: bool = False,
) -> list[NativeRow]:
    """Primary bandwidth under each co-runner, normalized to the idle row."""
    idle = WorkloadSpec("idle", ())
    base_res, _ = co_run(primary, idle, duration, hugepages)
    baseline = base_res.aggregate_bandwidth
    rows = [NativeRow("idle", 1.0, base_res, None)]
    for s in secondaries:
        pres, sres = co_run(primary, s, duration, hugepages)
        norm = pres.aggregate_bandwidth / baseline if baseline > 0 else 0.0
        rows.append(NativeRow(s.name, norm, pres, sres))
    return rows
