"""Deterministic access-pattern generators: cache antagonists and victims.

Workloads are built from four pattern kinds:

* StridedWalk   - private array of arena_bytes walked with a fixed stride;
                  with the stride equal to the geometry's conflict stride this
                  is the same-set walker that floods the memory controller.
* SharedWalk    - one arena walked line-by-line by several threads from
                  staggered starting points; sized to the cache capacity this
                  is the whole-cache polluter.
* StreamKernel  - the copy/scale/add/triad vector kernels over three arrays.
* BucketSort    - a seeded bucket-sort memory model (read keys, count into
                  buckets, prefix pass, permuting writes).

Expansion of a workload into per-thread AccessEvent sequences is lazy and
bit-deterministic for fixed inputs.
"""

from __future__ import annotations

import random
from array import array
from dataclasses import dataclass, field, replace
from itertools import islice
from typing import Iterator, NamedTuple, Union

from .geometry import CacheGeometry, bank_of, conflict_stride, set_of

KIB = 1024
MIB = 1024 * 1024

READ = "r"
WRITE = "w"

STREAM_KINDS = ("copy", "scale", "add", "triad")
OP_MIXES = ("read", "write", "readwrite")


class PatternError(ValueError):
    """Raised for inconsistent pattern or workload descriptions."""


class AccessEvent(NamedTuple):
    thread: int
    seq: int
    op: str          # "r" or "w"
    addr: int        # byte address


@dataclass(frozen=True)
class StridedWalk:
    arena_bytes: int
    stride_bytes: int
    op_mix: str = "read"

    def __post_init__(self):
        if self.stride_bytes <= 0 or self.arena_bytes <= 0:
            raise PatternError("arena and stride must be positive")
        if self.arena_bytes % self.stride_bytes != 0:
            raise PatternError(
                f"arena {self.arena_bytes} not a multiple of stride {self.stride_bytes}"
            )
        if self.op_mix not in OP_MIXES:
            raise PatternError(f"op_mix must be one of {OP_MIXES}, got {self.op_mix!r}")

    @property
    def arena_span(self) -> int:
        return self.arena_bytes

    @property
    def pass_length(self) -> int:
        """Accesses in one full pass over the arena."""
        return self.arena_bytes // self.stride_bytes


@dataclass(frozen=True)
class SharedWalk:
    arena: str               # shared-arena id, resolved via WorkloadSpec
    arena_bytes: int
    stride_bytes: int
    start_offset: int = 0

    def __post_init__(self):
        if self.stride_bytes <= 0 or self.arena_bytes <= 0:
            raise PatternError("arena and stride must be positive")
        if self.arena_bytes % self.stride_bytes != 0:
            raise PatternError(
                f"arena {self.arena_bytes} not a multiple of stride {self.stride_bytes}"
            )
        if not (0 <= self.start_offset < self.arena_bytes):
            raise PatternError(f"start_offset {self.start_offset} outside arena")
        if self.start_offset % self.stride_bytes != 0:
            raise PatternError(f"start_offset {self.start_offset} not stride-aligned")

    @property
    def arena_span(self) -> int:
        return 0  # lives in the workload's shared arena, not a private one

    @property
    def pass_length(self) -> int:
        return self.arena_bytes // self.stride_bytes


@dataclass(frozen=True)
class StreamKernel:
    kind: str
    n_elems: int
    elem_bytes: int = 8

    def __post_init__(self):
        if self.kind not in STREAM_KINDS:
            raise PatternError(f"kind must be one of {STREAM_KINDS}, got {self.kind!r}")
        if self.n_elems < 0:
            raise PatternError("n_elems must be >= 0")
        if self.elem_bytes != 8:
            raise PatternError("only 8-byte elements are supported")

    @property
    def arena_span(self) -> int:
        # arrays a, b, c laid out back to back
        return 3 * self.n_elems * self.elem_bytes

    @property
    def events_per_elem(self) -> int:
        return 2 if self.kind in ("copy", "scale") else 3

    @property
    def pass_length(self) -> int:
        return self.events_per_elem * self.n_elems


@dataclass(frozen=True)
class BucketSort:
    n_keys: int
    n_buckets: int = 10
    iterations: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.n_keys < 0:
            raise PatternError("n_keys must be >= 0")
        if self.n_buckets < 1:
            raise PatternError("n_buckets must be >= 1")
        if self.iterations < 0:
            raise PatternError("iterations must be >= 0")

    @property
    def arena_span(self) -> int:
        # 32-bit keys, per-bucket counters, permuted output
        return 4 * (2 * self.n_keys + self.n_buckets)

    @property
    def pass_length(self) -> int:
        """Events in one iteration: read keys, count, prefix, permute."""
        return 4 * self.n_keys + self.n_buckets


Pattern = Union[StridedWalk, SharedWalk, StreamKernel, BucketSort]


@dataclass(frozen=True)
class ThreadSpec:
    pattern: Pattern
    arena_base: int = 0          # ignored for SharedWalk (shared_arenas wins)
    cpu_hint: int | None = None


@dataclass(frozen=True)
class WorkloadSpec:
    name: str
    threads: tuple[ThreadSpec, ...]
    shared_arenas: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "threads", tuple(self.threads))

    def arena_intervals(self) -> list[tuple[int, int]]:
        """Half-open [base, end) byte ranges claimed by this workload."""
        spans = []
        for t in self.threads:
            p = t.pattern
            if isinstance(p, SharedWalk):
                continue
            if p.arena_span > 0:
                spans.append((t.arena_base, t.arena_base + p.arena_span))
        for arena_id, base in self.shared_arenas.items():
            size = max(
                (t.pattern.arena_bytes for t in self.threads
                 if isinstance(t.pattern, SharedWalk) and t.pattern.arena == arena_id),
                default=0,
            )
            if size > 0:
                spans.append((base, base + size))
        return spans

    def end_address(self) -> int:
        return max((end for _, end in self.arena_intervals()), default=0)


def validate_workload(w: WorkloadSpec, line_size: int = 64) -> WorkloadSpec:
    """Check arena alignment, disjointness, and shared-arena references."""
    for i, t in enumerate(w.threads):
        p = t.pattern
        if isinstance(p, SharedWalk):
            if p.arena not in w.shared_arenas:
                raise PatternError(
                    f"{w.name}: thread {i} references unknown shared arena {p.arena!r}"
                )
            sizes = {
                q.pattern.arena_bytes for q in w.threads
                if isinstance(q.pattern, SharedWalk) and q.pattern.arena == p.arena
            }
            if len(sizes) != 1:
                raise PatternError(
                    f"{w.name}: shared arena {p.arena!r} has inconsistent sizes {sizes}"
                )
        elif t.arena_base % line_size != 0:
            raise PatternError(
                f"{w.name}: thread {i} arena base {t.arena_base:#x} not line-aligned"
            )
    for _, base in w.shared_arenas.items():
        if base % line_size != 0:
            raise PatternError(f"{w.name}: shared arena base {base:#x} not line-aligned")

    spans = sorted(w.arena_intervals())
    for (a0, a1), (b0, _) in zip(spans, spans[1:]):
        if b0 < a1:
            raise PatternError(
                f"{w.name}: arenas overlap at {b0:#x} (previous ends {a1:#x})"
            )
    return w


# ---------------------------------------------------------------------------
# workload generators


def _hints(cpus, n):
    if cpus is None:
        return [None] * n
    cpus = list(cpus)
    if not cpus:
        raise PatternError("cpu list must not be empty")
    # fewer cpus than threads: assign round-robin
    return [cpus[i % len(cpus)] for i in range(n)]


def gen_offchip_antagonist(
    g: CacheGeometry,
    n_threads: int,
    array_bytes: int = 2 * MIB,
    stride: int | None = None,
    op_mix: str = "read",
    base: int = 0,
    strict: bool = True,
    cpus=None,
) -> WorkloadSpec:
    """Same-set strided walkers: maximal memory traffic, minimal set footprint.

    Each thread gets a private array_bytes arena walked with the geometry's
    conflict stride, so every access of a thread lands in one (bank, set)
    and, with enough threads, every access misses.
    """
    if n_threads < 1:
        raise PatternError("n_threads must be >= 1")
    if stride is None:
        stride = conflict_stride(g)
    if strict and stride % conflict_stride(g) != 0:
        raise PatternError(
            f"stride {stride} is not a multiple of conflict stride "
            f"{conflict_stride(g)}; accesses would spread across sets "
            f"(pass strict=False to allow)"
        )
    if array_bytes % stride != 0:
        raise PatternError(f"array_bytes {array_bytes} not a multiple of stride {stride}")
    if base % g.line_size != 0:
        raise PatternError(f"base {base:#x} not line-aligned")
    walk = StridedWalk(array_bytes, stride, op_mix)
    hints = _hints(cpus, n_threads)
    threads = [
        ThreadSpec(walk, base + t * array_bytes, hints[t]) for t in range(n_threads)
    ]
    return validate_workload(WorkloadSpec("harm.offchip", tuple(threads)), g.line_size)


def gen_onchip_antagonist(
    g: CacheGeometry, n_threads: int, base: int = 0, cpus=None
) -> WorkloadSpec:
    """Whole-cache walkers over one shared capacity-sized arena.

    Threads advance line by line from equally spaced, line-aligned starting
    offsets; a full pass by any thread touches every line of the arena once,
    evicting every co-runner line from every set.
    """
    if n_threads < 1:
        raise PatternError("n_threads must be >= 1")
    if base % g.line_size != 0:
        raise PatternError(f"base {base:#x} not line-aligned")
    cap = g.capacity
    line = g.line_size
    hints = _hints(cpus, n_threads)
    threads = []
    for t in range(n_threads):
        offset = (t * cap // n_threads) // line * line
        threads.append(ThreadSpec(SharedWalk("shared", cap, line, offset), 0, hints[t]))
    w = WorkloadSpec("harm.onchip", tuple(threads), {"shared": base})
    return validate_workload(w, line)


def gen_xeon_samedie_antagonist(
    g: CacheGeometry, n_threads: int, array_bytes: int = 64 * MIB, base: int = 0, cpus=None
) -> WorkloadSpec:
    """Per-thread sequential line sweep over a huge private array.

    The line-sized stride makes this a cache polluter covering every set; the
    arena is far larger than any target cache so every line is a miss.
    """
    if n_threads < 1:
        raise PatternError("n_threads must be >= 1")
    if base % g.line_size != 0:
        raise PatternError(f"base {base:#x} not line-aligned")
    if array_bytes % g.line_size != 0:
        raise PatternError(f"array_bytes {array_bytes} not a multiple of the line size")
    walk = StridedWalk(array_bytes, g.line_size, "read")
    hints = _hints(cpus, n_threads)
    threads = [
        ThreadSpec(walk, base + t * array_bytes, hints[t]) for t in range(n_threads)
    ]
    return validate_workload(WorkloadSpec("harm.sweep", tuple(threads)), g.line_size)


def gen_stream(kind: str, n_elems: int, base: int = 0, cpu: int | None = None) -> WorkloadSpec:
    """Single-threaded vector kernel over arrays a, b, c laid back to back."""
    k = StreamKernel(kind, n_elems)
    return WorkloadSpec(f"stream.{kind}", (ThreadSpec(k, base, cpu),))


def gen_bucket_sort(
    n_keys: int,
    n_buckets: int = 10,
    iterations: int = 10,
    seed: int = 0,
    base: int = 0,
    cpu: int | None = None,
) -> WorkloadSpec:
    """Single-threaded seeded bucket sort over 32-bit keys."""
    p = BucketSort(n_keys, n_buckets, iterations, seed)
    return WorkloadSpec("bucketsort", (ThreadSpec(p, base, cpu),))


def with_pinning(w: WorkloadSpec, cpus) -> WorkloadSpec:
    """Copy of w with cpu hints assigned thread-by-thread."""
    hints = _hints(cpus, len(w.threads))
    threads = tuple(replace(t, cpu_hint=hints[i]) for i, t in enumerate(w.threads))
    return WorkloadSpec(w.name, threads, dict(w.shared_arenas))


def relocate(w: WorkloadSpec, new_base: int) -> WorkloadSpec:
    """Shift every arena so the lowest base lands on new_base."""
    bases = [t.arena_base for t in w.threads if not isinstance(t.pattern, SharedWalk)]
    bases += list(w.shared_arenas.values())
    if not bases:
        return w
    delta = new_base - min(bases)
    threads = tuple(
        t if isinstance(t.pattern, SharedWalk) else replace(t, arena_base=t.arena_base + delta)
        for t in w.threads
    )
    arenas = {k: v + delta for k, v in w.shared_arenas.items()}
    return WorkloadSpec(w.name, threads, arenas)


def pack(workloads, align: int) -> list[WorkloadSpec]:
    """Rebase workloads back to back at align-multiple bases (disjoint)."""
    out = []
    next_base = 0
    for w in workloads:
        w2 = relocate(w, next_base)
        out.append(w2)
        end = w2.end_address()
        next_base = (end + align - 1) // align * align
        if next_base == 0:
            next_base = align
    return out


# ---------------------------------------------------------------------------
# expansion into access events


def _bucket_keys(p: BucketSort) -> array:
    rng = random.Random(p.seed)
    return array("I", (rng.getrandbits(32) for _ in range(p.n_keys)))


def _bucket_positions(p: BucketSort, keys: array) -> tuple[array, array]:
    """Bucket index and stable output position for every key."""
    buckets = array("I", ((k * p.n_buckets) >> 32 for k in keys))
    counts = [0] * p.n_buckets
    for b in buckets:
        counts[b] += 1
    starts = [0] * p.n_buckets
    acc = 0
    for i, c in enumerate(counts):
        starts[i] = acc
        acc += c
    pos = array("I", bytes(4 * p.n_keys))
    for i, b in enumerate(buckets):
        pos[i] = starts[b]
        starts[b] += 1
    return buckets, pos


def _expand_pattern(p: Pattern, base: int) -> Iterator[tuple[str, int]]:
    """Infinite (finite for BucketSort) stream of (op, addr) for one thread."""
    if isinstance(p, StridedWalk):
        n = p.pass_length
        j = p.stride_bytes
        mix = p.op_mix
        k = 0
        while True:
            addr = base + (k % n) * j
            if mix == "read":
                yield (READ, addr)
            elif mix == "write":
                yield (WRITE, addr)
            else:
                yield (READ if k % 2 == 0 else WRITE, addr)
            k += 1
    elif isinstance(p, SharedWalk):
        n = p.pass_length
        j = p.stride_bytes
        first = p.start_offset // j
        k = 0
        while True:
            yield (READ, base + ((first + k) % n) * j)
            k += 1
    elif isinstance(p, StreamKernel):
        n = p.n_elems
        if n == 0:
            return
        eb = p.elem_bytes
        a, b, c = base, base + n * eb, base + 2 * n * eb
        kind = p.kind
        while True:
            for i in range(n):
                off = i * eb
                if kind == "copy":
                    yield (READ, a + off)
                    yield (WRITE, c + off)
                elif kind == "scale":
                    yield (READ, c + off)
                    yield (WRITE, b + off)
                elif kind == "add":
                    yield (READ, a + off)
                    yield (READ, b + off)
                    yield (WRITE, c + off)
                else:  # triad
                    yield (READ, b + off)
                    yield (READ, c + off)
                    yield (WRITE, a + off)
    else:  # BucketSort
        keys = _bucket_keys(p)
        buckets, pos = _bucket_positions(p, keys)
        keys_base = base
        cnt_base = base + 4 * p.n_keys
        out_base = cnt_base + 4 * p.n_buckets
        for _ in range(p.iterations):
            for i in range(p.n_keys):
                yield (READ, keys_base + 4 * i)
            for i in range(p.n_keys):
                yield (WRITE, cnt_base + 4 * buckets[i])
            for b in range(p.n_buckets):
                yield (WRITE, cnt_base + 4 * b)
            for i in range(p.n_keys):
                yield (READ, keys_base + 4 * i)
                yield (WRITE, out_base + 4 * pos[i])


def iter_ops(w: WorkloadSpec, thread_idx: int, limit: int) -> Iterator[tuple[str, int]]:
    """At most limit raw (op, address) pairs for one thread.

    Same stream as expand_thread without the per-event wrapper; the
    simulator's hot loop runs on this form.
    """
    if limit < 0:
        raise PatternError("limit must be >= 0")
    t = w.threads[thread_idx]
    base = (
        w.shared_arenas[t.pattern.arena]
        if isinstance(t.pattern, SharedWalk)
        else t.arena_base
    )
    return islice(_expand_pattern(t.pattern, base), limit)


def expand_thread(w: WorkloadSpec, thread_idx: int, limit: int) -> Iterator[AccessEvent]:
    """At most limit AccessEvents for one thread, deterministically."""
    for seq, (op, addr) in enumerate(iter_ops(w, thread_idx, limit)):
        yield AccessEvent(thread_idx, seq, op, addr)


def expand(w: WorkloadSpec, per_thread_limit: int) -> list[Iterator[AccessEvent]]:
    """Lazy per-thread event streams, each capped at per_thread_limit."""
    return [expand_thread(w, i, per_thread_limit) for i in range(len(w.threads))]


def footprint(w: WorkloadSpec, g: CacheGeometry) -> int:
    """Distinct (bank, set) pairs touched by one full pass of every thread."""
    validate_workload(w, g.line_size)
    pairs = set()
    for i, t in enumerate(w.threads):
        for ev in expand_thread(w, i, t.pattern.pass_length):
            pairs.add((bank_of(ev.addr, g), set_of(ev.addr, g)))
    return len(pairs)


# ---------------------------------------------------------------------------
# serialization

_PATTERN_TYPES = {
    "StridedWalk": StridedWalk,
    "SharedWalk": SharedWalk,
    "StreamKernel": StreamKernel,
    "BucketSort": BucketSort,
}


def _pattern_to_dict(p: Pattern) -> dict:
    d = {"variant": type(p).__name__}
    d.update({k: getattr(p, k) for k in p.__dataclass_fields__})
    return d


def _pattern_from_dict(d: dict) -> Pattern:
    try:
        cls = _PATTERN_TYPES[d["variant"]]
    except KeyError:
        raise PatternError(f"unknown pattern variant {d.get('variant')!r}") from None
    kwargs = {k: v for k, v in d.items() if k != "variant"}
    return cls(**kwargs)


def workload_to_dict(w: WorkloadSpec) -> dict:
    return {
        "name": w.name,
        "threads": [
            {
                "pattern": _pattern_to_dict(t.pattern),
                "arena_base": t.arena_base,
                "cpu_hint": t.cpu_hint,
            }
            for t in w.threads
        ],
        "shared_arenas": dict(w.shared_arenas),
    }


def workload_from_dict(d: dict) -> WorkloadSpec:
    try:
        threads = tuple(
            ThreadSpec(
                _pattern_from_dict(t["pattern"]),
                int(t.get("arena_base", 0)),
                t.get("cpu_hint"),
            )
            for t in d["threads"]
        )
        return WorkloadSpec(d["name"], threads, dict(d.get("shared_arenas", {})))
    except (KeyError, TypeError) as e:
        raise PatternError(f"malformed workload description: {e}") from e


def write_trace_csv(w: WorkloadSpec, per_thread_limit: int, fh) -> None:
    """Emit the expanded trace as CSV: thread,seq,op,address (hex address)."""
    fh.write("thread,seq,op,address\n")
    for i in range(len(w.threads)):
        for ev in expand_thread(w, i, per_thread_limit):
            fh.write(f"{ev.thread},{ev.seq},{ev.op},0x{ev.addr:x}\n")
