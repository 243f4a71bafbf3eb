import os

import pytest

from contend.geometry import preset
from contend.native import (
    NativeError,
    _Runner,
    available_cpus,
    bytes_per_pass,
    co_run,
    measure_stream,
    native_interference_report,
    run_native,
)
from contend.patterns import (
    BucketSort,
    SharedWalk,
    StreamKernel,
    StridedWalk,
    ThreadSpec,
    WorkloadSpec,
    gen_onchip_antagonist,
    gen_stream,
    with_pinning,
)

DUR = 0.05   # seconds per timed run; enough for thousands of passes


def test_bytes_per_pass_frozen():
    assert bytes_per_pass(StridedWalk(2 * 1024 * 1024, 256 * 1024)) == 8 * 64
    assert bytes_per_pass(SharedWalk("s", 4096, 64)) == 64 * 64
    assert bytes_per_pass(StreamKernel("copy", 1000)) == 16_000
    assert bytes_per_pass(StreamKernel("scale", 1000)) == 16_000
    assert bytes_per_pass(StreamKernel("add", 1000)) == 24_000
    assert bytes_per_pass(StreamKernel("triad", 1000)) == 24_000
    assert bytes_per_pass(BucketSort(100, 10)) == 410 * 4


def test_run_native_accounts_bytes_exactly():
    res = run_native(gen_stream("triad", 4096), DUR)
    assert len(res.threads) == 1
    t = res.threads[0]
    assert t.passes >= 1
    assert t.bytes_touched == t.passes * 24 * 4096
    assert res.bytes_touched == t.bytes_touched
    assert res.aggregate_bandwidth > 0
    assert t.elapsed >= DUR


def test_pass_checksum_is_invariant():
    r = _Runner(StreamKernel("triad", 1024), {}, False)
    r.setup()
    first = r.run_pass()
    assert all(r.run_pass() == first for _ in range(3))
    r2 = _Runner(StreamKernel("triad", 1024), {}, False)
    r2.setup()
    assert r2.run_pass() == first


def test_bucket_sort_checksum_seeded():
    a = _Runner(BucketSort(2048, 16, seed=1), {}, False)
    b = _Runner(BucketSort(2048, 16, seed=1), {}, False)
    c = _Runner(BucketSort(2048, 16, seed=2), {}, False)
    for r in (a, b, c):
        r.setup()
    assert a.run_pass() == b.run_pass()
    assert a.run_pass() != c.run_pass()


def test_walk_op_mixes_run():
    for mix in ("read", "write", "readwrite"):
        w = WorkloadSpec("w", (ThreadSpec(StridedWalk(65536, 64, op_mix=mix)),))
        res = run_native(w, DUR)
        assert res.threads[0].passes >= 1


def test_shared_arena_walkers():
    w = gen_onchip_antagonist(preset("toy"), 2)
    res = run_native(w, DUR)
    assert len(res.threads) == 2
    per_pass = bytes_per_pass(w.threads[0].pattern)
    for t in res.threads:
        assert t.bytes_touched == t.passes * per_pass


def test_stride_must_be_word_multiple():
    w = WorkloadSpec("w", (ThreadSpec(StridedWalk(64, 4)),))
    with pytest.raises(NativeError):
        run_native(w, DUR)


def test_duration_must_be_positive():
    with pytest.raises(NativeError):
        run_native(gen_stream("copy", 64), 0.0)


def test_pin_to_unavailable_cpu_rejected():
    w = with_pinning(gen_stream("copy", 1024), [max(available_cpus()) + 17])
    with pytest.raises(NativeError):
        run_native(w, DUR)


def test_pin_to_current_cpu_works():
    cpu = min(available_cpus())
    w = with_pinning(gen_stream("copy", 1024), [cpu])
    res = run_native(w, DUR)
    assert res.threads[0].cpu == cpu


def test_co_run_rejects_pin_clash():
    cpu = min(available_cpus())
    a = with_pinning(gen_stream("copy", 1024), [cpu])
    b = with_pinning(WorkloadSpec("b", (ThreadSpec(StridedWalk(4096, 64)),)), [cpu])
    with pytest.raises(NativeError):
        co_run(a, b, DUR)


def test_co_run_returns_both_results():
    a = gen_stream("copy", 2048)
    b = WorkloadSpec("sweep", (ThreadSpec(StridedWalk(65536, 64)),))
    ra, rb = co_run(a, b, DUR)
    assert ra.workload == "stream.copy"
    assert rb.workload == "sweep"
    assert ra.threads[0].passes >= 1
    assert rb.threads[0].passes >= 1


def test_interference_report_idle_row():
    rows = native_interference_report(gen_stream("triad", 2048), [], DUR)
    assert len(rows) == 1
    assert rows[0].secondary == "idle"
    assert rows[0].normalized_bandwidth == 1.0
    assert rows[0].secondary_result is None


def test_interference_report_full():
    victim = gen_stream("triad", 2048)
    ant = WorkloadSpec("hog", (ThreadSpec(StridedWalk(65536, 64)),))
    rows = native_interference_report(victim, [ant], DUR)
    assert [r.secondary for r in rows] == ["idle", "hog"]
    assert rows[1].normalized_bandwidth > 0
    assert rows[1].secondary_result.workload == "hog"


def test_measure_stream_refuses_cache_sized_arrays():
    with pytest.raises(NativeError) as ei:
        measure_stream("triad", 1024)
    assert "fit" in str(ei.value)


def test_measure_stream_reports_bandwidth():
    # tiny declared cache so the sizing guard passes quickly
    bw = measure_stream("triad", 65536, repetitions=2, llc_bytes=262144)
    assert bw > 0


def test_measure_stream_rejects_bad_args():
    with pytest.raises(NativeError):
        measure_stream("triad", 65536, repetitions=0, llc_bytes=262144)


def test_empty_workload_runs():
    res = run_native(WorkloadSpec("idle", ()), DUR)
    assert res.threads == ()
    assert res.bytes_touched == 0
    assert res.aggregate_bandwidth == 0.0
