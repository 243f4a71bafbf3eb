import random

import pytest

from contend.geometry import conflict_stride, preset
from contend.patterns import (
    StreamKernel,
    StridedWalk,
    ThreadSpec,
    WorkloadSpec,
    expand_thread,
    gen_offchip_antagonist,
    gen_onchip_antagonist,
    gen_stream,
    relocate,
)
from contend.simulator import (
    InterferenceRow,
    LruBankedCache,
    SimConfig,
    SimulationError,
    interference_report,
    lru_reference,
    simulate,
    simulate_solo,
    solo_baseline,
)

TOY = preset("toy")


def toy_cfg(**kw):
    kw.setdefault("geometry", TOY)
    return SimConfig(**kw)


# ---------------------------------------------------------------------------
# cache replacement


def test_cache_second_touch_hits():
    c = LruBankedCache(TOY)
    assert c.access(0x40, False) == (False, False)
    assert c.access(0x40, False) == (True, False)
    assert c.access(0x44, False)[0] is True     # same 32-byte line


def test_cache_set_thrash_at_ways_plus_one():
    c = LruBankedCache(TOY)
    # five lines in the same (bank, set) of a 4-way cache: never a hit
    addrs = [k * 1024 for k in range(5)]
    for _ in range(3):
        for a in addrs:
            hit, _ = c.access(a, False)
            assert hit is False
    # four lines cycle cleanly: all hits after the first pass
    c = LruBankedCache(TOY)
    for a in addrs[:4]:
        c.access(a, False)
    for a in addrs[:4]:
        assert c.access(a, False)[0] is True


def test_cache_lru_evicts_oldest():
    c = LruBankedCache(TOY)
    for k in range(4):
        c.access(k * 1024, False)
    c.access(0, False)                   # refresh line 0
    c.access(4 * 1024, False)            # evicts line at 1024, not 0
    assert c.access(0, False)[0] is True
    assert c.access(1024, False)[0] is False


def test_cache_writeback_flag():
    c = LruBankedCache(TOY)
    c.access(0, True)                    # dirty
    for k in range(1, 4):
        c.access(k * 1024, False)
    hit, wrote_back = c.access(4 * 1024, False)   # evicts dirty line 0
    assert (hit, wrote_back) == (False, True)
    hit, wrote_back = c.access(5 * 1024, False)   # evicts clean line 1024
    assert (hit, wrote_back) == (False, False)


def test_lru_reference_matches_engine_on_random_traces():
    rng = random.Random(42)
    for _ in range(25):
        trace = [("w" if rng.random() < 0.3 else "r", rng.randrange(0, 8192) * 8)
                 for _ in range(1500)]
        cache = LruBankedCache(TOY)
        got = [cache.access(a, op == "w")[0] for op, a in trace]
        assert got == lru_reference(trace, TOY)


def test_lru_reference_accepts_events():
    w = gen_stream("copy", 8)
    evs = list(expand_thread(w, 0, 32))
    assert lru_reference(evs, TOY) == lru_reference([(e.op, e.addr) for e in evs], TOY)


# ---------------------------------------------------------------------------
# counters and conservation


def test_second_pass_all_hits():
    # copy over 16 elems: a and c span 4 toy lines each; 8 compulsory misses
    w = gen_stream("copy", 16)
    res = simulate_solo(w, toy_cfg(per_thread_event_budget=64))
    m = res.metrics("stream.copy")
    assert (m.accesses, m.misses, m.hits) == (64, 8, 56)
    assert m.mpka == 125.0
    assert m.lines_fetched == 8
    assert m.normalized_performance == 1.0


def test_conservation_and_ceiling_randomized():
    rng = random.Random(7)
    for _ in range(30):
        n1 = rng.randrange(8, 64)
        walk = StridedWalk(rng.choice([1024, 2048]), rng.choice([32, 64, 256]),
                           op_mix=rng.choice(["read", "write", "readwrite"]))
        w1 = WorkloadSpec("a", (ThreadSpec(StreamKernel("triad", n1), 0),))
        w2 = WorkloadSpec("b", (ThreadSpec(walk, 65536),))
        cfg = toy_cfg(
            hit_latency=rng.randrange(1, 5),
            mem_latency=rng.randrange(20, 120),
            mc_service_interval=rng.randrange(1, 30),
            writeback_counts_as_slot=rng.random() < 0.5,
            per_thread_event_budget=rng.randrange(200, 1500),
        )
        res = simulate([w1, w2], cfg)
        total_mc = 0
        for m in res.workloads:
            assert m.hits + m.misses == m.accesses
            assert m.misses == m.lines_fetched
            total_mc += m.lines_fetched
            if cfg.writeback_counts_as_slot:
                total_mc += m.lines_written_back
        assert res.mc_serviced_lines == total_mc
        ceiling = res.elapsed_cycles // cfg.mc_service_interval + 1
        assert res.mc_serviced_lines <= ceiling


def test_writeback_slot_accounting():
    # write-thrash one set so dirty evictions occur
    w = WorkloadSpec("w", (ThreadSpec(StridedWalk(8192, 1024, op_mix="write")),))
    with_wb = simulate_solo(w, toy_cfg(per_thread_event_budget=100)).metrics("w")
    no_wb = simulate_solo(
        w, toy_cfg(per_thread_event_budget=100, writeback_counts_as_slot=False)
    ).metrics("w")
    assert with_wb.lines_written_back > 0
    assert with_wb.lines_written_back == no_wb.lines_written_back
    # occupying extra MC slots can only slow the workload down
    assert with_wb.elapsed_cycles >= no_wb.elapsed_cycles


def test_streaming_workload_misses_every_line():
    # arrays larger than the whole cache, walked cyclically: no reuse survives
    w = gen_stream("copy", 1024)         # 16 KiB of arrays vs 4 KiB cache
    m = simulate_solo(w, toy_cfg(per_thread_event_budget=8192)).metrics("stream.copy")
    assert m.misses == 8192 // 4         # one miss per 4 accesses to a line
    assert m.hits == 8192 - 2048


# ---------------------------------------------------------------------------
# timing model


def test_miss_latency_dominates_elapsed():
    w = WorkloadSpec("w", (ThreadSpec(StridedWalk(8192, 1024)),))  # 8 lines, 4 ways
    cfg = toy_cfg(hit_latency=3, mem_latency=100, mc_service_interval=1,
                  per_thread_event_budget=80)
    m = simulate_solo(w, cfg).metrics("w")
    assert m.misses == 80
    assert m.elapsed_cycles == 80 * 100   # back-to-back misses, no queueing


def test_hit_latency_only_when_resident():
    w = WorkloadSpec("w", (ThreadSpec(StridedWalk(1024, 256)),))   # 4 lines, fits
    cfg = toy_cfg(hit_latency=3, mem_latency=100, mc_service_interval=1,
                  per_thread_event_budget=100)
    m = simulate_solo(w, cfg).metrics("w")
    assert m.misses == 4
    assert m.elapsed_cycles == 4 * 100 + 96 * 3


def test_mc_serializes_concurrent_misses():
    # two single-line streaming threads, interval 50 > mem 40: MC-bound
    w = WorkloadSpec("w", (
        ThreadSpec(StridedWalk(8192, 1024), 0),
        ThreadSpec(StridedWalk(8192, 1024), 8192),
    ))
    cfg = toy_cfg(hit_latency=1, mem_latency=40, mc_service_interval=50,
                  per_thread_event_budget=20)
    res = simulate_solo(w, cfg)
    # 40 misses through one controller: last dequeue at >= 39 * 50
    assert res.elapsed_cycles >= 39 * 50
    assert res.mc_serviced_lines == 40


def test_single_thread_timing_does_not_change_hits():
    w = gen_stream("triad", 64)
    for interval in (1, 7, 33):
        cfg = toy_cfg(mc_service_interval=interval, per_thread_event_budget=1000,
                      record_hit_miss=True)
        res = simulate_solo(w, cfg)
        trace = [(e.op, e.addr) for e in expand_thread(w, 0, 1000)]
        assert res.hit_miss["stream.triad"][0] == lru_reference(trace, TOY)


# ---------------------------------------------------------------------------
# co-runs, normalization, interference


def test_solo_normalized_is_exactly_one():
    res = simulate_solo(gen_stream("add", 32), toy_cfg(per_thread_event_budget=500))
    assert res.metrics("stream.add").normalized_performance == 1.0


def test_corun_slows_victim():
    v = gen_stream("triad", 32)
    off = relocate(gen_offchip_antagonist(TOY, 2, array_bytes=4096), 8192)
    cfg = toy_cfg(per_thread_event_budget=2000)
    res = simulate([v, off], cfg)
    m = res.metrics("stream.triad")
    assert m.normalized_performance < 1.0
    solo = simulate_solo(v, cfg).metrics("stream.triad")
    assert m.misses >= solo.misses
    assert m.elapsed_cycles > solo.elapsed_cycles


def test_normalized_uses_equal_budget_baseline():
    v = gen_stream("triad", 32)
    off = relocate(gen_offchip_antagonist(TOY, 2, array_bytes=4096), 8192)
    cfg = toy_cfg(per_thread_event_budget=1200)
    res = simulate([v, off], cfg)
    base = solo_baseline(v, cfg)
    m = res.metrics("stream.triad")
    assert m.normalized_performance == base / m.elapsed_cycles


def test_antagonist_dominates_bandwidth_share():
    v = gen_stream("triad", 32)
    off = relocate(gen_offchip_antagonist(TOY, 2, array_bytes=4096), 8192)
    res = simulate([v, off], toy_cfg(per_thread_event_budget=2000))
    shares = {m.name: m.bandwidth_share for m in res.workloads}
    assert shares["harm.offchip"] > 0.5 > shares["stream.triad"]
    assert abs(sum(shares.values()) - 1.0) < 1e-12


def test_onchip_pollution_adds_victim_misses():
    # resident victim, long-lived thanks to a co-resident streamer thread
    v = WorkloadSpec("victim", (
        ThreadSpec(StreamKernel("triad", 32), 0),
        ThreadSpec(StreamKernel("triad", 256), 1024),
    ))
    on = relocate(gen_onchip_antagonist(TOY, 2), 8192)
    cfg = toy_cfg(hit_latency=3, mem_latency=20, mc_service_interval=2,
                  per_thread_event_budget=4000)
    solo = simulate_solo(v, cfg).metrics("victim")
    polluted = simulate([v, on], cfg).metrics("victim")
    assert polluted.misses > solo.misses
    assert polluted.normalized_performance < 1.0


def test_simulation_is_deterministic():
    v = gen_stream("triad", 48)
    off = relocate(gen_offchip_antagonist(TOY, 3, array_bytes=2048), 8192)
    cfg = toy_cfg(per_thread_event_budget=3000)
    a = simulate([v, off], cfg)
    b = simulate([v, off], cfg)
    assert a == b


def test_interference_report_layout():
    v = gen_stream("triad", 32)
    off = relocate(gen_offchip_antagonist(TOY, 2, array_bytes=4096), 8192)
    on = relocate(gen_onchip_antagonist(TOY, 2), 8192)
    rows = interference_report(v, [off, on], toy_cfg(per_thread_event_budget=1500))
    assert [r.secondary for r in rows] == ["idle", "harm.offchip", "harm.onchip"]
    assert rows[0].primary.normalized_performance == 1.0
    assert rows[0].secondary_metrics is None
    for r in rows[1:]:
        assert isinstance(r, InterferenceRow)
        assert r.secondary_metrics.name == r.secondary
        assert r.primary.normalized_performance <= 1.0
    again = interference_report(v, [off, on], toy_cfg(per_thread_event_budget=1500))
    assert rows == again


def test_interference_report_rejects_duplicate_names():
    v = gen_stream("triad", 32)
    off = relocate(gen_offchip_antagonist(TOY, 2, array_bytes=4096), 8192)
    with pytest.raises(SimulationError):
        interference_report(v, [off, off], toy_cfg())


# ---------------------------------------------------------------------------
# input validation


def test_overlapping_arenas_rejected():
    a = gen_stream("copy", 64)
    b = WorkloadSpec("b", (ThreadSpec(StridedWalk(1024, 256), 512),))
    with pytest.raises(SimulationError):
        simulate([a, b], toy_cfg())


def test_duplicate_workload_names_rejected():
    a = gen_stream("copy", 8)
    b = relocate(gen_stream("copy", 8), 1024)
    with pytest.raises(SimulationError):
        simulate([a, b], toy_cfg())


def test_empty_run_rejected():
    with pytest.raises(SimulationError):
        simulate([], toy_cfg())


def test_config_validation():
    with pytest.raises(SimulationError):
        SimConfig(geometry=TOY, hit_latency=0)
    with pytest.raises(SimulationError):
        SimConfig(geometry=TOY, mem_latency=1, hit_latency=3)
    with pytest.raises(SimulationError):
        SimConfig(geometry=TOY, mc_service_interval=0)
    with pytest.raises(SimulationError):
        SimConfig(geometry=TOY, per_thread_event_budget=0)
