import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from moses_lab.config import default_source_device, default_target_device, load_tasks
from moses_lab.oracle import (
    DeviceSpec,
    device_factor,
    device_factor_batch,
    measure,
    measure_many,
    noise_free_throughput,
    shared_factor,
    shared_factor_batch,
    true_best,
)
from moses_lab.space import TaskSpec, build_space, enumerate_array, sample_config

TASK = TaskSpec("t", 1.5, 4.0, 8.0, math.log2(65))
DEV = DeviceSpec("d", 1000.0, 8, 4, 1e9, noise_std=0.0, measure_overhead_ms=5.0, repeats=3)


def ref_shared(task, cfg):
    tx, ty, u, _, _ = cfg
    f_loc = math.exp(-((math.log2(tx * ty) - task.ideal_log2_tiles) ** 2) / 8)
    f_unr = 0.8 + 0.2 * math.exp(-((math.log2(1 + u) - task.ideal_log2_unroll) ** 2) / 4)
    return f_loc * f_unr


def ref_device(dev, task, cfg):
    tx, ty, u, v, p = cfg
    U, L, C = dev.parallel_units, dev.vector_lanes, dev.cache_bytes
    occ = min(p / U, U / p)
    vec = min(v / L, L / v) ** 0.5
    F = task.bytes_per_unit * tx * ty * max(1, u)
    return occ * vec * (1.0 if F <= C else C / F)


def test_shared_factor_peak_and_shift():
    assert shared_factor(TASK, (16, 16, 64, 1, 1)) == 1.0
    assert shared_factor(TASK, (64, 64, 64, 1, 1)) == pytest.approx(math.exp(-2), abs=1e-15)
    assert math.exp(-2) == pytest.approx(0.1353, abs=1e-4)


def test_device_factor_examples():
    assert device_factor(DEV, TASK, (1, 1, 0, 4, 8)) == 1.0
    assert device_factor(DEV, TASK, (1, 1, 0, 4, 32)) == 0.25


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_factors_match_independent_recomputation(seed):
    task = TaskSpec("r", 0.7, 3.0, 5.3, 2.2)
    dev = DeviceSpec("r", 900.0, 16, 8, 3e4)
    cfg = sample_config(build_space(task), np.random.default_rng(seed))
    assert abs(shared_factor(task, cfg) - ref_shared(task, cfg)) <= 1e-12
    assert abs(device_factor(dev, task, cfg) - ref_device(dev, task, cfg)) <= 1e-12
    assert 0 < shared_factor(task, cfg) <= 1 and 0 < device_factor(dev, task, cfg) <= 1


def test_shared_factor_device_invariant():
    task = load_tasks()[0]
    a, b = default_source_device(), default_target_device()
    vals = enumerate_array(build_space(task))
    shared_a = noise_free_throughput(a, task, vals) / (a.peak_gflops * device_factor_batch(a, task, vals))
    shared_b = noise_free_throughput(b, task, vals) / (b.peak_gflops * device_factor_batch(b, task, vals))
    np.testing.assert_allclose(shared_a, shared_b, rtol=1e-12)
    np.testing.assert_array_equal(shared_factor_batch(task, vals), shared_factor_batch(task, vals.copy()))


def test_factorization_exhaustive_noise_free():
    task = load_tasks()[3]
    dev = DeviceSpec("quiet", 600.0, 4, 4, 2e5, noise_std=0.0, measure_overhead_ms=1.0)
    vals = enumerate_array(build_space(task))
    recs = measure_many(dev, task, vals, seed=7)
    for cfg, rec in zip(vals, recs):
        cfg = tuple(int(x) for x in cfg)
        expect = dev.peak_gflops * shared_factor(task, cfg) * device_factor(dev, task, cfg)
        assert rec.throughput_gflops == expect


def test_record_invariants_and_determinism():
    dev = default_target_device()
    task = load_tasks()[0]
    r1 = measure(dev, task, (8, 8, 64, 4, 4), seed=3, seq=5)
    r2 = measure(dev, task, (8, 8, 64, 4, 4), seed=3, seq=5)
    assert r1 == r2
    assert r1.latency_ms == task.work_gflops / r1.throughput_gflops * 1000
    assert r1.wall_cost_ms == dev.measure_overhead_ms + dev.repeats * r1.latency_ms
    assert measure(dev, task, (8, 8, 64, 4, 4), seed=4).throughput_gflops != r1.throughput_gflops


def test_noise_level_monte_carlo():
    dev = DeviceSpec("n", 1000.0, 8, 4, 1e9, noise_std=0.05)
    thr = np.array([measure(dev, TASK, (16, 16, 64, 4, 8), seed=s).throughput_gflops for s in range(1000)])
    cv = thr.std() / thr.mean()
    assert 0.04 <= cv <= 0.06


def test_wall_cost_grows_with_overhead():
    task = load_tasks()[0]
    cheap = DeviceSpec("x", 600.0, 4, 4, 2e5, measure_overhead_ms=2.0)
    dear = DeviceSpec("x", 600.0, 4, 4, 2e5, measure_overhead_ms=120.0)
    a, b = measure(cheap, task, (4, 4, 16, 4, 4), 0), measure(dear, task, (4, 4, 16, 4, 4), 0)
    assert a.latency_ms == b.latency_ms
    assert b.wall_cost_ms > a.wall_cost_ms


def test_true_best_separable_peaks():
    dev = DeviceSpec("a", 100.0, 4, 4, 1e12, noise_std=0.0)
    cfg, lat = true_best(dev, TASK)
    assert cfg[4] == 4 and cfg[3] == 4
    assert lat == pytest.approx(TASK.work_gflops / 100.0 * 1000)
    other = DeviceSpec("b", 100.0, 16, 4, 1e12, noise_std=0.0)
    cfg2, _ = true_best(other, TASK)
    assert cfg2[:4] == cfg[:4] and cfg2[4] == 16


def test_true_best_matches_brute_force_on_default_files():
    tasks = load_tasks()
    for dev in (default_source_device(), default_target_device()):
        for task in tasks:
            best_cfg, best_lat = None, math.inf
            for cfg in enumerate_array(build_space(task)):
                cfg = tuple(int(x) for x in cfg)
                thr = dev.peak_gflops * ref_shared(task, cfg) * ref_device(dev, task, cfg)
                lat = task.work_gflops / thr * 1000
                if lat < best_lat * (1 - 1e-12):
                    best_cfg, best_lat = cfg, lat
            cfg, lat = true_best(dev, task)
            assert cfg == best_cfg
            assert lat == pytest.approx(best_lat, rel=1e-12)
