"""Simulated hardware.

Throughput factorizes as ``peak * shared_factor * device_factor * noise``: the
shared factor depends only on the task and configuration, the device factor
carries everything architecture-specific (occupancy, vector width, cache).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidTask
from .space import (
    ConfigSpace,
    TaskSpec,
    build_space,
    config_hash,
    enumerate_array,
    fnv1a64,
    lexsort_order,
    validate_config,
)

NOISE_FLOOR = 0.05


@dataclass(frozen=True)
class DeviceSpec:
    id: str
    peak_gflops: float
    parallel_units: int
    vector_lanes: int
    cache_bytes: float
    noise_std: float = 0.05
    measure_overhead_ms: float = 0.0
    repeats: int = 3

    def __post_init__(self):
        if not self.id:
            raise InvalidTask("device id must be non-empty")
        if not self.peak_gflops > 0 or not self.cache_bytes > 0:
            raise InvalidTask(f"device {self.id}: peak_gflops and cache_bytes must be > 0")
        if self.parallel_units < 1 or self.repeats < 1:
            raise InvalidTask(f"device {self.id}: parallel_units and repeats must be >= 1")
        lanes = self.vector_lanes
        if lanes < 1 or lanes & (lanes - 1):
            raise InvalidTask(f"device {self.id}: vector_lanes must be a power of two")
        if self.noise_std < 0 or self.measure_overhead_ms < 0:
            raise InvalidTask(f"device {self.id}: noise_std and measure_overhead_ms must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DeviceSpec":
        try:
            return cls(
                id=str(d["id"]),
                peak_gflops=float(d["peak_gflops"]),
                parallel_units=int(d["parallel_units"]),
                vector_lanes=int(d["vector_lanes"]),
                cache_bytes=float(d["cache_bytes"]),
                noise_std=float(d.get("noise_std", 0.05)),
                measure_overhead_ms=float(d.get("measure_overhead_ms", 0.0)),
                repeats=int(d.get("repeats", 3)),
            )
        except KeyError as e:
            raise InvalidTask(f"device entry missing field {e.args[0]!r}") from None


@dataclass(frozen=True)
class MeasurementRecord:
    task_id: str
    config: tuple
    throughput_gflops: float
    latency_ms: float
    wall_cost_ms: float
    device_id: str
    seq: int = 0


def _knob_columns(task: TaskSpec, values: np.ndarray):
    values = np.atleast_2d(np.asarray(values, dtype=np.int64))
    names = ("tile_x", "tile_y", "unroll", "vectorize", "parallel")
    return [values[:, task.knob_index(n)].astype(np.float64) for n in names]


def shared_factor_batch(task: TaskSpec, values: np.ndarray) -> np.ndarray:
    tx, ty, unroll, _, _ = _knob_columns(task, values)
    f_loc = np.exp(-((np.log2(tx * ty) - task.ideal_log2_tiles) ** 2) / 8)
    f_unr = 0.8 + 0.2 * np.exp(-((np.log2(1 + unroll) - task.ideal_log2_unroll) ** 2) / 4)
    return f_loc * f_unr


def device_factor_batch(device: DeviceSpec, task: TaskSpec, values: np.ndarray) -> np.ndarray:
    tx, ty, unroll, vec, par = _knob_columns(task, values)
    units = float(device.parallel_units)
    lanes = float(device.vector_lanes)
    occ = np.minimum(par / units, units / par)
    vfac = np.minimum(vec / lanes, lanes / vec) ** 0.5
    footprint = task.bytes_per_unit * tx * ty * np.maximum(1.0, unroll)
    pen = np.where(footprint <= device.cache_bytes, 1.0, device.cache_bytes / footprint)
    return occ * vfac * pen


def shared_factor(task: TaskSpec, config: Sequence[int]) -> float:
    validate_config(build_space(task), config)
    return float(shared_factor_batch(task, np.asarray([config]))[0])


def device_factor(device: DeviceSpec, task: TaskSpec, config: Sequence[int]) -> float:
    validate_config(build_space(task), config)
    return float(device_factor_batch(device, task, np.asarray([config]))[0])


def noise_free_throughput(device: DeviceSpec, task: TaskSpec, values: np.ndarray) -> np.ndarray:
    return device.peak_gflops * shared_factor_batch(task, values) * device_factor_batch(device, task, values)


def noise_multiplier(device: DeviceSpec, task: TaskSpec, config: Sequence[int], seed: int) -> float:
    """``max(0.05, 1 + eps)`` with eps drawn on the stream keyed by (seed, device, task, config)."""
    if device.noise_std == 0:
        return 1.0
    key = [
        int(seed) & 0xFFFFFFFFFFFFFFFF,
        fnv1a64(device.id.encode("utf-8")),
        fnv1a64(task.id.encode("utf-8")),
        config_hash(config),
    ]
    eps = np.random.default_rng(np.random.SeedSequence(key)).normal(0.0, device.noise_std)
    return max(NOISE_FLOOR, 1.0 + eps)


def make_record(device: DeviceSpec, task: TaskSpec, config: Sequence[int], throughput: float, seq: int = 0):
    latency = task.work_gflops / throughput * 1000
    return MeasurementRecord(
        task_id=task.id,
        config=tuple(int(v) for v in config),
        throughput_gflops=float(throughput),
        latency_ms=float(latency),
        wall_cost_ms=float(device.measure_overhead_ms + device.repeats * latency),
        device_id=device.id,
        seq=seq,
    )


def measure_many(device: DeviceSpec, task: TaskSpec, values: np.ndarray, seed: int, first_seq: int = 0) -> list:
    values = np.atleast_2d(np.asarray(values, dtype=np.int64))
    base = noise_free_throughput(device, task, values)
    out = []
    for i, (row, b) in enumerate(zip(values, base)):
        cfg = tuple(int(v) for v in row)
        thr = b * noise_multiplier(device, task, cfg, seed) if device.noise_std else b
        out.append(make_record(device, task, cfg, thr, first_seq + i))
    return out


def measure(device: DeviceSpec, task: TaskSpec, config: Sequence[int], seed: int, seq: int = 0) -> MeasurementRecord:
    cfg = validate_config(build_space(task), config)
    return measure_many(device, task, np.asarray([cfg]), seed, seq)[0]


def true_best(device: DeviceSpec, task: TaskSpec, space: ConfigSpace | None = None):
    """Exhaustive noise-free argmax; ties go to the lexicographically smallest config."""
    space = space or build_space(task)
    values = enumerate_array(space)
    thr = noise_free_throughput(device, task, values)
    order = lexsort_order(values)
    best = order[np.argmax(thr[order])]
    cfg = tuple(int(v) for v in values[best])
    return cfg, task.work_gflops / float(thr[best]) * 1000
