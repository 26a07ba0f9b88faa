"""Synthetic tuning tasks, their knob spaces and the feature encoder.

A configuration is a plain tuple of knob values (one per knob, in task order).
Bulk operations use ``(n, n_knobs)`` int64 arrays of the same values.
"""
from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ImmutableSpace, InvalidConfig, InvalidTask, SpaceTooLarge

FEATURE_DIM = 16
ENUM_CAP = 10**6
DEFAULT_KNOB_NAMES = ("tile_x", "tile_y", "unroll", "vectorize", "parallel")

Configuration = tuple


def _is_pow2(v: int) -> bool:
    return v > 0 and (v & (v - 1)) == 0


@dataclass(frozen=True)
class KnobSpec:
    name: str
    kind: str
    domain: tuple

    def __post_init__(self):
        dom = tuple(int(v) for v in self.domain)
        object.__setattr__(self, "domain", dom)
        if self.kind not in ("pow2", "enum-int"):
            raise InvalidTask(f"knob {self.name!r}: unknown kind {self.kind!r}")
        if not dom:
            raise InvalidTask(f"knob {self.name!r}: empty domain")
        if any(b <= a for a, b in zip(dom, dom[1:])):
            raise InvalidTask(f"knob {self.name!r}: domain must be strictly increasing")
        if self.kind == "pow2" and not all(_is_pow2(v) for v in dom):
            raise InvalidTask(f"knob {self.name!r}: pow2 domain holds a non power of two")


def default_knobs() -> tuple:
    p2 = lambda n: tuple(2**i for i in range(n))  # noqa: E731
    return (
        KnobSpec("tile_x", "pow2", p2(7)),
        KnobSpec("tile_y", "pow2", p2(7)),
        KnobSpec("unroll", "enum-int", (0, 16, 64, 512)),
        KnobSpec("vectorize", "pow2", p2(5)),
        KnobSpec("parallel", "pow2", p2(9)),
    )


@dataclass(frozen=True)
class TaskSpec:
    id: str
    work_gflops: float
    bytes_per_unit: float
    ideal_log2_tiles: float
    ideal_log2_unroll: float
    knobs: tuple = field(default_factory=default_knobs)

    def __post_init__(self):
        object.__setattr__(self, "knobs", tuple(self.knobs))
        if not self.id:
            raise InvalidTask("task id must be non-empty")
        if not self.work_gflops > 0:
            raise InvalidTask(f"task {self.id}: work_gflops must be > 0")
        if not self.bytes_per_unit > 0:
            raise InvalidTask(f"task {self.id}: bytes_per_unit must be > 0")
        if not 0 <= self.ideal_log2_tiles <= 16:
            raise InvalidTask(f"task {self.id}: ideal_log2_tiles outside [0, 16]")
        if not 0 <= self.ideal_log2_unroll <= 10:
            raise InvalidTask(f"task {self.id}: ideal_log2_unroll outside [0, 10]")
        if not self.knobs:
            raise InvalidTask(f"task {self.id}: no knobs")
        names = [k.name for k in self.knobs]
        if len(set(names)) != len(names):
            raise InvalidTask(f"task {self.id}: duplicate knob names")

    def knob_index(self, name: str) -> int:
        for i, k in enumerate(self.knobs):
            if k.name == name:
                return i
        raise InvalidTask(f"task {self.id}: no knob named {name!r}")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "work_gflops": self.work_gflops,
            "bytes_per_unit": self.bytes_per_unit,
            "ideal_log2_tiles": self.ideal_log2_tiles,
            "ideal_log2_unroll": self.ideal_log2_unroll,
            "knobs": [{"name": k.name, "kind": k.kind, "domain": list(k.domain)} for k in self.knobs],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TaskSpec":
        knobs = d.get("knobs")
        kw = {}
        if knobs is not None:
            kw["knobs"] = tuple(KnobSpec(k["name"], k["kind"], tuple(k["domain"])) for k in knobs)
        try:
            return cls(
                id=str(d["id"]),
                work_gflops=float(d["work_gflops"]),
                bytes_per_unit=float(d["bytes_per_unit"]),
                ideal_log2_tiles=float(d["ideal_log2_tiles"]),
                ideal_log2_unroll=float(d["ideal_log2_unroll"]),
                **kw,
            )
        except KeyError as e:
            raise InvalidTask(f"task entry missing field {e.args[0]!r}") from None


@dataclass(frozen=True)
class ConfigSpace:
    task: TaskSpec
    size: int

    @property
    def domains(self) -> list:
        return [np.asarray(k.domain, dtype=np.int64) for k in self.task.knobs]

    @property
    def cardinalities(self) -> tuple:
        return tuple(len(k.domain) for k in self.task.knobs)

    def contains(self, config: Sequence[int]) -> bool:
        if len(config) != len(self.task.knobs):
            return False
        return all(int(v) in k.domain for v, k in zip(config, self.task.knobs))


def build_space(task: TaskSpec) -> ConfigSpace:
    for k in task.knobs:
        if not k.domain:
            raise InvalidTask(f"knob {k.name!r} has an empty domain")
    return ConfigSpace(task, math.prod(len(k.domain) for k in task.knobs))


def validate_config(space: ConfigSpace, config: Sequence[int]) -> Configuration:
    if not space.contains(config):
        raise InvalidConfig(f"{tuple(config)} is not a valid configuration of task {space.task.id}")
    return tuple(int(v) for v in config)


def sample_configs(space: ConfigSpace, rng: np.random.Generator, n: int) -> np.ndarray:
    """Draw ``n`` configurations, each knob uniform over its domain."""
    card = np.asarray(space.cardinalities, dtype=np.int64)
    idx = rng.integers(0, card, size=(n, len(card)))
    return indices_to_values(space, idx)


def sample_config(space: ConfigSpace, rng: np.random.Generator) -> Configuration:
    return tuple(int(v) for v in sample_configs(space, rng, 1)[0])


def mutate_config(space: ConfigSpace, config: Sequence[int], rng: np.random.Generator) -> Configuration:
    """Change exactly one knob to a different value of its domain."""
    config = validate_config(space, config)
    mutable = [i for i, c in enumerate(space.cardinalities) if c > 1]
    if not mutable:
        raise ImmutableSpace(f"task {space.task.id}: every knob domain has a single value")
    pos = mutable[int(rng.integers(len(mutable)))]
    dom = space.task.knobs[pos].domain
    old = dom.index(config[pos])
    new = int(rng.integers(len(dom) - 1))
    if new >= old:
        new += 1
    out = list(config)
    out[pos] = dom[new]
    return tuple(out)


def values_to_indices(space: ConfigSpace, values: np.ndarray) -> np.ndarray:
    values = np.atleast_2d(np.asarray(values, dtype=np.int64))
    return np.stack([np.searchsorted(d, values[:, i]) for i, d in enumerate(space.domains)], axis=1)


def indices_to_values(space: ConfigSpace, idx: np.ndarray) -> np.ndarray:
    idx = np.atleast_2d(np.asarray(idx, dtype=np.int64))
    cols = [d[idx[:, i]] for i, d in enumerate(space.domains)]
    return np.stack(cols, axis=1) if cols else np.zeros((len(idx), 0), dtype=np.int64)


def lexsort_order(values: np.ndarray) -> np.ndarray:
    """Permutation sorting rows of ``values`` lexicographically (first knob most significant)."""
    values = np.atleast_2d(values)
    return np.lexsort(values.T[::-1])


def enumerate_configs(space: ConfigSpace, cap: int = ENUM_CAP) -> list:
    if space.size > cap:
        raise SpaceTooLarge(f"space of task {space.task.id} has {space.size} configs > cap {cap}")
    return list(itertools.product(*(k.domain for k in space.task.knobs)))


def enumerate_array(space: ConfigSpace, cap: int = ENUM_CAP) -> np.ndarray:
    if space.size > cap:
        raise SpaceTooLarge(f"space of task {space.task.id} has {space.size} configs > cap {cap}")
    grids = np.meshgrid(*space.domains, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1).astype(np.int64)


def default_config(space: ConfigSpace) -> Configuration:
    """Every knob at its median domain index (upper median for even sizes)."""
    return tuple(k.domain[len(k.domain) // 2] for k in space.task.knobs)


# ---------------------------------------------------------------------------
# feature encoding


@functools.lru_cache(maxsize=256)
def _feature_tables(task: TaskSpec):
    ix, iy, iu, iv, ip = (task.knob_index(n) for n in DEFAULT_KNOB_NAMES)
    kx, ky, ku, kv, kp = (task.knobs[i].domain for i in (ix, iy, iu, iv, ip))
    tx = np.array([math.log2(v) / 6 for v in kx])
    ty = np.array([math.log2(v) / 6 for v in ky])
    tu = np.array([math.log2(1 + v) / 10 for v in ku])
    tv = np.array([math.log2(v) / 4 for v in kv])
    tp = np.array([math.log2(v) / 8 for v in kp])
    tiles = np.array([[math.log2(a * b) / 12 for b in ky] for a in kx])
    foot = np.array(
        [[[math.log2(task.bytes_per_unit * a * b * max(1, u)) / 24 for u in ku] for b in ky] for a in kx]
    )
    const = np.zeros(FEATURE_DIM)
    const[7] = min(1.0, max(0.0, math.log10(task.work_gflops) / 3))
    const[8] = task.ideal_log2_tiles / 16
    const[9] = task.ideal_log2_unroll / 10
    return (ix, iy, iu, iv, ip), (tx, ty, tu, tv, tp, tiles, foot), const


def encode_batch(task: TaskSpec, values: np.ndarray) -> np.ndarray:
    """Encode an ``(n, n_knobs)`` array of configurations into ``(n, 16)`` features."""
    values = np.atleast_2d(np.asarray(values, dtype=np.int64))
    space = build_space(task)
    (ix, iy, iu, iv, ip), (tx, ty, tu, tv, tp, tiles, foot), const = _feature_tables(task)
    idx = values_to_indices(space, values)
    if not np.array_equal(indices_to_values(space, np.minimum(idx, np.array(space.cardinalities) - 1)), values):
        raise InvalidConfig(f"batch holds configurations outside the space of task {task.id}")
    a, b, u, v, p = idx[:, ix], idx[:, iy], idx[:, iu], idx[:, iv], idx[:, ip]
    out = np.tile(const, (len(values), 1))
    out[:, 0] = tx[a]
    out[:, 1] = ty[b]
    out[:, 2] = tu[u]
    out[:, 3] = tv[v]
    out[:, 4] = tp[p]
    out[:, 5] = tiles[a, b]
    out[:, 6] = foot[a, b, u]
    return out


def encode_features(task: TaskSpec, config: Sequence[int]) -> np.ndarray:
    """Device-independent 16-d encoding of one configuration."""
    validate_config(build_space(task), config)
    return encode_batch(task, np.asarray([config]))[0]


def fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for byte in data:
        h ^= byte
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def config_hash(config: Sequence[int]) -> int:
    """64-bit FNV-1a over the knob values, each as a signed little-endian int64."""
    return fnv1a64(b"".join(int(v).to_bytes(8, "little", signed=True) for v in config))
