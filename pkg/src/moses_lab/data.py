"""Measurement record storage and offline dataset generation."""
from __future__ import annotations

import json
import logging
from collections import defaultdict
from typing import Iterable

import numpy as np

from .errors import MissingField, ParseError
from .model import RankingBatch
from .oracle import DeviceSpec, MeasurementRecord, measure_many
from .space import TaskSpec, build_space, encode_batch, sample_configs

log = logging.getLogger(__name__)

RECORD_FIELDS = ("task_id", "values", "throughput_gflops", "latency_ms", "wall_cost_ms", "device_id", "seq")


class RecordStore:
    """Append-only sequence of measurement records, indexed by task id."""

    def __init__(self, records: Iterable[MeasurementRecord] = ()):
        self.records: list = []
        self.by_task: dict = defaultdict(list)
        for r in records:
            self.append(r)

    def append(self, record: MeasurementRecord) -> None:
        self.by_task[record.task_id].append(len(self.records))
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __eq__(self, other):
        return isinstance(other, RecordStore) and self.records == other.records

    @property
    def task_ids(self) -> list:
        return list(self.by_task)

    def task_records(self, task_id: str) -> list:
        return [self.records[i] for i in self.by_task.get(task_id, [])]


def generate_dataset(device: DeviceSpec, tasks, samples_per_task: int, seed: int) -> RecordStore:
    """Uniformly random configurations per task, measured on ``device``."""
    if samples_per_task < 1:
        raise ValueError("samples_per_task must be >= 1")
    rng = np.random.default_rng(seed)
    store = RecordStore()
    for task in tasks:
        values = sample_configs(build_space(task), rng, samples_per_task)
        for rec in measure_many(device, task, values, seed, first_seq=len(store)):
            store.append(rec)
    return store


def record_to_json(rec: MeasurementRecord) -> str:
    return json.dumps({
        "task_id": rec.task_id,
        "values": list(rec.config),
        "throughput_gflops": rec.throughput_gflops,
        "latency_ms": rec.latency_ms,
        "wall_cost_ms": rec.wall_cost_ms,
        "device_id": rec.device_id,
        "seq": rec.seq,
    })


def record_from_json(line: str, lineno: int) -> MeasurementRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise ParseError(f"malformed JSON ({e.msg})", lineno) from None
    if not isinstance(obj, dict):
        raise ParseError("record is not an object", lineno)
    for name in RECORD_FIELDS:
        if name not in obj:
            raise MissingField(f"missing field {name!r}", lineno)
    try:
        return MeasurementRecord(
            task_id=str(obj["task_id"]),
            config=tuple(int(v) for v in obj["values"]),
            throughput_gflops=float(obj["throughput_gflops"]),
            latency_ms=float(obj["latency_ms"]),
            wall_cost_ms=float(obj["wall_cost_ms"]),
            device_id=str(obj["device_id"]),
            seq=int(obj["seq"]),
        )
    except (TypeError, ValueError) as e:
        raise ParseError(f"bad field value ({e})", lineno) from None


def write_records(store: RecordStore, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in store:
            fh.write(record_to_json(rec) + "\n")


def read_records(path) -> RecordStore:
    store = RecordStore()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                store.append(record_from_json(line, lineno))
    return store


def store_features(store: RecordStore, tasks) -> np.ndarray:
    """Feature matrix aligned with ``store.records``."""
    by_id = {t.id: t for t in tasks}
    feats = np.zeros((len(store), 16))
    for task_id, idx in store.by_task.items():
        values = np.asarray([store.records[i].config for i in idx], dtype=np.int64)
        feats[idx] = encode_batch(by_id[task_id], values)
    return feats


def make_ranking_batches(store: RecordStore, tasks, batch_size: int, seed: int,
                         features: np.ndarray = None):
    """One epoch of single-task batches in shuffled order.

    Returns ``(batches, dropped)``.  Every record appears exactly once except
    trailing singletons, which cannot form a pair and are dropped.
    """
    if features is None:
        features = store_features(store, tasks)
    labels = np.array([r.throughput_gflops for r in store.records])
    rng = np.random.default_rng(seed)
    chunks, dropped = [], 0
    for task_id in sorted(store.by_task):
        idx = np.asarray(store.by_task[task_id])
        idx = idx[rng.permutation(len(idx))]
        for start in range(0, len(idx), batch_size):
            part = idx[start:start + batch_size]
            if len(part) < 2:
                dropped += len(part)
                continue
            chunks.append((task_id, part))
    if dropped:
        log.info("dropped %d singleton record(s) that had no ranking peer", dropped)
    batches = []
    for i in rng.permutation(len(chunks)):
        task_id, part = chunks[i]
        batches.append(RankingBatch(features[part], labels[part], task_id, part))
    return batches, dropped
