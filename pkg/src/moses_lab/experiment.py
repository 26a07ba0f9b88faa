"""The source -> target adaptation experiment driven by a run configuration."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import config, data, tuner
from .model import CostModelParams, TrainHyper

log = logging.getLogger(__name__)


@dataclass
class Setup:
    doc: dict
    tasks: list
    source: object
    target: object
    budget: tuner.TuneBudget
    store: Optional[data.RecordStore] = None
    pretrained: Optional[CostModelParams] = None
    epoch_losses: list = field(default_factory=list)
    replay: Optional[np.ndarray] = None
    timings: dict = field(default_factory=dict)


def load_setup(path=None, doc: Optional[dict] = None) -> Setup:
    doc = doc if doc is not None else config.load_run_config(path)
    tasks = config.load_tasks(doc.get("tasks"))
    source = config.load_device(doc["source_device"]) if "source_device" in doc else config.default_source_device()
    target = config.load_device(doc["target_device"]) if "target_device" in doc else config.default_target_device()
    budget = tuner.TuneBudget.from_dict(doc.get("budget", {}))
    return Setup(doc, tasks, source, target, budget)


def pretrain_hyper(doc: dict) -> TrainHyper:
    return TrainHyper(**doc.get("pretrain", {}))


def prepare(setup: Setup, store: Optional[data.RecordStore] = None) -> Setup:
    """Generate (or reuse) the source dataset, pretrain on it and draw the replay buffer."""
    doc = setup.doc
    t0 = time.perf_counter()
    if store is None:
        store = data.generate_dataset(setup.source, setup.tasks, int(doc.get("source_samples_per_task", 6000)),
                                      int(doc.get("dataset_seed", 0)))
    t1 = time.perf_counter()
    hyper = pretrain_hyper(doc)
    result = tuner.pretrain(store, setup.tasks, hyper)
    t2 = time.perf_counter()
    setup.store = store
    setup.pretrained = result.params
    setup.epoch_losses = result.epoch_losses
    setup.replay = tuner.replay_features(store, setup.tasks, int(doc.get("replay_size", 256)), hyper.seed)
    setup.timings.update(dataset_s=t1 - t0, pretrain_s=t2 - t1)
    return setup


def compare(setup: Setup, strategies=None, seeds=None, workers=None) -> tuner.ComparisonReport:
    strategies = list(strategies or setup.doc.get("strategies", ["VanillaFinetune", "Moses"]))
    seeds = list(seeds if seeds is not None else setup.doc.get("seeds", [0]))
    t0 = time.perf_counter()
    out = tuner.compare_strategies(strategies, setup.source, setup.target, setup.tasks, setup.budget, seeds,
                                   setup.pretrained, setup.replay, workers)
    setup.timings["compare_s"] = setup.timings.get("compare_s", 0.0) + time.perf_counter() - t0
    log.info("compared %d strategies x %d seeds", len(strategies), len(seeds))
    return out
