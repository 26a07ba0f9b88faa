"""Pretraining, per-task online adaptation and multi-strategy comparison."""
from __future__ import annotations

import logging
import math
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Optional

import numpy as np

from . import lottery
from .controller import ControllerState, plan_split, should_terminate
from .data import RecordStore, make_ranking_batches, store_features
from .errors import BudgetInfeasible, EmptyDataset, InfeasibleSplit, MissingReferenceStrategy
from .metrics import metric_row, medians
from .model import (
    CostModelParams,
    RankingBatch,
    TrainHyper,
    apply_update,
    default_dims,
    gradients,
    init_random,
    loss_and_gradients,
)
from .oracle import DeviceSpec, MeasurementRecord, measure_many
from .search import SearchParams, evolve, select_batch
from .space import TaskSpec, build_space, config_hash, default_config, encode_batch, fnv1a64

log = logging.getLogger(__name__)


class StrategyKind(str, Enum):
    RAW = "Raw"
    RANDOM_INIT = "RandomInit"
    PRETRAIN_ONLY = "PretrainOnly"
    VANILLA_FINETUNE = "VanillaFinetune"
    MOSES = "Moses"


@dataclass(frozen=True)
class Strategy:
    kind: StrategyKind
    ratio: Optional[float] = None
    threshold: Optional[float] = None

    @property
    def label(self) -> str:
        if self.kind is not StrategyKind.MOSES or (self.ratio is None and self.threshold is None):
            return self.kind.value
        if self.ratio is not None:
            return f"Moses[rho={self.ratio:g}]"
        return f"Moses[theta={self.threshold:g}]"

    @classmethod
    def parse(cls, text) -> "Strategy":
        """Accepts ``Moses``, ``Moses[rho=0.3]``, ``Moses[theta=0.5]`` or any plain kind name."""
        if isinstance(text, Strategy):
            return text
        if isinstance(text, StrategyKind):
            return cls(text)
        m = re.fullmatch(r"\s*(\w+)\s*(?:\[\s*(rho|theta)\s*=\s*([0-9.eE+-]+)\s*\])?\s*", str(text))
        if not m:
            raise ValueError(f"cannot parse strategy {text!r}")
        kind = StrategyKind(m.group(1))
        if m.group(2) is None:
            return cls(kind)
        if kind is not StrategyKind.MOSES:
            raise ValueError(f"only Moses takes lottery parameters: {text!r}")
        val = float(m.group(3))
        return cls(kind, ratio=val) if m.group(2) == "rho" else cls(kind, threshold=val)


@dataclass
class TuneBudget:
    trials_per_task: int = 64
    train_fraction: float = 0.9
    num_batches: int = 5
    cv_threshold: float = 0.05
    use_controller: bool = True
    search: SearchParams = field(default_factory=SearchParams)
    hyper: TrainHyper = field(default_factory=TrainHyper)
    ratio: Optional[float] = 0.5
    threshold: Optional[float] = None
    adversary: bool = True
    replay_batch: int = 64
    adversary_lr: float = 0.01
    online_epochs: int = 30

    def __post_init__(self):
        if self.trials_per_task < self.num_batches:
            raise BudgetInfeasible(f"trials_per_task {self.trials_per_task} < num_batches {self.num_batches}")
        if self.ratio is not None and self.threshold is not None:
            raise ValueError("set only one of ratio / threshold")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TuneBudget":
        d = dict(d)
        if d.get("threshold") is not None and "ratio" not in d:
            d["ratio"] = None
        search = SearchParams(**d.pop("search", {}))
        hyper = TrainHyper(**d.pop("hyper", {}))
        return cls(search=search, hyper=hyper, **d)


@dataclass
class TaskResult:
    task_id: str
    best_config: tuple
    best_latency_ms: float
    wall_cost_ms: float
    records: list
    controller: dict
    predicted: list = field(default_factory=list)
    model: Optional[CostModelParams] = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "best_config": list(self.best_config),
            "best_latency_ms": self.best_latency_ms,
            "wall_cost_ms": self.wall_cost_ms,
            "records": [dict(asdict(r), config=list(r.config)) for r in self.records],
            "controller": self.controller,
            "predicted": [list(c) for c in self.predicted],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TaskResult":
        recs = [MeasurementRecord(**dict(r, config=tuple(r["config"]))) for r in d["records"]]
        return cls(d["task_id"], tuple(d["best_config"]), d["best_latency_ms"], d["wall_cost_ms"], recs,
                   d["controller"], [tuple(c) for c in d.get("predicted", [])])


@dataclass
class TuneReport:
    strategy: str
    source_device: str
    target_device: str
    seed: int
    tasks: list
    end_latency_ms: float
    search_cost_ms: float
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "source_device": self.source_device,
            "target_device": self.target_device,
            "seed": self.seed,
            "end_latency_ms": self.end_latency_ms,
            "search_cost_ms": self.search_cost_ms,
            "config": self.config,
            "tasks": [t.to_dict() for t in self.tasks],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TuneReport":
        return cls(d["strategy"], d["source_device"], d["target_device"], d["seed"],
                   [TaskResult.from_dict(t) for t in d["tasks"]], d["end_latency_ms"], d["search_cost_ms"],
                   d.get("config", {}))


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from ints and strings."""
    ints = [fnv1a64(p.encode("utf-8")) if isinstance(p, str) else int(p) & 0xFFFFFFFFFFFFFFFF for p in parts]
    return int(np.random.SeedSequence(ints).generate_state(1, np.uint64)[0] >> np.uint64(1))


# ---------------------------------------------------------------------------
# step 1: pretraining


@dataclass
class PretrainResult:
    params: CostModelParams
    epoch_losses: list


def pretrain(store: RecordStore, tasks, hyper: TrainHyper = TrainHyper(), dims=None) -> PretrainResult:
    """Momentum gradient descent on the pairwise ranking loss over per-task batches."""
    if len(store) == 0:
        raise EmptyDataset("cannot pretrain on an empty record store")
    feats = store_features(store, tasks)
    params = init_random(dims or default_dims(feats.shape[1]), hyper.seed)
    losses = []
    for epoch in range(hyper.max_epochs):
        batches, _ = make_ranking_batches(store, tasks, hyper.batch_size, derive_seed(hyper.seed, epoch), feats)
        total = 0.0
        for batch in batches:
            loss, g = loss_and_gradients(params, batch)
            total += loss
            params = apply_update(params, g, hyper=hyper, use_momentum=True)
        losses.append(total / max(1, len(batches)))
        log.info("pretrain epoch %d/%d loss %.6f", epoch + 1, hyper.max_epochs, losses[-1])
    return PretrainResult(params, losses)


def replay_features(store: RecordStore, tasks, size: int = 256, seed: int = 0) -> np.ndarray:
    """Random source-feature rows for the adversary's replay buffer."""
    feats = store_features(store, tasks)
    idx = np.random.default_rng(seed).choice(len(feats), size=min(size, len(feats)), replace=False)
    return feats[np.sort(idx)]


# ---------------------------------------------------------------------------
# steps 2-4: online adaptation


def random_init_model(seed: int, dims=None) -> CostModelParams:
    return init_random(dims or default_dims(), derive_seed(seed, "random-init"))


class _Adapter:
    """Holds the evolving model and applies the per-strategy update after each batch."""

    def __init__(self, strategy: Strategy, model: CostModelParams, budget: TuneBudget, adversary=None):
        self.strategy = strategy
        self.model = model
        self.budget = budget
        self.adversary = adversary
        self.phase = 0
        self.mask_sizes = []

    def update(self, batch: RankingBatch) -> None:
        """One adaptation phase on a freshly measured batch (``online_epochs`` gradient steps)."""
        kind = self.strategy.kind
        hyper = self.budget.hyper
        if kind in (StrategyKind.RAW, StrategyKind.PRETRAIN_ONLY):
            return
        if kind in (StrategyKind.RANDOM_INIT, StrategyKind.VANILLA_FINETUNE):
            for _ in range(self.budget.online_epochs):
                self.model = apply_update(self.model, gradients(self.model, batch), hyper=hyper)
            return
        mask = None
        for _ in range(self.budget.online_epochs):
            g = self._moses_gradients(batch)
            if mask is None:
                mask = self._partition(g)
            self.model = lottery.transferable_step(self.model, g, mask, hyper.learning_rate)
            self.model = lottery.variant_decay(self.model, mask, hyper.learning_rate, hyper.weight_decay)
        self.phase += 1

    def _moses_gradients(self, batch: RankingBatch) -> np.ndarray:
        adv = self.adversary
        if adv is None:
            return gradients(self.model, batch)
        beta = self.budget.hyper.adversary_beta
        src = adv.sample_replay(self.budget.replay_batch)
        g = gradients(self.model, batch, adv, beta, src)
        lottery.train_discriminator(adv, self.model, src, batch.features, beta)
        return g

    def _partition(self, g: np.ndarray) -> lottery.ParamMask:
        ratio, threshold = self.strategy.ratio, self.strategy.threshold
        if ratio is None and threshold is None:
            ratio, threshold = self.budget.ratio, self.budget.threshold
        xi = lottery.xi_scores(self.model, g, normalize=threshold is not None)
        if threshold is not None:
            mask = lottery.partition(xi, threshold=threshold, phase=self.phase)
        else:
            mask = lottery.partition(xi, ratio=ratio, phase=self.phase)
        self.mask_sizes.append(mask.n_transferable)
        return mask


def _best(records):
    best = min(records, key=lambda r: (r.latency_ms, r.seq))
    return best.config, best.latency_ms


def tune_task(strategy, initial_model: Optional[CostModelParams], device: DeviceSpec, task: TaskSpec,
              budget: TuneBudget, seed: int, adversary=None, task_index: int = 0, first_seq: int = 0,
              _adapter: Optional[_Adapter] = None) -> TaskResult:
    """Tune one task on ``device``; the adapted model is returned in ``TaskResult.model``."""
    strategy = Strategy.parse(strategy)
    space = build_space(task)
    if strategy.kind is StrategyKind.RAW:
        rec = measure_many(device, task, np.asarray([default_config(space)]), seed, first_seq)[0]
        trace = {"batch_means": [], "cv_trace": [], "terminated_at": None, "measured": 1,
                 "prediction_only": 0, "unspent": budget.trials_per_task - 1}
        return TaskResult(task.id, rec.config, rec.latency_ms, rec.wall_cost_ms, [rec], trace, [], initial_model)

    try:
        plan = plan_split(budget.trials_per_task, budget.train_fraction, budget.num_batches)
    except InfeasibleSplit as e:
        raise BudgetInfeasible(str(e)) from None

    if _adapter is None:
        model = initial_model
        if strategy.kind is StrategyKind.RANDOM_INIT:
            model = random_init_model(seed, initial_model.dims if initial_model is not None else None)
        _adapter = _Adapter(strategy, model, budget, adversary)

    state = ControllerState(cv_threshold=budget.cv_threshold)
    records, hashes = [], set()
    unspent, terminated_at = 0, None
    for b, size in enumerate(plan.batch_sizes):
        if state.terminated:
            unspent += size
            continue
        sp = replace(budget.search, seed=derive_seed(seed, task_index, b))
        cands = evolve(_adapter.model, space, task, sp)
        chosen = select_batch(cands, hashes, size)
        unspent += size - len(chosen)
        if not chosen:
            continue
        score_of = {c.config: c.score for c in cands}
        recs = measure_many(device, task, np.asarray(chosen), seed, first_seq + len(records))
        records.extend(recs)
        hashes.update(config_hash(c) for c in chosen)
        if budget.use_controller:
            state, stop = should_terminate(state, float(np.mean([score_of[c] for c in chosen])))
            if stop and terminated_at is None:
                terminated_at = b + 1
        if len(recs) >= 2:
            feats = encode_batch(task, np.asarray(chosen))
            _adapter.update(RankingBatch(feats, [r.throughput_gflops for r in recs], task.id))

    predicted = []
    if plan.prediction_trials:
        sp = replace(budget.search, seed=derive_seed(seed, task_index, plan.num_batches))
        predicted = select_batch(evolve(_adapter.model, space, task, sp), hashes, plan.prediction_trials)
        unspent += plan.prediction_trials - len(predicted)

    cfg, lat = _best(records)
    trace = {
        "batch_means": list(state.batch_means),
        "cv_trace": [None if v is None else float(v) for v in state.cv_trace],
        "terminated_at": terminated_at,
        "measured": len(records),
        "prediction_only": len(predicted),
        "unspent": unspent,
    }
    wall = math.fsum(r.wall_cost_ms for r in records)
    return TaskResult(task.id, cfg, lat, wall, records, trace, predicted, _adapter.model)


def tune_workload(strategy, initial_model: Optional[CostModelParams], device: DeviceSpec, tasks, budget: TuneBudget,
                  seed: int, source_replay: Optional[np.ndarray] = None, source_device: str = "",
                  config_echo: Optional[dict] = None) -> TuneReport:
    """Tune every task in order, carrying the adapted model from one task to the next."""
    strategy = Strategy.parse(strategy)
    adapter = None
    if strategy.kind is not StrategyKind.RAW:
        model = initial_model
        if strategy.kind is StrategyKind.RANDOM_INIT:
            model = random_init_model(seed, initial_model.dims if initial_model is not None else None)
        if model is None:
            raise ValueError(f"{strategy.label} needs an initial model")
        adversary = None
        if strategy.kind is StrategyKind.MOSES and budget.adversary and source_replay is not None:
            adversary = lottery.AdversaryState.create(source_replay, model.dims[2], derive_seed(seed, "adversary"),
                                                      lr=budget.adversary_lr)
        adapter = _Adapter(strategy, model, budget, adversary)

    results, seq = [], 0
    for i, task in enumerate(tasks):
        res = tune_task(strategy, initial_model, device, task, budget, seed, task_index=i, first_seq=seq,
                        _adapter=adapter)
        seq += len(res.records)
        results.append(res)
    echo = {"budget": budget.to_dict(), "device": device.to_dict(), "tasks": [t.to_dict() for t in tasks],
            "strategy": strategy.label, "seed": seed, "adversary_enabled": bool(adapter and adapter.adversary)}
    echo.update(config_echo or {})
    return TuneReport(
        strategy=strategy.label,
        source_device=source_device,
        target_device=device.id,
        seed=seed,
        tasks=results,
        end_latency_ms=math.fsum(r.best_latency_ms for r in results),
        search_cost_ms=math.fsum(rec.wall_cost_ms for r in results for rec in r.records),
        config=echo,
    )


# ---------------------------------------------------------------------------
# comparison harness


@dataclass
class ComparisonReport:
    reports: dict
    rows: list
    medians: dict
    reference: str = StrategyKind.VANILLA_FINETUNE.value

    def report(self, strategy: str, seed: int) -> TuneReport:
        return self.reports[(strategy, seed)]


def _run_one(args):
    strategy, model, device, tasks, budget, seed, replay, source_id = args
    return tune_workload(strategy, model, device, tasks, budget, seed, replay, source_id)


def worker_count() -> int:
    n = int(os.environ.get("MOSES_LAB_THREADS", "0") or 0)
    return n if n > 0 else (os.cpu_count() or 1)


def compare_strategies(strategies, source_device: DeviceSpec, target_device: DeviceSpec, tasks, budget: TuneBudget,
                       seeds, pretrained: CostModelParams, source_replay: Optional[np.ndarray] = None,
                       workers: Optional[int] = None) -> ComparisonReport:
    """Run every strategy x seed from the same pretrained model and score them against VanillaFinetune."""
    strategies = [Strategy.parse(s) for s in strategies]
    seeds = list(seeds)
    if not seeds:
        raise ValueError("at least one seed is required")
    ref = StrategyKind.VANILLA_FINETUNE.value
    if ref not in [s.label for s in strategies]:
        raise MissingReferenceStrategy("VanillaFinetune must be among the compared strategies")
    jobs = [(s, pretrained, target_device, list(tasks), budget, seed, source_replay, source_device.id)
            for s in strategies for seed in seeds]
    workers = worker_count() if workers is None else workers
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            outs = list(pool.map(_run_one, jobs))
    else:
        outs = [_run_one(j) for j in jobs]
    reports = {(j[0].label, j[5]): r for j, r in zip(jobs, outs)}
    rows = [metric_row(reports[(ref, seed)], reports[(s.label, seed)], s.label) for s in strategies for seed in seeds]
    return ComparisonReport(reports, rows, medians(rows), ref)
