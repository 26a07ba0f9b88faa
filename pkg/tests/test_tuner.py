import math

import numpy as np
import pytest

from moses_lab import data, model
from moses_lab.config import default_source_device, default_target_device, load_tasks
from moses_lab.errors import BudgetInfeasible, EmptyDataset, MissingReferenceStrategy
from moses_lab.model import TrainHyper, default_dims, init_random, pairwise_accuracy, predict_batch
from moses_lab.search import SearchParams
from moses_lab.space import build_space, default_config
from moses_lab.tuner import (
    Strategy,
    TuneBudget,
    TuneReport,
    compare_strategies,
    pretrain,
    random_init_model,
    replay_features,
    tune_task,
    tune_workload,
)

SMALL_DIMS = (16, 24, 24, 1)


def budget(**kw):
    args = dict(trials_per_task=20, num_batches=3, search=SearchParams(population=48, generations=2), online_epochs=3)
    args.update(kw)
    return TuneBudget(**args)


@pytest.fixture(scope="module")
def tasks():
    return load_tasks()


@pytest.fixture(scope="module")
def start():
    return init_random(SMALL_DIMS, 5)


@pytest.fixture(scope="module")
def replay(tasks):
    store = data.generate_dataset(default_source_device(), tasks, 20, 1)
    return replay_features(store, tasks, 32, 0)


def test_raw_measures_default_once(tasks, start):
    res = tune_task("Raw", start, default_target_device(), tasks[0], budget(), 0)
    assert len(res.records) == 1
    assert res.best_config == default_config(build_space(tasks[0]))
    assert res.wall_cost_ms == res.records[0].wall_cost_ms


def test_pretrain_only_leaves_model_untouched(tasks, start):
    before = start.theta.copy()
    res = tune_task("PretrainOnly", start, default_target_device(), tasks[0], budget(), 0)
    assert res.model.theta.tobytes() == before.tobytes()


def test_vanilla_changes_model(tasks, start):
    res = tune_task("VanillaFinetune", start, default_target_device(), tasks[0], budget(), 0)
    assert res.model.theta.tobytes() != start.theta.tobytes()


def test_moses_all_true_without_adversary_is_vanilla(tasks, start, replay):
    b = budget(adversary=False)
    dev = default_target_device()
    moses = tune_workload(Strategy.parse("Moses[rho=1]"), start, dev, tasks[:3], b, 2, replay)
    vanilla = tune_workload("VanillaFinetune", start, dev, tasks[:3], b, 2, replay)
    assert moses.tasks == vanilla.tasks
    assert moses.tasks[-1].model.theta.tobytes() == vanilla.tasks[-1].model.theta.tobytes()


def test_vanilla_from_random_init_is_random_init(tasks, start):
    dev = default_target_device()
    rand = tune_workload("RandomInit", start, dev, tasks[:3], budget(), 4)
    vanilla = tune_workload("VanillaFinetune", random_init_model(4, SMALL_DIMS), dev, tasks[:3], budget(), 4)
    assert rand.tasks == vanilla.tasks
    assert rand.tasks[-1].model.theta.tobytes() == vanilla.tasks[-1].model.theta.tobytes()


def test_moses_mask_popcount_and_adversary(tasks, start, replay):
    rep = tune_workload("Moses", start, default_target_device(), tasks[:2], budget(), 0, replay)
    assert rep.config["adversary_enabled"] is True
    assert rep.tasks[-1].model.theta.tobytes() != start.theta.tobytes()


def test_report_aggregates_and_accounting(tasks, start):
    rep = tune_workload("VanillaFinetune", start, default_target_device(), tasks[:3], budget(), 1)
    assert rep.end_latency_ms == math.fsum(t.best_latency_ms for t in rep.tasks)
    assert rep.search_cost_ms == math.fsum(r.wall_cost_ms for t in rep.tasks for r in t.records)
    for t in rep.tasks:
        assert t.best_latency_ms == min(r.latency_ms for r in t.records)
    seqs = [r.seq for t in rep.tasks for r in t.records]
    assert seqs == list(range(len(seqs)))
    assert TuneReport.from_dict(rep.to_dict()) == rep


def test_best_so_far_is_monotone(tasks, start):
    res = tune_task("VanillaFinetune", start, default_target_device(), tasks[1], budget(use_controller=False), 3)
    best, envelope = np.inf, []
    for r in res.records:
        best = min(best, r.latency_ms)
        envelope.append(best)
    assert all(a >= b for a, b in zip(envelope, envelope[1:]))
    assert envelope[-1] == res.best_latency_ms


def test_budget_conservation_random_runs(tasks, start):
    rng = np.random.default_rng(0)
    for _ in range(10):
        total = int(rng.integers(6, 30))
        b = budget(trials_per_task=total, num_batches=int(rng.integers(2, 6)), train_fraction=float(rng.uniform(0.6, 1)),
                   cv_threshold=float(rng.uniform(0, 0.5)), online_epochs=1)
        try:
            res = tune_task("VanillaFinetune", start, default_target_device(), tasks[int(rng.integers(8))], b,
                            int(rng.integers(100)))
        except BudgetInfeasible:
            continue
        tr = res.controller
        assert tr["measured"] + tr["prediction_only"] + tr["unspent"] == total


def test_controller_never_adds_cost(tasks, start):
    for seed in range(3):
        b = budget(cv_threshold=0.5)
        on = tune_task("VanillaFinetune", start, default_target_device(), tasks[2], b, seed)
        off = tune_task("VanillaFinetune", start, default_target_device(), tasks[2], budget(use_controller=False), seed)
        assert on.wall_cost_ms <= off.wall_cost_ms


def test_budget_infeasible(tasks, start):
    with pytest.raises(BudgetInfeasible):
        tune_task("VanillaFinetune", start, default_target_device(), tasks[0],
                  TuneBudget(trials_per_task=5, train_fraction=0.5, num_batches=5), 0)


def test_tuning_is_deterministic(tasks, start, replay):
    a = tune_workload("Moses", start, default_target_device(), tasks[:2], budget(), 9, replay)
    b = tune_workload("Moses", start, default_target_device(), tasks[:2], budget(), 9, replay)
    assert a == b


def test_compare_reference_rules(tasks, start):
    src, tgt = default_source_device(), default_target_device()
    with pytest.raises(MissingReferenceStrategy):
        compare_strategies(["Moses"], src, tgt, tasks[:1], budget(), [0], start)
    only = compare_strategies(["VanillaFinetune"], src, tgt, tasks[:1], budget(), [0, 1], start, workers=1)
    for row in only.rows:
        assert (row.gain, row.reduction, row.cmat_percent) == (1.0, 1.0, 0.0)


def test_compare_parallel_matches_serial(tasks, start):
    src, tgt = default_source_device(), default_target_device()
    kw = dict(tasks=tasks[:2], budget=budget(), seeds=[0, 1], pretrained=start)
    serial = compare_strategies(["VanillaFinetune", "PretrainOnly"], src, tgt, workers=1, **kw)
    fanned = compare_strategies(["VanillaFinetune", "PretrainOnly"], src, tgt, workers=2, **kw)
    assert serial.rows == fanned.rows


def test_pretrain_small_is_deterministic_and_rejects_empty(tasks):
    store = data.generate_dataset(default_source_device(), tasks, 30, 0)
    hyper = TrainHyper(max_epochs=2)
    a = pretrain(store, tasks, hyper, SMALL_DIMS)
    b = pretrain(store, tasks, hyper, SMALL_DIMS)
    assert a.params.theta.tobytes() == b.params.theta.tobytes()
    full = pretrain(store, tasks, TrainHyper(max_epochs=1))
    c = pretrain(store, tasks, TrainHyper(max_epochs=1))
    assert model.serialize(full.params) == model.serialize(c.params)
    with pytest.raises(EmptyDataset):
        pretrain(data.RecordStore(), tasks, hyper)


def test_default_pretraining_curve_and_holdout(flagship_setup):
    losses = flagship_setup.epoch_losses
    assert len(losses) == 30
    smooth = np.convolve(losses[:6], np.ones(2) / 2, mode="valid")
    assert all(b <= a * 1.01 for a, b in zip(smooth, smooth[1:]))
    held = data.generate_dataset(flagship_setup.source, flagship_setup.tasks, 500, 12345)
    feats = data.store_features(held, flagship_setup.tasks)
    accs = []
    for tid, idx in held.by_task.items():
        labels = [held.records[i].throughput_gflops for i in idx]
        accs.append(pairwise_accuracy(predict_batch(flagship_setup.pretrained, feats[idx]), labels))
    assert np.mean(accs) > 0.75


def test_same_domain_control(flagship_setup):
    """Source device as the target: the pretrained model alone is about as good as fine-tuning it."""
    s = flagship_setup
    out = compare_strategies(["PretrainOnly", "VanillaFinetune"], s.source, s.source, s.tasks, s.budget,
                             range(5), s.pretrained, s.replay, workers=1)
    ratios = [out.report("PretrainOnly", seed).end_latency_ms / out.report("VanillaFinetune", seed).end_latency_ms
              for seed in range(5)]
    print("PretrainOnly / VanillaFinetune end latency per seed:", [round(r, 3) for r in ratios])
    close = sum(abs(r - 1) <= 0.05 for r in ratios)
    assert close >= 4
