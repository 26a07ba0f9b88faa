import numpy as np
import pytest

from moses_lab.config import default_target_device, load_tasks
from moses_lab.oracle import noise_free_throughput, shared_factor_batch, true_best
from moses_lab.search import ScoredCandidate, SearchParams, evolve, select_batch
from moses_lab.space import build_space, config_hash, enumerate_array


@pytest.fixture(scope="module")
def task():
    return load_tasks()[0]


def shared_scorer(task):
    return lambda values: shared_factor_batch(task, values)


def test_generations_zero_is_sorted_random_population(task):
    space = build_space(task)
    out = evolve(shared_scorer(task), space, task, SearchParams(population=50, generations=0, seed=3))
    scores = [c.score for c in out]
    assert scores == sorted(scores, reverse=True)
    assert len({c.config for c in out}) == len(out) <= 50
    assert all(space.contains(c.config) for c in out)


def test_ties_broken_lexicographically(task):
    out = evolve(lambda v: np.zeros(len(v)), build_space(task), task, SearchParams(population=40, generations=2))
    configs = [c.config for c in out]
    assert configs == sorted(configs)


def test_evolve_deterministic(task):
    space = build_space(task)
    sp = SearchParams(seed=11)
    assert evolve(shared_scorer(task), space, task, sp) == evolve(shared_scorer(task), space, task, sp)


def test_shared_factor_search_reaches_top_percentile(task):
    space = build_space(task)
    everything = shared_factor_batch(task, enumerate_array(space))
    p99 = np.percentile(everything, 99)
    out = evolve(shared_scorer(task), space, task, SearchParams(generations=8, seed=0))
    assert out[0].score >= p99


def test_oracle_scored_search_power(task):
    dev = default_target_device()
    _, best = true_best(dev, task)
    space = build_space(task)
    hits = 0
    for seed in range(10):
        out = evolve(lambda v: noise_free_throughput(dev, task, v), space, task, SearchParams(seed=seed))
        lat = task.work_gflops / out[0].score * 1000
        hits += lat <= best * 1.05
    assert hits >= 9


def test_select_batch_contract():
    cands = [ScoredCandidate((i,), float(10 - i)) for i in range(6)]
    assert select_batch(cands, set(), 3) == [(0,), (1,), (2,)]
    assert select_batch(cands, {config_hash((i,)) for i in range(6)}, 3) == []
    assert select_batch(cands, {config_hash((0,))}, 2) == [(1,), (2,)]
    assert select_batch(cands, set(), 100) == [c.config for c in cands]
    dup = cands + [ScoredCandidate((0,), 0.0)]
    assert select_batch(dup, set(), 10) == [c.config for c in cands]
    with pytest.raises(ValueError):
        select_batch(cands, set(), 0)


def test_search_params_validation():
    with pytest.raises(ValueError):
        SearchParams(population=4, survivors=8)
    with pytest.raises(ValueError):
        SearchParams(epsilon_random=1.5)
