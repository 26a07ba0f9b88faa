"""Cost-model guided evolutionary search over a task's knob space."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .model import CostModelParams, predict_batch
from .space import ConfigSpace, TaskSpec, config_hash, encode_batch, mutate_config, sample_configs


@dataclass(frozen=True)
class SearchParams:
    population: int = 128
    generations: int = 4
    mutation_count: int = 4
    survivors: int = 32
    epsilon_random: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if min(self.population, self.mutation_count, self.survivors) < 1 or self.generations < 0:
            raise ValueError("search counts must be positive")
        if self.survivors > self.population:
            raise ValueError("survivors must not exceed population")
        if not 0 <= self.epsilon_random <= 1:
            raise ValueError("epsilon_random must lie in [0, 1]")


@dataclass(frozen=True)
class ScoredCandidate:
    config: tuple
    score: float


Scorer = Union[CostModelParams, Callable[[np.ndarray], np.ndarray]]


def model_scorer(params: CostModelParams, task: TaskSpec) -> Callable[[np.ndarray], np.ndarray]:
    return lambda values: predict_batch(params, encode_batch(task, values))


def _rank(values: np.ndarray, scores: np.ndarray) -> np.ndarray:
    # score descending, then lexicographic config order
    keys = [values[:, i] for i in range(values.shape[1] - 1, -1, -1)] + [-scores]
    return np.lexsort(keys)


def evolve(scorer: Scorer, space: ConfigSpace, task: TaskSpec, params: SearchParams = SearchParams()) -> list:
    """Return the final population as ScoredCandidates, best first."""
    score = model_scorer(scorer, task) if isinstance(scorer, CostModelParams) else scorer
    rng = np.random.default_rng(params.seed)

    pop = np.unique(sample_configs(space, rng, params.population), axis=0)
    scores = np.asarray(score(pop), dtype=np.float64)
    for _ in range(params.generations):
        order = _rank(pop, scores)
        keep = pop[order[: params.survivors]]
        children = []
        for parent in keep:
            for _ in range(params.mutation_count):
                if rng.random() < params.epsilon_random:
                    children.append(sample_configs(space, rng, 1)[0])
                else:
                    children.append(mutate_config(space, tuple(parent), rng))
        pool = np.unique(np.vstack([keep, np.asarray(children, dtype=np.int64)]), axis=0)
        pool_scores = np.asarray(score(pool), dtype=np.float64)
        top = _rank(pool, pool_scores)[: params.population]
        pop, scores = pool[top], pool_scores[top]

    order = _rank(pop, scores)
    return [ScoredCandidate(tuple(int(v) for v in pop[i]), float(scores[i])) for i in order]


def select_batch(candidates, already_measured, batch_size: int) -> list:
    """Best-scored candidates not measured yet, in score order.

    ``already_measured`` holds config hashes (see ``space.config_hash``).
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    out, seen = [], set(already_measured)
    for cand in candidates:
        h = config_hash(cand.config)
        if h in seen:
            continue
        seen.add(h)
        out.append(cand.config)
        if len(out) == batch_size:
            break
    return out
