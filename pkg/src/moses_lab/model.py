"""MLP cost model with hand-written forward/backward passes.

All parameters live in one flat float64 vector ordered W1, b1, W2, b2, W3, b3
(weights stored ``(fan_in, fan_out)``).  Masks, xi scores and gradients share
that layout, so the "flat parameter index" used for tie-breaking is simply a
position in this vector.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from .errors import BadDims, CorruptStream, DimMismatch, ShapeMismatch, VersionMismatch

HIDDEN = 512
MAGIC = b"MOSM"
FORMAT_VERSION = 1


def default_dims(feature_dim: int = 16) -> tuple:
    return (feature_dim, HIDDEN, HIDDEN, 1)


def param_count(dims: Sequence[int]) -> int:
    return sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))


def _check_dims(dims) -> tuple:
    dims = tuple(int(d) for d in dims)
    if len(dims) != 4 or dims[-1] != 1 or min(dims) < 1:
        raise BadDims(f"expected dims [D, H1, H2, 1], got {list(dims)}")
    return dims


def _layout(dims):
    """Yield (weight_slice, weight_shape, bias_slice) per layer."""
    off = 0
    for fi, fo in zip(dims[:-1], dims[1:]):
        w = slice(off, off + fi * fo)
        off += fi * fo
        b = slice(off, off + fo)
        off += fo
        yield w, (fi, fo), b


@dataclass
class CostModelParams:
    dims: tuple
    theta: np.ndarray
    velocity: np.ndarray = None

    def __post_init__(self):
        self.dims = _check_dims(self.dims)
        self.theta = np.asarray(self.theta, dtype=np.float64)
        n = param_count(self.dims)
        if self.theta.shape != (n,):
            raise ShapeMismatch(f"theta has shape {self.theta.shape}, expected ({n},)")
        if self.velocity is None:
            self.velocity = np.zeros(n)
        elif self.velocity.shape != (n,):
            raise ShapeMismatch("velocity buffer does not match theta")

    @property
    def size(self) -> int:
        return self.theta.size

    def layers(self, vec: Optional[np.ndarray] = None):
        """Per-layer (W, b) views into ``vec`` (defaults to theta)."""
        vec = self.theta if vec is None else vec
        return [(vec[w].reshape(shape), vec[b]) for w, shape, b in _layout(self.dims)]

    def copy(self) -> "CostModelParams":
        return CostModelParams(self.dims, self.theta.copy(), self.velocity.copy())

    def bias_mask(self) -> np.ndarray:
        out = np.zeros(self.size, dtype=bool)
        for _, _, b in _layout(self.dims):
            out[b] = True
        return out


@dataclass
class TrainHyper:
    learning_rate: float = 0.001
    weight_decay: float = 0.01
    max_epochs: int = 30
    batch_size: int = 512
    momentum: float = 0.9
    adversary_beta: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.weight_decay < 0 or self.adversary_beta < 0:
            raise ValueError("weight_decay and adversary_beta must be >= 0")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")


@dataclass
class RankingBatch:
    features: np.ndarray
    labels: np.ndarray
    task_id: str
    record_ids: np.ndarray = field(default=None)

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        self.labels = np.asarray(self.labels, dtype=np.float64)
        if len(self.features) != len(self.labels):
            raise ShapeMismatch("features and labels differ in length")
        if len(self.labels) < 2:
            raise ValueError("a ranking batch needs at least 2 rows")
        if not np.all(self.labels > 0):
            raise ValueError("labels must be positive throughputs")


def init_random(dims: Sequence[int], seed: int) -> CostModelParams:
    """Glorot-uniform weights, zero biases."""
    dims = _check_dims(dims)
    rng = np.random.default_rng(seed)
    theta = np.zeros(param_count(dims))
    for w, (fi, fo), _ in _layout(dims):
        lim = np.sqrt(6.0 / (fi + fo))
        theta[w] = rng.uniform(-lim, lim, size=fi * fo)
    return CostModelParams(dims, theta)


def _forward(params: CostModelParams, x: np.ndarray):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != params.dims[0]:
        raise DimMismatch(f"features have {x.shape[1]} columns, model expects {params.dims[0]}")
    (w1, b1), (w2, b2), (w3, b3) = params.layers()
    h1 = np.maximum(x @ w1 + b1, 0.0)
    h2 = np.maximum(h1 @ w2 + b2, 0.0)
    scores = (h2 @ w3 + b3)[:, 0]
    return scores, (x, h1, h2)


def predict_batch(params: CostModelParams, features) -> np.ndarray:
    return _forward(params, features)[0]


def hidden_activations(params: CostModelParams, features) -> np.ndarray:
    """Second-hidden-layer outputs."""
    return _forward(params, features)[1][2]


def _label_pairs(labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.float64)
    return labels[:, None] > labels[None, :]


def pairwise_ranking_loss(scores, labels) -> float:
    """Mean logistic loss over ordered pairs with labels[i] > labels[j]."""
    scores = np.asarray(scores, dtype=np.float64)
    pairs = _label_pairs(labels)
    n = pairs.sum()
    if n == 0:
        return 0.0
    diff = scores[:, None] - scores[None, :]
    return float(np.logaddexp(0.0, -diff[pairs]).sum() / n)


def _ranking_terms(scores: np.ndarray, labels: np.ndarray, want_loss: bool = False):
    """Gradient of the mean pairwise logistic loss w.r.t. scores (and the loss itself)."""
    pairs = _label_pairs(labels)
    n = pairs.sum()
    if n == 0:
        return np.zeros_like(scores), 0.0
    diff = scores[:, None] - scores[None, :]
    g = np.where(pairs, expit(-diff), 0.0) / n
    loss = float(np.logaddexp(0.0, -diff[pairs]).sum() / n) if want_loss else None
    return g.sum(axis=0) - g.sum(axis=1), loss


def pairwise_accuracy(scores, labels) -> float:
    pairs = _label_pairs(labels)
    n = pairs.sum()
    if n == 0:
        return 1.0
    scores = np.asarray(scores, dtype=np.float64)
    return float((scores[:, None] > scores[None, :])[pairs].sum() / n)


def _confusion(adversary, h_src: np.ndarray, h_tgt: np.ndarray):
    """Negated discriminator cross-entropy and its gradient w.r.t. both activation sets."""
    u, c = adversary.weight, adversary.bias
    z_s = h_src @ u + c
    z_t = h_tgt @ u + c
    n = len(z_s) + len(z_t)
    ce = (np.logaddexp(0.0, -z_s).sum() + np.logaddexp(0.0, z_t).sum()) / n
    # d(-ce)/dz
    g_s = (1.0 - expit(z_s)) / n
    g_t = -expit(z_t) / n
    return -ce, g_s[:, None] * u[None, :], g_t[:, None] * u[None, :]


def _backward(params: CostModelParams, cache, d_scores, d_h2) -> np.ndarray:
    x, h1, h2 = cache
    grad = np.zeros(params.size)
    (gw1, gb1), (gw2, gb2), (gw3, gb3) = params.layers(grad)
    (_, _), (w2, _), (w3, _) = params.layers()
    gw3[:] = h2.T @ d_scores[:, None]
    gb3[:] = d_scores.sum()
    dh2 = d_scores[:, None] @ w3.T
    if d_h2 is not None:
        dh2 = dh2 + d_h2
    dz2 = dh2 * (h2 > 0)
    gw2[:] = h1.T @ dz2
    gb2[:] = dz2.sum(axis=0)
    dz1 = (dz2 @ w2.T) * (h1 > 0)
    gw1[:] = x.T @ dz1
    gb1[:] = dz1.sum(axis=0)
    return grad


def objective(params, batch: RankingBatch, adversary=None, beta: float = 0.0, source_features=None) -> float:
    """Scalar whose gradient ``gradients`` returns (used by finite-difference checks)."""
    scores, (_, _, h2) = _forward(params, batch.features)
    loss = pairwise_ranking_loss(scores, batch.labels)
    if adversary is not None and beta != 0.0:
        h_src = hidden_activations(params, _replay(adversary, source_features))
        loss += beta * _confusion(adversary, h_src, h2)[0]
    return loss


def _replay(adversary, source_features):
    return adversary.replay if source_features is None else source_features


def gradients(params, batch: RankingBatch, adversary=None, beta: float = 0.0, source_features=None) -> np.ndarray:
    """Analytic gradient (flat, theta layout) of ranking loss + beta * confusion.

    ``source_features`` are the replayed source rows fed through the backbone for
    the confusion term; they default to the adversary's whole replay buffer.
    """
    return loss_and_gradients(params, batch, adversary, beta, source_features, want_loss=False)[1]


def loss_and_gradients(params, batch: RankingBatch, adversary=None, beta: float = 0.0, source_features=None,
                       want_loss: bool = True):
    scores, cache = _forward(params, batch.features)
    d_scores, loss = _ranking_terms(scores, batch.labels, want_loss)
    if adversary is None or beta == 0.0:
        return loss, _backward(params, cache, d_scores, None)
    _, src_cache = _forward(params, _replay(adversary, source_features))
    conf, g_src, g_tgt = _confusion(adversary, src_cache[2], cache[2])
    grad = _backward(params, cache, d_scores, beta * g_tgt)
    grad += _backward(params, src_cache, np.zeros(len(g_src)), beta * g_src)
    if want_loss:
        loss += beta * conf
    return loss, grad


def apply_update(params: CostModelParams, grads: np.ndarray, mask=None, hyper: TrainHyper = None,
                 use_momentum: bool = False) -> CostModelParams:
    """One gradient step; returns new params.

    ``mask`` (bool, theta layout) restricts the step to transferable scalars.
    Momentum (heavy ball, ``v <- mu*v + g``) is only used for pretraining.
    """
    hyper = hyper or TrainHyper()
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != params.theta.shape:
        raise ShapeMismatch(f"gradient shape {grads.shape} != parameter shape {params.theta.shape}")
    lr = hyper.learning_rate
    if use_momentum:
        if mask is not None:
            raise ValueError("momentum updates are unmasked")
        vel = hyper.momentum * params.velocity + grads
        return CostModelParams(params.dims, params.theta - lr * vel, vel)
    if mask is None:
        return CostModelParams(params.dims, params.theta - lr * grads, params.velocity.copy())
    mask = np.asarray(getattr(mask, "bits", mask), dtype=bool)
    if mask.shape != params.theta.shape:
        raise ShapeMismatch("mask shape does not match parameters")
    return CostModelParams(params.dims, np.where(mask, params.theta - lr * grads, params.theta),
                           params.velocity.copy())


def serialize(params: CostModelParams) -> bytes:
    """``MOSM`` | u32 version | u32 D | float64 theta | float64 momentum, little-endian."""
    if params.dims != default_dims(params.dims[0]):
        raise BadDims(f"the model file format stores [D, 512, 512, 1] nets only, got {list(params.dims)}")
    head = MAGIC + struct.pack("<II", FORMAT_VERSION, params.dims[0])
    return head + params.theta.astype("<f8").tobytes() + params.velocity.astype("<f8").tobytes()


def deserialize(data: bytes) -> CostModelParams:
    if len(data) < 12 or data[:4] != MAGIC:
        raise CorruptStream("missing MOSM header")
    version, d = struct.unpack("<II", data[4:12])
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"model file version {version}, this build reads {FORMAT_VERSION}")
    dims = default_dims(d)
    n = param_count(dims)
    if len(data) != 12 + 16 * n:
        raise CorruptStream(f"expected {12 + 16 * n} bytes for D={d}, got {len(data)}")
    arr = np.frombuffer(data, dtype="<f8", offset=12).astype(np.float64)
    return CostModelParams(dims, arr[:n].copy(), arr[n:].copy())


def save(params: CostModelParams, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize(params))


def load(path) -> CostModelParams:
    with open(path, "rb") as fh:
        return deserialize(fh.read())
