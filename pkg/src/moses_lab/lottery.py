"""Transferable-parameter selection and the masked adaptation step.

Per tuning phase the canonical update is::

    xi = xi_scores(params, grads)          # |w * dL/dw| per scalar
    mask = partition(xi, ratio=rho)        # True = transferable
    params = transferable_step(params, grads, mask, lr)
    params = variant_decay(params, mask, lr, weight_decay)

With an all-true mask this is exactly plain fine-tuning.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np
from scipy.special import expit

from .errors import AdversaryDisabled, CorruptStream, InvalidRatio, ShapeMismatch, UnnormalizedThreshold, \
    UnstableDecay
from .model import CostModelParams, apply_update, hidden_activations, TrainHyper


@dataclass
class XiScores:
    values: np.ndarray
    normalized: bool = False


@dataclass
class ParamMask:
    bits: np.ndarray
    phase: int = 0
    mode: str = "ratio"
    value: float = 1.0

    @property
    def n_transferable(self) -> int:
        return int(self.bits.sum())

    @classmethod
    def all_true(cls, n: int, phase: int = 0) -> "ParamMask":
        return cls(np.ones(n, dtype=bool), phase, "ratio", 1.0)


def _same_shape(params: CostModelParams, arr: np.ndarray, what: str) -> np.ndarray:
    arr = np.asarray(arr)
    if arr.shape != params.theta.shape:
        raise ShapeMismatch(f"{what} shape {arr.shape} != parameter shape {params.theta.shape}")
    return arr


def xi_scores(params: CostModelParams, grads: np.ndarray, normalize: bool = False) -> XiScores:
    grads = _same_shape(params, grads, "gradient")
    xi = np.abs(params.theta * grads)
    if normalize:
        top = xi.max() if xi.size else 0.0
        if top > 0:
            xi = xi / top
    return XiScores(xi, normalize)


def transferable_count(ratio: float, total: int) -> int:
    """ceil(ratio * total), evaluated on the decimal value of ``ratio``."""
    return math.ceil(Fraction(repr(float(ratio))) * total)


def partition(xi: XiScores, threshold: Optional[float] = None, ratio: Optional[float] = None,
              phase: int = 0) -> ParamMask:
    """Split scalars into transferable (True) and variant (False).

    Threshold mode keeps ``xi_hat > threshold`` and needs normalized scores.
    Ratio mode keeps the top ``ceil(ratio * P)`` raw scores, ties to the lower index.
    """
    if (threshold is None) == (ratio is None):
        raise ValueError("give exactly one of threshold / ratio")
    vals = np.asarray(xi.values)
    if threshold is not None:
        if not xi.normalized:
            raise UnnormalizedThreshold("threshold mode needs max-normalized xi")
        return ParamMask(vals > threshold, phase, "threshold", float(threshold))
    if not 0 < ratio <= 1:
        raise InvalidRatio(f"ratio must lie in (0, 1], got {ratio}")
    k = transferable_count(ratio, vals.size)
    order = np.argsort(-vals, kind="stable")
    bits = np.zeros(vals.size, dtype=bool)
    bits[order[:k]] = True
    return ParamMask(bits, phase, "ratio", float(ratio))


def transferable_step(params: CostModelParams, grads: np.ndarray, mask: ParamMask, lr: float) -> CostModelParams:
    _same_shape(params, mask.bits, "mask")
    return apply_update(params, grads, mask.bits, TrainHyper(learning_rate=lr))


def variant_decay(params: CostModelParams, mask: ParamMask, lr: float, weight_decay: float) -> CostModelParams:
    """Shrink variant scalars by ``(1 - lr * weight_decay)``; transferable ones are untouched."""
    bits = _same_shape(params, mask.bits, "mask")
    if lr * weight_decay >= 1:
        raise UnstableDecay(f"lr * weight_decay = {lr * weight_decay} >= 1")
    if weight_decay == 0:
        return params.copy()
    theta = np.where(bits, params.theta, params.theta * (1.0 - lr * weight_decay))
    return CostModelParams(params.dims, theta, params.velocity.copy())


# ---------------------------------------------------------------------------
# adversarial invariance term


@dataclass
class AdversaryState:
    """Logistic domain discriminator on second-hidden activations plus a source replay buffer."""

    weight: np.ndarray
    bias: float
    replay: np.ndarray
    rng: np.random.Generator
    lr: float = 0.01
    enabled: bool = True

    @classmethod
    def create(cls, replay: np.ndarray, hidden: int, seed: int, lr: float = 0.01, enabled: bool = True):
        replay = np.atleast_2d(np.asarray(replay, dtype=np.float64))
        if enabled and len(replay) == 0:
            raise ValueError("an enabled adversary needs a non-empty replay buffer")
        return cls(np.zeros(hidden), 0.0, replay, np.random.default_rng(seed), lr, enabled)

    def sample_replay(self, n: int) -> np.ndarray:
        idx = self.rng.integers(0, len(self.replay), size=n)
        return self.replay[idx]

    def logits(self, h: np.ndarray) -> np.ndarray:
        return h @ self.weight + self.bias

    def cross_entropy(self, h_src: np.ndarray, h_tgt: np.ndarray) -> float:
        n = len(h_src) + len(h_tgt)
        return float((np.logaddexp(0.0, -self.logits(h_src)).sum() + np.logaddexp(0.0, self.logits(h_tgt)).sum()) / n)

    def accuracy(self, h_src: np.ndarray, h_tgt: np.ndarray) -> float:
        hits = np.concatenate([self.logits(h_src) > 0, self.logits(h_tgt) <= 0])
        return float(hits.mean())

    def step(self, h_src: np.ndarray, h_tgt: np.ndarray) -> float:
        """One gradient step on the pooled source=1 / target=0 cross-entropy; returns the pre-step loss."""
        loss = self.cross_entropy(h_src, h_tgt)
        n = len(h_src) + len(h_tgt)
        g_s = -(1.0 - expit(self.logits(h_src))) / n
        g_t = expit(self.logits(h_tgt)) / n
        self.weight = self.weight - self.lr * (h_src.T @ g_s + h_tgt.T @ g_t)
        self.bias = self.bias - self.lr * float(g_s.sum() + g_t.sum())
        return loss


def adversarial_term(adversary: AdversaryState, hidden_source: np.ndarray, hidden_target: np.ndarray,
                     beta: float):
    """Backbone confusion contribution and one discriminator update.

    Returns ``(beta * confusion_loss, discriminator_loss)`` where the confusion
    loss is the negated discriminator cross-entropy (gradient reversal).  The
    backbone gradient of this term is produced by ``model.gradients``.
    """
    if adversary is None or not adversary.enabled:
        raise AdversaryDisabled("adversarial term requested with the adversary disabled")
    h_s = np.atleast_2d(hidden_source)
    h_t = np.atleast_2d(hidden_target)
    if len(h_s) == 0 or len(h_t) == 0:
        raise ValueError("both activation batches must be non-empty")
    contribution = -beta * adversary.cross_entropy(h_s, h_t)
    d_loss = adversary.step(h_s, h_t)
    return contribution, d_loss


def train_discriminator(adversary: AdversaryState, params: CostModelParams, source_features, target_features,
                        beta: float):
    h_s = hidden_activations(params, source_features)
    h_t = hidden_activations(params, target_features)
    return adversarial_term(adversary, h_s, h_t, beta)


# ---------------------------------------------------------------------------
# diagnostic mask dump

_MASK_MAGIC = b"MOSK"
_MASK_HEAD = struct.Struct("<4sIQIBd")


def dump_mask(mask: ParamMask, path) -> None:
    """Header (magic, version, Ptot, phase, mode 0=ratio/1=threshold, value) then packed bits."""
    mode = 0 if mask.mode == "ratio" else 1
    head = _MASK_HEAD.pack(_MASK_MAGIC, 1, mask.bits.size, mask.phase, mode, mask.value)
    with open(path, "wb") as fh:
        fh.write(head + np.packbits(mask.bits, bitorder="little").tobytes())


def load_mask(path) -> ParamMask:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _MASK_HEAD.size:
        raise CorruptStream("mask file shorter than its header")
    magic, _version, n, phase, mode, value = _MASK_HEAD.unpack_from(data)
    if magic != _MASK_MAGIC:
        raise CorruptStream("bad mask magic")
    body = np.frombuffer(data, dtype=np.uint8, offset=_MASK_HEAD.size)
    if body.size != (n + 7) // 8:
        raise CorruptStream("mask body length does not match Ptot")
    bits = np.unpackbits(body, bitorder="little")[:n].astype(bool)
    return ParamMask(bits, phase, "ratio" if mode == 0 else "threshold", value)
