"""Cross-modal triplet alignment, balanced-softmax calibration and their sum.

All functions return :class:`LossValue` with exact analytic (sub)gradients.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import kernels
from .core import (
    CrossAugError,
    DimMismatch,
    InvalidConfig,
    InvalidInput,
    cosine_similarity,
)


class InvalidCounts(CrossAugError, ValueError):
    pass


class InvalidLabel(CrossAugError, ValueError):
    pass


NO_NEGATIVES = "no_negatives"


class Mining(enum.IntEnum):
    HARDEST_IN_BATCH = kernels.HARDEST
    ALL_PAIRS_MEAN = kernels.ALL_PAIRS

    @classmethod
    def parse(cls, value) -> "Mining":
        if isinstance(value, cls):
            return value
        key = str(value).replace("-", "_").upper()
        aliases = {"HARDESTINBATCH": "HARDEST_IN_BATCH", "HARDEST": "HARDEST_IN_BATCH",
                   "ALLPAIRSMEAN": "ALL_PAIRS_MEAN", "ALL_PAIRS": "ALL_PAIRS_MEAN"}
        try:
            return cls[aliases.get(key, key)]
        except KeyError:
            raise InvalidConfig(f"unknown mining strategy {value!r}") from None


@dataclass
class LossValue:
    value: float
    grads: dict[str, np.ndarray] = field(default_factory=dict)
    flags: tuple[str, ...] = ()

    def __float__(self) -> float:
        return float(self.value)


@dataclass(frozen=True)
class TripletBatch:
    """Row ``i`` of ``image_embs`` and ``text_embs`` is a positive pair."""

    image_embs: np.ndarray
    text_embs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        img = np.atleast_2d(np.asarray(self.image_embs, dtype=np.float64))
        txt = np.atleast_2d(np.asarray(self.text_embs, dtype=np.float64))
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if img.shape != txt.shape:
            raise DimMismatch(f"image {img.shape} and text {txt.shape} batches differ")
        if labels.shape[0] != img.shape[0]:
            raise DimMismatch("labels length differs from batch size")
        object.__setattr__(self, "image_embs", img)
        object.__setattr__(self, "text_embs", txt)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return int(self.labels.shape[0])


def triplet_hinge(sim_i2t_pos: float, sim_i2t_neg: float,
                  sim_t2i_pos: float, sim_t2i_neg: float, margin: float = 0.3) -> float:
    """One bidirectional triplet term from its four cosine similarities."""
    if margin < 0:
        raise InvalidConfig("margin must be non-negative")
    return (max(0.0, sim_i2t_neg - sim_i2t_pos + margin)
            + max(0.0, sim_t2i_neg - sim_t2i_pos + margin))


def triplet_term(img_anchor, txt_pos, txt_neg, txt_anchor, img_pos, img_neg,
                 margin: float = 0.3) -> float:
    """:func:`triplet_hinge` evaluated on explicit anchor/positive/negative vectors."""
    return triplet_hinge(
        cosine_similarity(img_anchor, txt_pos), cosine_similarity(img_anchor, txt_neg),
        cosine_similarity(txt_anchor, img_pos), cosine_similarity(txt_anchor, img_neg),
        margin,
    )


def triplet_alignment_loss(batch: TripletBatch, margin: float = 0.3,
                           mining: Mining | str = Mining.HARDEST_IN_BATCH) -> LossValue:
    """Bidirectional cosine triplet loss over a paired batch.

    For every anchor with at least one differently-labelled row, the image
    anchor is contrasted against text negatives and the text anchor against
    image negatives; the two hinges are summed and averaged over anchors.
    Gradients are w.r.t. ``image`` and ``text`` rows (keys of ``grads``).
    """
    if margin < 0:
        raise InvalidConfig(f"margin must be >= 0, got {margin}")
    mining = Mining.parse(mining)
    if len(batch) < 2:
        raise InvalidInput("triplet loss needs a batch of at least 2 pairs")
    value, g_img, g_txt, n_anchors = kernels.triplet_forward_backward(
        batch.image_embs, batch.text_embs, batch.labels, margin, int(mining))
    flags = (NO_NEGATIVES,) if n_anchors == 0 else ()
    return LossValue(float(value), {"image": g_img, "text": g_txt}, flags)


def _log_counts(class_counts) -> np.ndarray:
    counts = np.asarray(class_counts, dtype=np.float64).reshape(-1)
    if counts.size == 0 or (counts < 1).any():
        raise InvalidCounts("class counts must all be >= 1")
    return np.log(counts)


def balanced_softmax_loss(logits: Sequence[float], label: int, class_counts) -> LossValue:
    """``-log(n_y e^{l_y} / sum_i n_i e^{l_i})`` for a single row of logits."""
    logits = np.asarray(logits, dtype=np.float64).reshape(-1)
    lc = _log_counts(class_counts)
    if lc.shape != logits.shape:
        raise DimMismatch("logits and class_counts lengths differ")
    if not 0 <= int(label) < logits.shape[0]:
        raise InvalidLabel(f"label {label} out of range for {logits.shape[0]} classes")
    value, grad = kernels.balanced_softmax_forward_backward(
        logits[None, :], np.array([int(label)]), lc)
    return LossValue(float(value), {"logits": grad[0]})


def balanced_softmax_batch(logits: np.ndarray, labels, class_counts) -> LossValue:
    """Batch mean of :func:`balanced_softmax_loss`; ``grads['logits']`` is ``(n, C)``."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    lc = _log_counts(class_counts)
    if logits.shape[1] != lc.shape[0]:
        raise DimMismatch("logits width and class_counts length differ")
    if labels.shape[0] != logits.shape[0]:
        raise DimMismatch("labels length differs from number of logit rows")
    if labels.size and (labels.min() < 0 or labels.max() >= lc.shape[0]):
        raise InvalidLabel("label out of range")
    value, grad = kernels.balanced_softmax_forward_backward(logits, labels, lc)
    return LossValue(float(value), {"logits": grad})


def cross_entropy_batch(logits: np.ndarray, labels) -> LossValue:
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    return balanced_softmax_batch(logits, labels, np.ones(logits.shape[1]))


def total_loss(alignment: LossValue, calibration: LossValue,
               lambda_align: float = 1.0, lambda_cal: float = 1.0) -> LossValue:
    if lambda_align < 0 or lambda_cal < 0:
        raise InvalidConfig("loss weights must be non-negative")
    grads: dict[str, np.ndarray] = {}
    for lam, part in ((lambda_align, alignment), (lambda_cal, calibration)):
        for key, g in part.grads.items():
            grads[key] = grads[key] + lam * g if key in grads else lam * g
    return LossValue(
        lambda_align * alignment.value + lambda_cal * calibration.value,
        grads,
        alignment.flags + calibration.flags,
    )


def zero_loss(grads: Mapping[str, np.ndarray] | None = None) -> LossValue:
    return LossValue(0.0, {k: np.zeros_like(v) for k, v in (grads or {}).items()})
