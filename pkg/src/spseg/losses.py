"""Loss terms and their gradients with respect to the network outputs.

All losses are literal sums over points (no mean normalization); reports
carry per-term point counts so logs can show per-point means alongside.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .labels import EdgeLabels, LabelSet
from .superpoints import SuperpointPartition, sample_group_indices

LOG_FLOOR = 1e-12


@dataclass
class LossTerm:
    value: float
    grad: np.ndarray
    count: int

    @property
    def empty(self) -> bool:
        return self.count == 0


def _masked_cross_entropy(x: np.ndarray, labels: LabelSet) -> LossTerm:
    if x.shape[0] != labels.n:
        raise ValidationError("logits and labels cover different point counts")
    if x.shape[1] != labels.num_classes:
        raise ValidationError(f"logits have {x.shape[1]} channels, labels expect {labels.num_classes}")
    grad = np.zeros_like(x)
    rows = np.nonzero(labels.mask)[0]
    if rows.size == 0:
        return LossTerm(value=0.0, grad=grad, count=0)
    xs = x[rows]
    shifted = xs - xs.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    cls = labels.class_of[rows]
    value = float((lse - shifted[np.arange(rows.size), cls]).sum())
    soft = np.exp(shifted - lse[:, None])
    soft[np.arange(rows.size), cls] -= 1.0
    grad[rows] = soft
    return LossTerm(value=value, grad=grad, count=int(rows.size))


def cross_entropy_loss(x: np.ndarray, labels: LabelSet) -> LossTerm:
    """Softmax cross entropy summed over mask-true points (labeled branch)."""
    return _masked_cross_entropy(x, labels)


def weighted_cross_entropy_loss(x: np.ndarray, optimized: LabelSet) -> LossTerm:
    """Cross entropy weighted by the per-point boolean of having an optimized
    pseudo label; identical math, the mask does the weighting."""
    return _masked_cross_entropy(x, optimized)


def edge_loss(e: np.ndarray, edges: EdgeLabels) -> LossTerm:
    """Binary cross entropy over both channels, edge target (1,1) else (0,0).

    Log arguments are floored at 1e-12; scores must already lie in [0, 1].
    """
    if e.ndim != 2 or e.shape[1] != 2:
        raise ValidationError(f"edge scores must be (N, 2), got {e.shape}")
    if e.shape[0] != edges.n:
        raise ValidationError("edge scores and labels cover different point counts")
    if e.min() < 0.0 or e.max() > 1.0:
        raise ValidationError("edge scores must lie in [0, 1]")
    t = edges.is_edge.astype(np.float64)[:, None]
    value = float(-(t * np.log(np.maximum(e, LOG_FLOOR)) + (1.0 - t) * np.log(np.maximum(1.0 - e, LOG_FLOOR))).sum())
    grad = np.zeros_like(e)
    lo = e > LOG_FLOOR
    hi = (1.0 - e) > LOG_FLOOR
    grad[lo] += (-t * np.ones_like(e) / np.maximum(e, LOG_FLOOR))[lo]
    grad[hi] += ((1.0 - t) * np.ones_like(e) / np.maximum(1.0 - e, LOG_FLOOR))[hi]
    return LossTerm(value=value, grad=grad, count=e.shape[0])


def consistency_loss(x: np.ndarray, sp: SuperpointPartition, k_samples: int, seed: int) -> LossTerm:
    """Variance-style smoothness penalty inside superpoints.

    For each clustered point, K group members are drawn with the shared
    sampler and the squared distance between the point's features and the
    sample mean is summed over channels; unclustered points contribute
    nothing. The gradient reaches both the point and its sampled members.
    """
    if x.shape[0] != sp.n:
        raise ValidationError("features and partition cover different point counts")
    samples = sample_group_indices(sp, k_samples, seed)
    clustered = sp.membership >= 0
    grad = np.zeros_like(x)
    rows = np.nonzero(clustered)[0]
    if rows.size == 0:
        return LossTerm(value=0.0, grad=grad, count=0)
    mean = x[samples[rows]].mean(axis=1)
    diff = x[rows] - mean
    value = float((diff * diff).sum())
    np.add.at(grad, rows, 2.0 * diff)
    k = samples.shape[1]
    np.add.at(grad, samples[rows].ravel(), np.repeat(-2.0 * diff / k, k, axis=0))
    return LossTerm(value=value, grad=grad, count=int(rows.size))


@dataclass
class LossReport:
    """The six loss terms of one step and their unweighted sum."""

    seg_labeled: float = 0.0
    seg_unlabeled: float = 0.0
    edge_labeled: float = 0.0
    edge_unlabeled: float = 0.0
    sp_labeled: float = 0.0
    sp_unlabeled: float = 0.0
    count_seg_labeled: int = 0
    count_seg_unlabeled: int = 0
    count_edge_labeled: int = 0
    count_edge_unlabeled: int = 0
    count_sp_labeled: int = 0
    count_sp_unlabeled: int = 0

    @property
    def total(self) -> float:
        return (
            self.seg_labeled + self.seg_unlabeled
            + self.edge_labeled + self.edge_unlabeled
            + self.sp_labeled + self.sp_unlabeled
        )

    def terms(self) -> dict:
        return {
            "seg_labeled": self.seg_labeled,
            "seg_unlabeled": self.seg_unlabeled,
            "edge_labeled": self.edge_labeled,
            "edge_unlabeled": self.edge_unlabeled,
            "sp_labeled": self.sp_labeled,
            "sp_unlabeled": self.sp_unlabeled,
        }

    def to_json_line(self) -> str:
        doc = dict(self.terms())
        doc["total"] = self.total
        counts = {
            "seg_labeled": self.count_seg_labeled,
            "seg_unlabeled": self.count_seg_unlabeled,
            "edge_labeled": self.count_edge_labeled,
            "edge_unlabeled": self.count_edge_unlabeled,
            "sp_labeled": self.count_sp_labeled,
            "sp_unlabeled": self.count_sp_unlabeled,
        }
        doc["counts"] = counts
        doc["means"] = {k: (doc[k] / c if c else 0.0) for k, c in counts.items()}
        return json.dumps(doc, sort_keys=True)


def combine_losses(
    seg_labeled: LossTerm,
    seg_unlabeled: LossTerm,
    edge_labeled: LossTerm,
    edge_unlabeled: LossTerm,
    sp_labeled: LossTerm,
    sp_unlabeled: LossTerm,
) -> LossReport:
    return LossReport(
        seg_labeled=seg_labeled.value,
        seg_unlabeled=seg_unlabeled.value,
        edge_labeled=edge_labeled.value,
        edge_unlabeled=edge_unlabeled.value,
        sp_labeled=sp_labeled.value,
        sp_unlabeled=sp_unlabeled.value,
        count_seg_labeled=seg_labeled.count,
        count_seg_unlabeled=seg_unlabeled.count,
        count_edge_labeled=edge_labeled.count,
        count_edge_unlabeled=edge_unlabeled.count,
        count_sp_labeled=sp_labeled.count,
        count_sp_unlabeled=sp_unlabeled.count,
    )
