"""Per-point label containers, superpoint pseudo-label optimization, and
edge-point labeling."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .cloud import SpatialIndex
from .errors import ValidationError
from .superpoints import SuperpointPartition


@dataclass(frozen=True)
class LabelSet:
    """Per-point class indices with a participation mask.

    class_of[i] is in [0, num_classes) or -1 for "no label"; mask[i] is True
    exactly when class_of[i] >= 0.
    """

    class_of: np.ndarray
    num_classes: int
    mask: np.ndarray

    def __post_init__(self):
        cls = np.asarray(self.class_of, dtype=np.int64)
        mask = np.asarray(self.mask, dtype=bool)
        if self.num_classes < 2:
            raise ValidationError(f"need at least 2 classes, got {self.num_classes}")
        if cls.shape != mask.shape or cls.ndim != 1:
            raise ValidationError("class_of and mask must be equal-length 1-D arrays")
        if not ((cls >= 0) == mask).all():
            raise ValidationError("mask must be True exactly where a class is set")
        if cls.max(initial=-1) >= self.num_classes:
            raise ValidationError("class index out of range")
        cls.flags.writeable = False
        mask.flags.writeable = False
        object.__setattr__(self, "class_of", cls)
        object.__setattr__(self, "mask", mask)

    @property
    def n(self) -> int:
        return self.class_of.shape[0]

    @staticmethod
    def full(class_of: np.ndarray, num_classes: int) -> "LabelSet":
        cls = np.asarray(class_of, dtype=np.int64)
        return LabelSet(class_of=cls, num_classes=num_classes, mask=cls >= 0)

    @staticmethod
    def empty(n: int, num_classes: int) -> "LabelSet":
        return LabelSet(class_of=np.full(n, -1, dtype=np.int64), num_classes=num_classes, mask=np.zeros(n, dtype=bool))


@dataclass(frozen=True)
class EdgeLabels:
    """Per-point boolean: is this an edge point."""

    is_edge: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.is_edge, dtype=bool)
        if e.ndim != 1:
            raise ValidationError("is_edge must be 1-D")
        e.flags.writeable = False
        object.__setattr__(self, "is_edge", e)

    @property
    def n(self) -> int:
        return self.is_edge.shape[0]


def optimize_pseudo_labels(sp: SuperpointPartition, pseudo: LabelSet, t_plo) -> LabelSet:
    """Majority-vote cleanup of pseudo labels, one superpoint at a time.

    For a group of n points whose winning class c holds n_c of them (ties go
    to the smallest class index), every point in the group is rewritten to c
    when n_c > t_plo * n, and otherwise the whole group loses its labels.
    Unclustered points always lose theirs. Unlabeled points count toward n
    but toward no class.

    The threshold comparison runs in exact integer arithmetic on the rational
    value of t_plo, so boundary cases like 8 votes of 10 at 0.8 never depend
    on floating-point rounding.
    """
    ratio = Fraction(t_plo)
    if not (0 < ratio < 1):
        raise ValidationError(f"t_plo must lie in (0, 1), got {t_plo}")
    if sp.n != pseudo.n:
        raise ValidationError("partition and labels cover different point counts")
    num = ratio.numerator
    den = ratio.denominator
    out = np.full(pseudo.n, -1, dtype=np.int64)
    for members in sp.groups:
        labels = pseudo.class_of[members]
        labels = labels[labels >= 0]
        if labels.size == 0:
            continue
        counts = np.bincount(labels, minlength=pseudo.num_classes)
        winner = int(np.argmax(counts))
        if int(counts[winner]) * den > num * int(members.shape[0]):
            out[members] = winner
    return LabelSet.full(out, pseudo.num_classes)


def compute_edge_labels(
    geo: SuperpointPartition,
    color: SuperpointPartition,
    index: SpatialIndex,
    k_edge: int = 8,
) -> EdgeLabels:
    """A point is an edge point when geometric growth left it unclustered, or
    when any of its k_edge nearest neighbors sits in a different color group."""
    if geo.n != color.n or index.n != geo.n:
        raise ValidationError("partitions and index cover different point counts")
    if color.unclustered.size:
        raise ValidationError("color partition must cover every point")
    nbrs = index.knn_table(k_edge)
    col = color.membership
    color_edge = (col[nbrs] != col[:, None]).any(axis=1)
    return EdgeLabels(is_edge=color_edge | (geo.membership == -1))
