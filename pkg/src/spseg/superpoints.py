"""Superpoint generation: geometric region growing, color region growing with
cluster merging, and the intersection merge of the two partitions.

Both growers are greedy flood fills over the k-NN graph. Determinism rules,
all of which the brute-force test oracles share:

* geometric seeds are picked by minimum curvature (ties by ascending id);
  color seeds are the lowest unsegmented id;
* seeds are expanded FIFO, their neighbors visited in ascending-distance
  order as returned by the spatial index;
* the color merge pass always merges the lexicographically first eligible
  cluster pair, then rescans.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .cloud import PointCloud, SpatialIndex, SurfaceEstimate
from .errors import ValidationError


@dataclass(frozen=True)
class GrowingConfig:
    """Thresholds for both region growers.

    t_ang is in radians, t_cvt in curvature-ratio units, t_clr and t_merge in
    0-255 RGB distance units. t_merge defaults to t_clr when unset.
    """

    t_ang: float = math.radians(3.0)
    t_cvt: float = 0.05
    t_clr: float = 6.0
    t_merge: float | None = None
    k_grow: int = 16
    min_cluster: int = 10

    def __post_init__(self):
        if self.t_merge is None:
            object.__setattr__(self, "t_merge", self.t_clr)
        for name in ("t_ang", "t_cvt", "t_clr", "t_merge"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be > 0")
        if self.k_grow < 2:
            raise ValidationError("k_grow must be >= 2")
        if self.min_cluster < 1:
            raise ValidationError("min_cluster must be >= 1")


@dataclass(frozen=True)
class SuperpointPartition:
    """Disjoint point-id groups plus an unclustered residue.

    `membership[i]` is the group id of point i or -1; `groups[g]` holds the
    sorted ids of group g. Group ids are dense, starting at 0.
    """

    groups: tuple
    unclustered: np.ndarray
    membership: np.ndarray

    def __post_init__(self):
        mem = np.asarray(self.membership, dtype=np.int64)
        groups = tuple(np.asarray(g, dtype=np.int64) for g in self.groups)
        unc = np.asarray(self.unclustered, dtype=np.int64)
        n = mem.shape[0]
        seen = np.zeros(n, dtype=bool)
        for gid, g in enumerate(groups):
            if g.size == 0:
                raise ValidationError(f"group {gid} is empty")
            if seen[g].any():
                raise ValidationError("groups are not disjoint")
            seen[g] = True
            if not (mem[g] == gid).all():
                raise ValidationError("membership inconsistent with groups")
        if seen[unc].any():
            raise ValidationError("unclustered overlaps a group")
        seen[unc] = True
        if not seen.all():
            raise ValidationError("groups and unclustered do not cover all points")
        if not (mem[unc] == -1).all():
            raise ValidationError("membership inconsistent with unclustered")
        for a in groups + (unc, mem):
            a.flags.writeable = False
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "unclustered", unc)
        object.__setattr__(self, "membership", mem)

    @property
    def n(self) -> int:
        return self.membership.shape[0]

    @property
    def num_groups(self) -> int:
        return len(self.groups)


def from_membership(membership: np.ndarray) -> SuperpointPartition:
    """Build a partition from a membership array with dense group ids."""
    mem = np.asarray(membership, dtype=np.int64)
    num = int(mem.max()) + 1 if mem.size and mem.max() >= 0 else 0
    groups = [np.nonzero(mem == g)[0] for g in range(num)]
    unclustered = np.nonzero(mem == -1)[0]
    return SuperpointPartition(groups=tuple(groups), unclustered=unclustered, membership=mem)


def _canonical_by_min_id(membership: np.ndarray) -> SuperpointPartition:
    """Relabel dense group ids so groups are ordered by smallest member id."""
    mem = np.asarray(membership, dtype=np.int64)
    clustered = mem >= 0
    if not clustered.any():
        return from_membership(mem)
    num = int(mem.max()) + 1
    first = np.full(num, mem.shape[0], dtype=np.int64)
    np.minimum.at(first, mem[clustered], np.nonzero(clustered)[0])
    order = np.argsort(first, kind="stable")
    rank = np.empty(num, dtype=np.int64)
    rank[order] = np.arange(num)
    out = np.where(clustered, rank[np.where(clustered, mem, 0)], -1)
    return from_membership(out)


def _dissolve_small(membership: np.ndarray, min_cluster: int) -> np.ndarray:
    """Send groups below min_cluster to the unclustered residue; compact ids."""
    mem = membership.copy()
    if mem.max() < 0:
        return mem
    sizes = np.bincount(mem[mem >= 0], minlength=int(mem.max()) + 1)
    keep = sizes >= min_cluster
    remap = np.cumsum(keep) - 1
    out = np.full_like(mem, -1)
    clustered = mem >= 0
    ok = clustered & keep[np.where(clustered, mem, 0)]
    out[ok] = remap[mem[ok]]
    return out


def grow_geometric(
    cloud: PointCloud,
    surf: SurfaceEstimate,
    index: SpatialIndex,
    cfg: GrowingConfig,
    record_admission: bool = False,
):
    """Region growing on normals and curvature.

    Each round seeds at the unsegmented point of minimum curvature (which must
    be below t_cvt, else growth terminates). A neighbor of a seed joins the
    group when the unsigned angle between their normals is below t_ang, i.e.
    |n_s . n_b| > cos(t_ang); it additionally becomes a seed when its own
    curvature is below t_cvt. Groups smaller than min_cluster dissolve into
    the unclustered residue.

    With record_admission=True also returns the admitting seed of every point
    (-1 for round seeds and unclustered points).
    """
    n = cloud.n
    if surf.normals.shape[0] != n or index.n != n:
        raise ValidationError("cloud, surface estimate, and index sizes differ")
    nbrs = index.knn_table(cfg.k_grow)
    normals = surf.normals
    curv = surf.curvatures
    cos_t = math.cos(cfg.t_ang)

    membership = np.full(n, -1, dtype=np.int64)
    admitted_by = np.full(n, -1, dtype=np.int64)
    # Stable sort on curvature = ascending-id tie-break for seed selection.
    by_curv = np.argsort(curv, kind="stable")
    cursor = 0
    gid = 0
    while True:
        while cursor < n and membership[by_curv[cursor]] != -1:
            cursor += 1
        if cursor == n:
            break
        seed0 = by_curv[cursor]
        if curv[seed0] >= cfg.t_cvt:
            break
        membership[seed0] = gid
        queue = deque([seed0])
        while queue:
            s = queue.popleft()
            ns = normals[s]
            for nb in nbrs[s]:
                if membership[nb] != -1:
                    continue
                if abs(float(ns @ normals[nb])) > cos_t:
                    membership[nb] = gid
                    admitted_by[nb] = s
                    if curv[nb] < cfg.t_cvt:
                        queue.append(nb)
        gid += 1

    membership = _dissolve_small(membership, cfg.min_cluster)
    admitted_by[membership == -1] = -1
    part = from_membership(membership)
    if record_admission:
        return part, admitted_by
    return part


def grow_color(
    cloud: PointCloud,
    index: SpatialIndex,
    cfg: GrowingConfig,
    record_admission: bool = False,
):
    """Region growing on color, followed by a mean-color merge pass.

    Growth admits a neighbor when its 0-255 RGB distance to the admitting
    seed is below t_clr; every admitted point becomes a seed, and every point
    eventually seeds its own group, so nothing stays unclustered. The merge
    pass then repeatedly fuses the first adjacent cluster pair (ascending
    cluster ids; adjacency = any cross-cluster k-NN edge) whose average
    colors differ by less than t_merge, and finally folds groups smaller
    than min_cluster into their nearest-average-color adjacent group.
    """
    n = cloud.n
    if index.n != n:
        raise ValidationError("cloud and index sizes differ")
    nbrs = index.knn_table(cfg.k_grow)
    col = cloud.colors_255()

    membership = np.full(n, -1, dtype=np.int64)
    admitted_by = np.full(n, -1, dtype=np.int64)
    gid = 0
    for start in range(n):
        if membership[start] != -1:
            continue
        membership[start] = gid
        queue = deque([start])
        while queue:
            s = queue.popleft()
            cs = col[s]
            for nb in nbrs[s]:
                if membership[nb] != -1:
                    continue
                d = cs - col[nb]
                if math.sqrt(float(d @ d)) < cfg.t_clr:
                    membership[nb] = gid
                    admitted_by[nb] = s
                    queue.append(nb)
        gid += 1

    membership = _merge_color_clusters(membership, col, nbrs, cfg)
    part = _canonical_by_min_id(membership)
    if record_admission:
        return part, admitted_by
    return part


def _adjacency_pairs(membership: np.ndarray, nbrs: np.ndarray) -> np.ndarray:
    """Sorted unique (a, b) cluster pairs linked by any k-NN edge, a < b."""
    src = np.repeat(membership, nbrs.shape[1])
    dst = membership[nbrs.ravel()]
    a = np.minimum(src, dst)
    b = np.maximum(src, dst)
    keep = a != b
    pairs = np.stack([a[keep], b[keep]], axis=1)
    if pairs.size == 0:
        return pairs.reshape(0, 2)
    return np.unique(pairs, axis=0)


def _merge_color_clusters(membership: np.ndarray, col: np.ndarray, nbrs: np.ndarray, cfg: GrowingConfig) -> np.ndarray:
    mem = membership.copy()
    num = int(mem.max()) + 1
    sizes = np.bincount(mem, minlength=num).astype(np.float64)
    sums = np.zeros((num, 3))
    np.add.at(sums, mem, col)
    pairs = _adjacency_pairs(mem, nbrs)
    alias = np.arange(num, dtype=np.int64)

    def merge_into(src: int, dst: int):
        nonlocal pairs
        sums[dst] += sums[src]
        sizes[dst] += sizes[src]
        sizes[src] = 0.0
        alias[alias == src] = dst
        if pairs.shape[0]:
            p = pairs.copy()
            p[p == src] = dst
            a = np.minimum(p[:, 0], p[:, 1])
            b = np.maximum(p[:, 0], p[:, 1])
            keep = a != b
            p = np.stack([a[keep], b[keep]], axis=1)
            pairs = np.unique(p, axis=0) if p.size else p.reshape(0, 2)

    # Pass 1: fuse adjacent clusters with close average colors, first
    # eligible pair (ascending) each iteration, until fixpoint.
    while pairs.shape[0]:
        means = sums / np.maximum(sizes, 1.0)[:, None]
        diff = means[pairs[:, 0]] - means[pairs[:, 1]]
        dist = np.sqrt((diff * diff).sum(axis=1))
        eligible = dist < cfg.t_merge
        if not eligible.any():
            break
        a, b = pairs[int(np.argmax(eligible))]
        merge_into(int(b), int(a))

    # Pass 2: fold undersized clusters into their nearest-color neighbor,
    # smallest cluster first (ties by id).
    while pairs.shape[0]:
        alive = sizes > 0
        small = alive & (sizes < cfg.min_cluster)
        has_nbr = np.zeros(num, dtype=bool)
        has_nbr[pairs[:, 0]] = True
        has_nbr[pairs[:, 1]] = True
        cand = np.nonzero(small & has_nbr)[0]
        if cand.size == 0:
            break
        g = int(cand[np.lexsort((cand, sizes[cand]))[0]])
        mask = (pairs[:, 0] == g) | (pairs[:, 1] == g)
        others = np.where(pairs[mask, 0] == g, pairs[mask, 1], pairs[mask, 0])
        means = sums / np.maximum(sizes, 1.0)[:, None]
        diff = means[others] - means[g]
        dist = (diff * diff).sum(axis=1)
        target = int(others[np.lexsort((others, dist))[0]])
        merge_into(g, target)

    mem = alias[mem]
    # Compact surviving ids, preserving ascending order.
    alive_ids = np.unique(mem)
    remap = np.full(num, -1, dtype=np.int64)
    remap[alive_ids] = np.arange(alive_ids.shape[0])
    return remap[mem]


def merge_partitions(geo: SuperpointPartition, color: SuperpointPartition) -> SuperpointPartition:
    """Intersect the two partitions: the color groups over-segment each
    geometric group; the geometric residue stays unclustered.

    Output groups are ordered by their smallest contained point id.
    """
    if geo.n != color.n:
        raise ValidationError(f"partition sizes differ: {geo.n} vs {color.n}")
    if color.unclustered.size:
        raise ValidationError("color partition must cover every point")
    clustered = geo.membership >= 0
    key = geo.membership[clustered] * (color.num_groups + 1) + color.membership[clustered]
    _, inverse = np.unique(key, return_inverse=True)
    mem = np.full(geo.n, -1, dtype=np.int64)
    mem[clustered] = inverse
    return _canonical_by_min_id(mem)


def restrict_partition(sp: SuperpointPartition, ids: np.ndarray) -> SuperpointPartition:
    """Partition induced on a subset of points (intersection semantics)."""
    sub = sp.membership[np.asarray(ids, dtype=np.int64)]
    out = np.full(sub.shape[0], -1, dtype=np.int64)
    clustered = sub >= 0
    if clustered.any():
        _, inverse = np.unique(sub[clustered], return_inverse=True)
        out[clustered] = inverse
    return _canonical_by_min_id(out)


def sample_group_indices(sp: SuperpointPartition, k_samples: int, seed: int) -> np.ndarray:
    """(N, K) point ids sampled uniformly with replacement from each point's
    own group; rows of unclustered points hold the point's own id.

    Contract (reimplemented verbatim by test oracles): draw an (N, K) matrix
    of integers in [0, 2**63) from numpy's default_rng(seed); sample j of a
    clustered point i is group_members_sorted[raw[i, j] % group_size].
    """
    if k_samples < 1:
        raise ValidationError(f"sample count must be >= 1, got {k_samples}")
    n = sp.n
    raw = np.random.default_rng(seed).integers(0, 2**63, size=(n, k_samples), dtype=np.int64)
    out = np.tile(np.arange(n, dtype=np.int64)[:, None], (1, k_samples))
    mem = sp.membership
    clustered = mem >= 0
    if not clustered.any():
        return out
    sizes = np.array([g.shape[0] for g in sp.groups], dtype=np.int64)
    starts = np.zeros(len(sp.groups) + 1, dtype=np.int64)
    np.cumsum(sizes, out=starts[1:])
    flat = np.concatenate(sp.groups) if sp.groups else np.empty(0, dtype=np.int64)
    rows = np.nonzero(clustered)[0]
    offs = raw[rows] % sizes[mem[rows]][:, None]
    out[rows] = flat[starts[mem[rows]][:, None] + offs]
    return out
