"""Point-cloud container, exact k-nearest-neighbor index, and surface estimation.

Everything downstream (region growing, edge labels, the feature network)
consumes neighborhoods from here, so the index must be exact and fully
deterministic: a query returns the same ids a brute-force distance ranking
would, with ties broken by ascending point id and the query point always
ranked first.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

# Curvature is the smallest of three covariance eigenvalues over their sum,
# so it can never exceed 1/3.
CURVATURE_MAX = np.float64(1.0) / 3.0

_EIGSUM_FLOOR = 1e-12
# Extra candidates fetched per row before falling back to a full sort when
# boundary ties make the cheap selection ambiguous.
_SELECT_PAD = 16
# Rows per distance block; bounds peak memory of the (rows x N) block.
_BLOCK_ELEMS = 4_000_000


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=np.float64, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class PointCloud:
    """Points with XYZ positions in meters and RGB colors in [0, 1]."""

    positions: np.ndarray
    colors: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        col = np.asarray(self.colors, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ValidationError(f"positions must be (N, 3), got {pos.shape}")
        if col.shape != pos.shape:
            raise ValidationError(f"colors must have shape {pos.shape}, got {col.shape}")
        if pos.shape[0] < 1:
            raise ValidationError("cloud must contain at least one point")
        if not np.isfinite(pos).all():
            raise ValidationError("positions must be finite")
        if not np.isfinite(col).all() or col.min() < 0.0 or col.max() > 1.0:
            raise ValidationError("colors must lie in [0, 1]")
        object.__setattr__(self, "positions", _readonly(pos))
        object.__setattr__(self, "colors", _readonly(col))

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    def colors_255(self) -> np.ndarray:
        """Colors rescaled to 0-255 units (the scale color thresholds use)."""
        return self.colors * 255.0


class SpatialIndex:
    """Exact k-NN over the positions of one cloud.

    Query semantics: neighbors are ordered by (squared distance, point id)
    except that the query point itself always comes first. Squared distances
    are computed coordinate-wise as (xi-xj)^2 + (yi-yj)^2 + (zi-zj)^2, so
    exact ties in the data stay exact ties here.

    The index is immutable once built; concurrent reads are safe.
    """

    def __init__(self, positions: np.ndarray):
        pos = np.asarray(positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape[0] < 1:
            raise ValidationError(f"positions must be (N, 3) with N >= 1, got {pos.shape}")
        if not np.isfinite(pos).all():
            raise ValidationError("positions must be finite")
        self._pos = _readonly(pos)
        self._table: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self._pos.shape[0]

    def _check_k(self, k: int):
        if not isinstance(k, (int, np.integer)) or k < 1:
            raise ValidationError(f"k must be a positive integer, got {k!r}")
        if k > self.n:
            raise ValidationError(f"k={k} exceeds point count {self.n}")

    def _d2_block(self, rows: np.ndarray) -> np.ndarray:
        # Squared distances accumulate coordinate-wise over explicit
        # differences (never the x^2+y^2-2xy expansion): exact ties in the
        # data must stay exact so id tie-breaking is well defined.
        q = self._pos[rows]
        d2 = np.zeros((rows.shape[0], self.n))
        tmp = np.empty_like(d2)
        for c in range(3):
            np.subtract(q[:, c][:, None], self._pos[None, :, c], out=tmp)
            np.multiply(tmp, tmp, out=tmp)
            d2 += tmp
        # Force each query point to sort strictly first.
        d2[np.arange(rows.shape[0]), rows] = -1.0
        return d2

    def _select_block(self, d2: np.ndarray, k: int) -> np.ndarray:
        n = self.n
        m = min(k + _SELECT_PAD, n)
        if m >= n:
            return np.argsort(d2, axis=1, kind="stable")[:, :k]
        part = np.argpartition(d2, m - 1, axis=1)[:, :m]
        # Candidate ids in ascending order so a stable sort on distance
        # breaks ties by id.
        cand = np.sort(part, axis=1)
        d2c = np.take_along_axis(d2, cand, axis=1)
        order = np.argsort(d2c, axis=1, kind="stable")
        d2_sorted = np.take_along_axis(d2c, order, axis=1)
        sel = np.take_along_axis(cand, order, axis=1)[:, :k]
        # If the k-th distance ties with the worst candidate, points outside
        # the candidate set could tie too; resolve those rows exactly.
        unsafe = d2_sorted[:, k - 1] >= d2_sorted[:, -1]
        for r in np.nonzero(unsafe)[0]:
            sel[r] = np.argsort(d2[r], kind="stable")[:k]
        return sel

    def knn(self, query_id: int, k: int) -> np.ndarray:
        """Ids of the k nearest points to `query_id` (itself first)."""
        self._check_k(k)
        if not 0 <= query_id < self.n:
            raise ValidationError(f"query_id {query_id} out of range [0, {self.n})")
        d2 = self._d2_block(np.array([query_id]))
        return self._select_block(d2, k)[0].astype(np.int64)

    def knn_table(self, k: int) -> np.ndarray:
        """(N, k) neighbor table; cached and grown as larger k are requested."""
        self._check_k(k)
        if self._table is None or self._table.shape[1] < k:
            rows_per_block = max(1, _BLOCK_ELEMS // self.n)
            blocks = []
            for start in range(0, self.n, rows_per_block):
                rows = np.arange(start, min(start + rows_per_block, self.n))
                blocks.append(self._select_block(self._d2_block(rows), k))
            table = np.concatenate(blocks, axis=0).astype(np.int64)
            table.flags.writeable = False
            self._table = table
        return self._table[:, :k]


def build_index(cloud: PointCloud) -> SpatialIndex:
    return SpatialIndex(cloud.positions)


@dataclass(frozen=True)
class SurfaceEstimate:
    """Per-point unit normals and PCA curvature ratios.

    `degenerate_count` tracks neighborhoods whose covariance collapsed
    (all points coincident); those points get normal +z and curvature 0.
    """

    normals: np.ndarray
    curvatures: np.ndarray
    degenerate_count: int

    def __post_init__(self):
        object.__setattr__(self, "normals", _readonly(self.normals))
        object.__setattr__(self, "curvatures", _readonly(self.curvatures))


def estimate_surface(cloud: PointCloud, index: SpatialIndex, k_normal: int = 16) -> SurfaceEstimate:
    """PCA normals and curvature over each point's k_normal neighborhood.

    The normal is the eigenvector of the smallest covariance eigenvalue,
    sign-canonicalized toward +z (ties toward +y, then +x). Curvature is
    lambda_min / (lambda_0 + lambda_1 + lambda_2), zero when the eigenvalue
    sum vanishes.
    """
    if k_normal < 3:
        raise ValidationError(f"k_normal must be >= 3, got {k_normal}")
    if index.n != cloud.n:
        raise ValidationError("index and cloud sizes differ")
    nbrs = index.knn_table(k_normal)
    pts = cloud.positions[nbrs]
    centered = pts - pts.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k_normal
    eigvals, eigvecs = np.linalg.eigh(cov)

    eigsum = eigvals.sum(axis=1)
    degenerate = eigsum < _EIGSUM_FLOOR
    safe_sum = np.where(degenerate, 1.0, eigsum)
    curv = np.clip(eigvals[:, 0], 0.0, None) / safe_sum
    curv = np.minimum(np.where(degenerate, 0.0, curv), CURVATURE_MAX)

    normals = eigvecs[:, :, 0].copy()
    nx, ny, nz = normals[:, 0], normals[:, 1], normals[:, 2]
    flip = (nz < 0) | ((nz == 0) & (ny < 0)) | ((nz == 0) & (ny == 0) & (nx < 0))
    normals[flip] *= -1.0
    normals[degenerate] = (0.0, 0.0, 1.0)

    return SurfaceEstimate(normals=normals, curvatures=curv, degenerate_count=int(degenerate.sum()))
