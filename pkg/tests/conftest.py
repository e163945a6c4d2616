import numpy as np
import pytest

from spseg import PointCloud


def random_cloud(rng, n, dup_fraction=0.0):
    """Random cloud; optionally duplicates some positions to force distance ties."""
    pos = rng.uniform(-1.0, 1.0, size=(n, 3))
    if dup_fraction > 0 and n > 3:
        dups = max(1, int(n * dup_fraction))
        src = rng.integers(0, n, size=dups)
        dst = rng.integers(0, n, size=dups)
        pos[dst] = pos[src]
    return PointCloud(positions=pos, colors=rng.random((n, 3)))


def grid_cloud(nx, ny, spacing=0.1, z=0.0, color=(0.5, 0.5, 0.5)):
    xs, ys = np.meshgrid(np.arange(nx) * spacing, np.arange(ny) * spacing, indexing="ij")
    pos = np.stack([xs.ravel(), ys.ravel(), np.full(nx * ny, z)], axis=1)
    colors = np.tile(np.asarray(color, dtype=np.float64), (nx * ny, 1))
    return PointCloud(positions=pos, colors=colors)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
