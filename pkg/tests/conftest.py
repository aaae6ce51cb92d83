"""Shared fixtures and brute-force oracles used across the test modules."""

import numpy as np
import pytest

from stockopt.mesh import box_mesh
from stockopt.voxel import VoxelModel


@pytest.fixture
def unit_cube():
    return box_mesh((1.0, 1.0, 1.0))


@pytest.fixture
def paper_box():
    """The nominal bounding box used throughout the reported experiments."""
    return box_mesh((10.0, 6.0, 4.0))


def random_voxel_model(rng, max_dim=10, h=1.0, fill=0.5):
    """Random occupancy grid with the one-cell margin invariant."""
    dims = rng.integers(1, max_dim + 1, size=3)
    occ = rng.random(tuple(dims)) < fill
    padded = np.pad(occ, 1)
    return VoxelModel(origin=np.zeros(3), h=h, occupancy=padded)


def chebyshev_dilate_oracle(occ: np.ndarray, k: int) -> np.ndarray:
    """Brute-force union of Chebyshev balls of radius k cells."""
    out = np.zeros_like(occ)
    nx, ny, nz = occ.shape
    for i, j, l in np.argwhere(occ):
        out[
            max(i - k, 0) : i + k + 1,
            max(j - k, 0) : j + k + 1,
            max(l - k, 0) : l + k + 1,
        ] = True
    return out
