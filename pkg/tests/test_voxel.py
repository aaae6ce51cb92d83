"""Voxelization, surface extraction and grid bookkeeping."""

import numpy as np
import pytest

from stockopt.errors import EmptyResult
from stockopt.mesh import box_mesh, mesh_volume, validate_mesh
from stockopt.voxel import VoxelModel, embed, extract_surface, voxel_volume, voxelize

from conftest import random_voxel_model


def box_containment_oracle(lo, hi, points):
    """Exact point-in-solid test for an axis-aligned box mesh."""
    return np.all((points > lo) & (points < hi), axis=-1)


def test_unit_cube_half_spacing(unit_cube):
    v = voxelize(unit_cube, 0.5)
    assert v.count() == 8
    # [DERIVED] oracle: every occupied cell center is inside the box and
    # every inside center is occupied
    centers = v.cell_centers().reshape(-1, 3)
    inside = box_containment_oracle(np.zeros(3), np.ones(3), centers)
    assert np.array_equal(v.occupancy.reshape(-1), inside)


def test_unit_cube_unit_spacing(unit_cube):
    v = voxelize(unit_cube, 1.0)
    assert v.count() == 1
    centers = v.cell_centers().reshape(-1, 3)
    inside = box_containment_oracle(np.zeros(3), np.ones(3), centers)
    assert np.array_equal(v.occupancy.reshape(-1), inside)


def test_too_coarse_spacing_is_empty(unit_cube):
    with pytest.raises(EmptyResult):
        voxelize(unit_cube, 2.0)


def test_voxel_volume_examples():
    occ = np.zeros((4, 4, 4), dtype=bool)
    occ[1:3, 1:3, 1:3] = True
    assert voxel_volume(VoxelModel(np.zeros(3), 0.5, occ)) == pytest.approx(1.0)
    assert voxel_volume(VoxelModel(np.zeros(3), 0.5, np.zeros((3, 3, 3), bool))) == 0.0
    occ27 = np.pad(np.ones((3, 3, 3), dtype=bool), 1)
    assert voxel_volume(VoxelModel(np.zeros(3), 1.0, occ27)) == pytest.approx(27.0)


def test_margin_maintained(unit_cube):
    for h in (0.5, 0.3, 0.25):
        assert voxelize(unit_cube, h).has_margin()


def test_voxelized_volume_convergence(unit_cube):
    # |voxel_volume - 1| <= 3h + 3h^2 + h^3 for aligned grids of the unit cube
    for h in (0.5, 0.25, 0.2, 0.125, 0.1):
        v = voxelize(unit_cube, h)
        assert abs(voxel_volume(v) - 1.0) <= 3 * h + 3 * h**2 + h**3 + 1e-12


def test_degenerate_rays_on_box_faces():
    # cell centers aligned with face-diagonal edges exercise the jitter retry
    for size in ((1, 1, 1), (2, 2, 2), (10, 6, 4)):
        mesh = box_mesh(size)
        v = voxelize(mesh, 0.5)
        assert voxel_volume(v) == pytest.approx(np.prod(size), rel=1e-12)


def test_extract_surface_single_voxel():
    occ = np.zeros((3, 3, 3), dtype=bool)
    occ[1, 1, 1] = True
    mesh = extract_surface(VoxelModel(np.zeros(3), 1.0, occ))
    assert len(mesh.triangles) == 12


def test_extract_surface_two_voxel_block():
    occ = np.zeros((4, 3, 3), dtype=bool)
    occ[1:3, 1, 1] = True
    mesh = extract_surface(VoxelModel(np.zeros(3), 1.0, occ))
    # [DERIVED] face-count oracle: 2*6 - 2 shared = 10 quads = 20 triangles
    assert len(mesh.triangles) == 20


def test_surface_volume_identity_and_validity():
    # manifold solids: boxes, an L-shape, a voxelized ball
    shapes = []
    box = np.zeros((6, 5, 4), dtype=bool)
    box[1:5, 1:4, 1:3] = True
    shapes.append(box)
    ell = np.zeros((7, 7, 4), dtype=bool)
    ell[1:6, 1:3, 1:3] = True
    ell[1:3, 1:6, 1:3] = True
    shapes.append(ell)
    n = 9
    grid = np.stack(np.meshgrid(*[np.arange(n)] * 3, indexing="ij"), axis=-1)
    ball = np.sum((grid - (n - 1) / 2) ** 2, axis=-1) <= 3.2**2
    shapes.append(ball)
    for occ in shapes:
        v = VoxelModel(np.zeros(3), 1.0, np.pad(occ, 1))
        mesh = extract_surface(v)
        validate_mesh(mesh)
        assert mesh_volume(mesh) == pytest.approx(voxel_volume(v), rel=1e-9)


def test_embed_preserves_occupancy():
    occ = np.zeros((3, 3, 3), dtype=bool)
    occ[1, 1, 1] = True
    v = VoxelModel(np.zeros(3), 1.0, occ)
    big = embed(v, np.array([-2.0, -2.0, -2.0]), (7, 7, 7))
    assert big.count() == 1
    assert big.occupancy[3, 3, 3]
    assert voxel_volume(big) == voxel_volume(v)
