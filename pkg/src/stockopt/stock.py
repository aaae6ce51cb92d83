"""Parametric stock generation: uniform offset plus grid-pattern cavities.

The offset is a Minkowski sum with a cube, realized exactly on the voxel
lattice as a Chebyshev dilation by round(r/h) cells. Cavities are cubic
voids on a regular lattice spanning the bounding box of the nominal solid,
kept only where the minimum wall thickness to the outer surface holds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import EmptyStock
from .voxel import VoxelModel, embed

_CUBE = np.ones((3, 3, 3), dtype=bool)


@dataclass(frozen=True)
class StockParams:
    """The three optimization parameters of the stock design."""

    offset_mm: float
    grid_resolution: float
    wall_thickness_mm: float

    def __post_init__(self):
        if self.offset_mm < 0:
            raise ValueError("offset_mm must be >= 0")
        if self.grid_resolution <= 0:
            raise ValueError("grid_resolution must be > 0")
        if self.wall_thickness_mm < 0:
            raise ValueError("wall_thickness_mm must be >= 0")

    def as_array(self) -> np.ndarray:
        return np.array([self.offset_mm, self.grid_resolution, self.wall_thickness_mm])


@dataclass(frozen=True)
class StockModel:
    """Nominal, cavity and stock solids on one common grid."""

    stock: VoxelModel
    cavities: VoxelModel
    nominal: VoxelModel
    params: StockParams


def cells_for(r_mm: float, h: float) -> int:
    """Offset radius in whole cells, nearest-cell rounding (half away from zero)."""
    return int(np.floor(r_mm / h + 0.5))


def dilate(v: VoxelModel, r_mm: float) -> VoxelModel:
    """Chebyshev dilation by round(r_mm/h) cells (cube-Minkowski sum)."""
    if r_mm < 0:
        raise ValueError("dilation radius must be >= 0")
    k = cells_for(r_mm, v.h)
    if k == 0 or v.count() == 0:
        return v
    padded = v.with_margin(k + 1)
    grown = ndimage.binary_dilation(padded.occupancy, structure=_CUBE, iterations=k)
    return VoxelModel(padded.origin, padded.h, grown)


def erode(v: VoxelModel, t_mm: float) -> VoxelModel:
    """Chebyshev erosion by round(t_mm/h) cells (complement of dilated complement)."""
    if t_mm < 0:
        raise ValueError("erosion depth must be >= 0")
    k = cells_for(t_mm, v.h)
    if k == 0 or v.count() == 0:
        return v
    shrunk = ndimage.binary_erosion(v.occupancy, structure=_CUBE, iterations=k, border_value=0)
    return VoxelModel(v.origin, v.h, shrunk)


def generate_cavities(
    nominal: VoxelModel, resolution: float, wall_mm: float, beta: float
) -> VoxelModel:
    """Cubic voids on a regular lattice over the nominal bounding box.

    The lattice cell side is c = L_max / resolution where L_max is the longest
    bounding-box extent of the occupied region. Each cell holds a centered
    cubic void of side beta*c; the void is carved only if every one of its
    voxels lies inside the wall-eroded nominal solid.
    """
    if not 0 < beta < 1:
        raise ValueError("beta must be in (0, 1)")
    if resolution <= 0:
        raise ValueError("resolution must be > 0")
    empty = VoxelModel(nominal.origin, nominal.h, np.zeros(nominal.dims, dtype=bool))
    idx = np.argwhere(nominal.occupancy)
    if len(idx) == 0:
        return empty
    eroded = erode(nominal, wall_mm)
    if eroded.count() == 0:
        return empty

    h = nominal.h
    lo_cell = idx.min(axis=0)
    hi_cell = idx.max(axis=0)
    bb_lo = nominal.origin + lo_cell * h
    bb_hi = nominal.origin + (hi_cell + 1) * h
    extents = bb_hi - bb_lo
    c = extents.max() / resolution
    half_void = 0.5 * beta * c
    ncells = np.maximum(np.ceil(extents / c - 1e-12).astype(int), 1)

    axes = [nominal.origin[d] + (np.arange(nominal.dims[d]) + 0.5) * h for d in range(3)]
    occ = np.zeros(nominal.dims, dtype=bool)
    for ci in range(ncells[0]):
        for cj in range(ncells[1]):
            for ck in range(ncells[2]):
                mid = bb_lo + (np.array([ci, cj, ck]) + 0.5) * c
                spans = []
                for d in range(3):
                    sel = np.nonzero(
                        (axes[d] > mid[d] - half_void) & (axes[d] < mid[d] + half_void)
                    )[0]
                    spans.append(sel)
                if any(len(s) == 0 for s in spans):
                    continue
                block = eroded.occupancy[np.ix_(*spans)]
                if block.all():
                    occ[np.ix_(*spans)] = True
    return VoxelModel(nominal.origin, h, occ)


def assemble_stock(nominal: VoxelModel, p: StockParams, beta: float = 0.8) -> StockModel:
    """Offset the nominal solid and carve the cavity pattern out of it."""
    grown = dilate(nominal, p.offset_mm)
    cav = generate_cavities(nominal, p.grid_resolution, p.wall_thickness_mm, beta)
    # everything re-expressed on the (possibly padded) dilated grid
    nominal_e = embed(nominal, grown.origin, grown.dims)
    cav_e = embed(cav, grown.origin, grown.dims)
    stock_occ = grown.occupancy & ~cav_e.occupancy
    if not stock_occ.any():
        raise EmptyStock(f"parameters {p} empty the stock part")
    stock = VoxelModel(grown.origin, grown.h, stock_occ)
    return StockModel(stock=stock, cavities=cav_e, nominal=nominal_e, params=p)


def remaining_material_fraction(s: StockModel) -> float:
    """1 - |cavities| / |nominal| by voxel count (mirrors the wall-thickness trend)."""
    n = s.nominal.count()
    if n == 0:
        raise EmptyStock("nominal solid is empty")
    return 1.0 - s.cavities.count() / n
