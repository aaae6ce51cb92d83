"""Occupancy-grid representation of solids, voxelization and surface extraction.

Grids keep a one-cell empty margin on every side so that morphological
operations never touch the border; constructors re-pad when needed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyResult, ParseError
from .mesh import TriangleMesh, validate_mesh

RAY_JITTER = 1e-3  # fraction of h used to nudge degenerate rays
_BC_EPS = 1e-9  # barycentric tolerance for vertex/edge hits


@dataclass(frozen=True)
class VoxelModel:
    """Axis-aligned occupancy grid.

    origin: coordinates (mm) of the grid corner (node (0,0,0)).
    h: cell spacing (mm).
    occupancy: (nx, ny, nz) boolean array, True = solid.
    """

    origin: np.ndarray
    h: float
    occupancy: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64))
        object.__setattr__(self, "occupancy", np.asarray(self.occupancy, dtype=bool))
        if self.h <= 0:
            raise ParseError("voxel spacing must be positive")
        if self.occupancy.ndim != 3:
            raise ParseError("occupancy must be a 3-d array")
        self.origin.setflags(write=False)
        self.occupancy.setflags(write=False)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.occupancy.shape

    def count(self) -> int:
        return int(self.occupancy.sum())

    def cell_centers(self) -> np.ndarray:
        """Coordinates of all cell centers, shape (nx, ny, nz, 3)."""
        nx, ny, nz = self.dims
        ax = [self.origin[d] + (np.arange(n) + 0.5) * self.h for d, n in enumerate((nx, ny, nz))]
        grid = np.stack(np.meshgrid(*ax, indexing="ij"), axis=-1)
        return grid

    def has_margin(self) -> bool:
        occ = self.occupancy
        return not (
            occ[0].any() or occ[-1].any()
            or occ[:, 0].any() or occ[:, -1].any()
            or occ[:, :, 0].any() or occ[:, :, -1].any()
        )

    def with_margin(self, cells: int = 1) -> "VoxelModel":
        """Return an equivalent grid with at least `cells` empty border cells."""
        occ = self.occupancy
        idx = np.argwhere(occ)
        if len(idx) == 0:
            return self
        lo = idx.min(axis=0)
        hi = np.array(occ.shape) - 1 - idx.max(axis=0)
        pad_lo = np.maximum(cells - lo, 0)
        pad_hi = np.maximum(cells - hi, 0)
        if not pad_lo.any() and not pad_hi.any():
            return self
        padded = np.pad(occ, list(zip(pad_lo, pad_hi)))
        return VoxelModel(self.origin - pad_lo * self.h, self.h, padded)


def voxel_volume(v: VoxelModel) -> float:
    return v.count() * v.h**3


def same_grid(a: VoxelModel, b: VoxelModel, tol: float = 1e-9) -> bool:
    return (
        a.dims == b.dims
        and abs(a.h - b.h) <= tol
        and np.all(np.abs(a.origin - b.origin) <= tol)
    )


def embed(v: VoxelModel, origin: np.ndarray, dims: tuple[int, int, int]) -> VoxelModel:
    """Re-express `v` on a larger grid with the given origin/dims.

    The target grid must be aligned with `v` (origins differ by whole cells)
    and must contain all occupied cells of `v`.
    """
    shift = (np.asarray(origin) - v.origin) / v.h
    k = np.round(shift).astype(int)
    if np.max(np.abs(shift - k)) > 1e-6:
        raise ParseError("grids are not aligned")
    out = np.zeros(dims, dtype=bool)
    idx = np.argwhere(v.occupancy)
    if len(idx):
        tgt = idx - k
        if tgt.min() < 0 or np.any(tgt >= np.array(dims)):
            raise ParseError("occupied cells fall outside the target grid")
        out[tgt[:, 0], tgt[:, 1], tgt[:, 2]] = True
    return VoxelModel(origin, v.h, out)


def _column_crossings(tri: np.ndarray, ys: np.ndarray, zs: np.ndarray):
    """Ray-parity crossings for +x rays at (y, z) = (ys, zs) column points.

    Returns (crossings, degenerate): `crossings` is a list per column of x
    values where the ray crosses the surface, `degenerate` flags columns where
    a ray passed within _BC_EPS of a triangle vertex/edge in the (y,z) plane.
    """
    ncol = len(ys)
    crossings: list[list[float]] = [[] for _ in range(ncol)]
    degenerate = np.zeros(ncol, dtype=bool)
    v0, v1, v2 = tri[:, 0], tri[:, 1], tri[:, 2]
    e1y = v1[:, 1] - v0[:, 1]
    e1z = v1[:, 2] - v0[:, 2]
    e2y = v2[:, 1] - v0[:, 1]
    e2z = v2[:, 2] - v0[:, 2]
    denom = e1y * e2z - e2y * e1z
    for t in range(len(tri)):
        if denom[t] == 0.0:
            # triangle parallel to the ray direction; grazing contact is
            # caught by the vertex/edge proximity test of adjacent triangles
            continue
        py = ys - v0[t, 1]
        pz = zs - v0[t, 2]
        a = (py * e2z[t] - e2y[t] * pz) / denom[t]
        b = (e1y[t] * pz - py * e1z[t]) / denom[t]
        c = 1.0 - a - b
        near = (a > -_BC_EPS) & (b > -_BC_EPS) & (c > -_BC_EPS)
        if not near.any():
            continue
        inside = (a > _BC_EPS) & (b > _BC_EPS) & (c > _BC_EPS)
        degenerate |= near & ~inside
        hit = np.nonzero(inside)[0]
        xs = v0[t, 0] + a[hit] * (v1[t, 0] - v0[t, 0]) + b[hit] * (v2[t, 0] - v0[t, 0])
        for col, x in zip(hit, xs):
            crossings[col].append(float(x))
    return crossings, degenerate


def voxelize(mesh: TriangleMesh, h: float) -> VoxelModel:
    """Occupancy by cell-center ray parity along +x, one-cell empty margin.

    Rays that graze a vertex or edge are re-shot with a deterministic offset
    of h*1e-3 in y and z.
    """
    lo, hi = mesh.bounds
    extent = hi - lo
    if h <= 0:
        raise ParseError("spacing must be positive")
    dims = tuple(int(np.ceil(e / h - 1e-12)) + 2 for e in extent)
    origin = lo - h
    nx, ny, nz = dims

    tri = mesh.triangle_corners()
    yc = origin[1] + (np.arange(ny) + 0.5) * h
    zc = origin[2] + (np.arange(nz) + 0.5) * h
    YY, ZZ = np.meshgrid(yc, zc, indexing="ij")
    ys = YY.ravel()
    zs = ZZ.ravel()

    crossings, degenerate = _column_crossings(tri, ys, zs)
    bad = np.nonzero(degenerate)[0]
    # deterministic re-shoot: unequal jitters in y and z so rays cannot stay
    # on an edge of rational slope, growing and flipping on repeat failures
    attempt = 0
    while len(bad):
        if attempt >= 4:
            raise ParseError("could not resolve grazing ray intersections")
        scale = h * RAY_JITTER * (attempt + 1) * (-1 if attempt % 2 else 1)
        redo, still_bad = _column_crossings(
            tri, ys[bad] + scale, zs[bad] + scale * 0.6180339887498949
        )
        for i, col in enumerate(bad):
            if not still_bad[i]:
                crossings[col] = redo[i]
        bad = bad[still_bad]
        attempt += 1

    xc = origin[0] + (np.arange(nx) + 0.5) * h
    occ = np.zeros(dims, dtype=bool)
    for col, xs in enumerate(crossings):
        if not xs:
            continue
        iy, iz = divmod(col, nz)
        arr = np.sort(np.asarray(xs))
        counts = len(arr) - np.searchsorted(arr, xc)
        occ[:, iy, iz] = counts % 2 == 1
    if not occ.any():
        raise EmptyResult("no cell center lies inside the mesh; reduce the spacing")
    return VoxelModel(origin, h, occ).with_margin()


# Boundary-face extraction: for each axis and sign, the quad corner offsets
# (in node index space) ordered so the normal points outward.
_FACE_TABLE = {
    ("x", +1): [(1, 0, 0), (1, 1, 0), (1, 1, 1), (1, 0, 1)],
    ("x", -1): [(0, 0, 0), (0, 0, 1), (0, 1, 1), (0, 1, 0)],
    ("y", +1): [(0, 1, 0), (0, 1, 1), (1, 1, 1), (1, 1, 0)],
    ("y", -1): [(0, 0, 0), (1, 0, 0), (1, 0, 1), (0, 0, 1)],
    ("z", +1): [(0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)],
    ("z", -1): [(0, 0, 0), (0, 1, 0), (1, 1, 0), (1, 0, 0)],
}
_AXIS_INDEX = {"x": 0, "y": 1, "z": 2}


def boundary_faces(v: VoxelModel):
    """Yield (cells, axis, sign) for faces between occupied and empty cells.

    `cells` is an (n, 3) array of occupied cell indices whose neighbor in the
    (axis, sign) direction is empty.
    """
    occ = v.occupancy
    padded = np.pad(occ, 1)
    for axis_name, axis in _AXIS_INDEX.items():
        for sign in (+1, -1):
            shifted = np.roll(padded, -sign, axis=axis)[1:-1, 1:-1, 1:-1]
            exposed = occ & ~shifted
            cells = np.argwhere(exposed)
            if len(cells):
                yield cells, axis_name, sign


def extract_surface(v: VoxelModel) -> TriangleMesh:
    """Triangulated boundary between occupied and empty cells.

    Volume of the result equals voxel_volume(v) exactly (up to roundoff);
    the output passes the full mesh validator.
    """
    if v.count() == 0:
        raise EmptyResult("cannot extract the surface of an empty grid")
    quads = []
    for cells, axis_name, sign in boundary_faces(v):
        offs = np.array(_FACE_TABLE[(axis_name, sign)])
        # node ids for the 4 corners of each face
        corners = cells[:, None, :] + offs[None, :, :]
        quads.append(corners)
    corners = np.concatenate(quads)  # (nfaces, 4, 3) node indices
    nfaces = len(corners)

    nx, ny, nz = v.dims
    key = (corners[..., 0] * (ny + 1) + corners[..., 1]) * (nz + 1) + corners[..., 2]
    uniq, inverse = np.unique(key, return_inverse=True)
    inverse = inverse.reshape(nfaces, 4)
    kx, rem = np.divmod(uniq, (ny + 1) * (nz + 1))
    ky, kz = np.divmod(rem, nz + 1)
    verts = v.origin + np.stack([kx, ky, kz], axis=1) * v.h

    tris = np.concatenate([inverse[:, [0, 1, 2]], inverse[:, [0, 2, 3]]])
    mesh = TriangleMesh(verts, tris)
    validate_mesh(mesh)
    return mesh
