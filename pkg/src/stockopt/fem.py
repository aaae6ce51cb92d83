"""Layer-by-layer build simulation with the inherent shrinkage method.

Trilinear hexahedral elements on the stock voxel grid, small-strain isotropic
elasticity. Layers (z slabs of voxels) are activated bottom-up in packs; each
newly activated element carries an isotropic contraction eigenstrain applied
once, as equivalent nodal loads. Units: mm, MPa, mm^3.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.sparse.linalg import cg, LinearOperator

from .errors import InvertedElement, ParseError, SingularSystem, SolverDiverged
from .stock import StockModel
from .voxel import VoxelModel, boundary_faces, _FACE_TABLE

REFERENCE_TEMPERATURE_C = 20.0


@dataclass(frozen=True)
class MaterialParams:
    """Isotropic elastic material; defaults are Ti64 powder properties."""

    young_modulus: float = 1.18e5  # MPa
    poisson_ratio: float = 0.33
    thermal_expansion: float = 9e-6  # 1/K
    deposition_temperature: float = 700.0  # degC
    reference_temperature: float = REFERENCE_TEMPERATURE_C  # degC
    density: float = 4420.0  # kg/m^3
    elastic_limit: float = 954.0  # MPa
    ultimate_stress: float = 1110.0  # MPa

    def __post_init__(self):
        if self.young_modulus <= 0:
            raise ValueError("young_modulus must be > 0")
        if not 0 < self.poisson_ratio < 0.5:
            raise ValueError("poisson_ratio must be in (0, 0.5)")
        if self.thermal_expansion <= 0:
            raise ValueError("thermal_expansion must be > 0")

    def default_inherent_strain(self) -> float:
        return self.thermal_expansion * (self.deposition_temperature - self.reference_temperature)


@dataclass(frozen=True)
class BuildConfig:
    """Activation schedule and solver settings for the build simulation."""

    layers_per_activation: int = 10
    inherent_strain: float | None = None  # None -> alpha * (T_dep - T_ref)
    support_spring: float = 0.0  # MPa*mm per base node, 0 = rigid clamp only
    cg_rel_tol: float = 1e-8
    cg_max_iter: int | None = None  # None -> 10 * ndof

    def __post_init__(self):
        if self.layers_per_activation < 1:
            raise ValueError("layers_per_activation must be >= 1")
        if self.inherent_strain is not None and self.inherent_strain < 0:
            raise ValueError("inherent_strain must be >= 0")
        if self.cg_rel_tol <= 0:
            raise ValueError("cg_rel_tol must be > 0")

    def strain(self, mat: MaterialParams) -> float:
        if self.inherent_strain is not None:
            return self.inherent_strain
        return mat.default_inherent_strain()


@dataclass(frozen=True)
class FemModel:
    """Hexahedral element model derived from a voxel occupancy grid."""

    nodes: np.ndarray  # (nn, 3) coordinates in mm
    elements: np.ndarray  # (ne, 8) node indices, standard hex8 ordering
    layers: np.ndarray  # (ne,) layer index per element, contiguous from 0
    clamped: np.ndarray  # node indices at the build-plate plane
    h: float

    def __post_init__(self):
        if len(self.clamped) == 0:
            raise ParseError("clamped node set is empty")
        lay = np.unique(self.layers)
        if lay[0] != 0 or not np.array_equal(lay, np.arange(len(lay))):
            raise ParseError("layer indices must be contiguous from 0")

    @property
    def n_layers(self) -> int:
        return int(self.layers.max()) + 1


@dataclass(frozen=True)
class WarpResult:
    """Accumulated displacement field of the build simulation."""

    displacement: np.ndarray  # (nn, 3) mm
    steps: int
    residuals: list[float] = field(default_factory=list)


# Hex8 corner signs, node a at (xi, eta, zeta) = _SIGNS[a]
_SIGNS = np.array(
    [
        [-1, -1, -1],
        [+1, -1, -1],
        [+1, +1, -1],
        [-1, +1, -1],
        [-1, -1, +1],
        [+1, -1, +1],
        [+1, +1, +1],
        [-1, +1, +1],
    ],
    dtype=np.float64,
)

# voxel corner offsets in the same ordering
_CORNER_OFFSETS = ((_SIGNS + 1) / 2).astype(np.int64)


def elasticity_matrix(mat: MaterialParams) -> np.ndarray:
    """6x6 isotropic elasticity tensor in Voigt order (xx,yy,zz,xy,yz,zx)."""
    e, nu = mat.young_modulus, mat.poisson_ratio
    lam = e * nu / ((1 + nu) * (1 - 2 * nu))
    mu = e / (2 * (1 + nu))
    d = np.zeros((6, 6))
    d[:3, :3] = lam
    d[np.arange(3), np.arange(3)] += 2 * mu
    d[3:, 3:] = np.eye(3) * mu
    return d


def _gauss_points(n: int) -> tuple[np.ndarray, np.ndarray]:
    pts, wts = np.polynomial.legendre.leggauss(n)
    grid = np.stack(np.meshgrid(pts, pts, pts, indexing="ij"), axis=-1).reshape(-1, 3)
    w = np.stack(np.meshgrid(wts, wts, wts, indexing="ij"), axis=-1).reshape(-1, 3)
    return grid, w.prod(axis=1)


def _b_matrix(xi: np.ndarray, h: float) -> np.ndarray:
    """Strain-displacement matrix (6x24) of a cube element at local point xi."""
    # dN/dxi for the trilinear shape functions, then scaled by 2/h
    dn = np.empty((8, 3))
    for a in range(8):
        s = _SIGNS[a]
        dn[a, 0] = 0.125 * s[0] * (1 + s[1] * xi[1]) * (1 + s[2] * xi[2])
        dn[a, 1] = 0.125 * s[1] * (1 + s[0] * xi[0]) * (1 + s[2] * xi[2])
        dn[a, 2] = 0.125 * s[2] * (1 + s[0] * xi[0]) * (1 + s[1] * xi[1])
    dn *= 2.0 / h
    b = np.zeros((6, 24))
    for a in range(8):
        gx, gy, gz = dn[a]
        c = 3 * a
        b[0, c] = gx
        b[1, c + 1] = gy
        b[2, c + 2] = gz
        b[3, c] = gy
        b[3, c + 1] = gx
        b[4, c + 1] = gz
        b[4, c + 2] = gy
        b[5, c] = gz
        b[5, c + 2] = gx
    return b


def element_stiffness(mat: MaterialParams, h: float, quadrature: int = 2) -> np.ndarray:
    """24x24 stiffness of a cube element of side h, Gauss quadrature."""
    if h <= 0:
        raise ValueError("element size must be > 0")
    d = elasticity_matrix(mat)
    det_j = (h / 2.0) ** 3
    pts, wts = _gauss_points(quadrature)
    ke = np.zeros((24, 24))
    for xi, w in zip(pts, wts):
        b = _b_matrix(xi, h)
        ke += w * det_j * (b.T @ d @ b)
    return ke


def eigenstrain_load(mat: MaterialParams, h: float, s: float, quadrature: int = 2) -> np.ndarray:
    """Equivalent nodal loads of the isotropic contraction eigenstrain -s*I."""
    if s < 0:
        raise ValueError("inherent strain must be >= 0")
    d = elasticity_matrix(mat)
    eps_star = np.array([-s, -s, -s, 0.0, 0.0, 0.0])
    det_j = (h / 2.0) ** 3
    pts, wts = _gauss_points(quadrature)
    f = np.zeros(24)
    for xi, w in zip(pts, wts):
        b = _b_matrix(xi, h)
        f += w * det_j * (b.T @ (d @ eps_star))
    return f


def build_fem_model(stock: VoxelModel) -> FemModel:
    """Hexahedral model of the occupied cells; layers are z voxel slabs.

    Clamped nodes are those on the minimum-z plane of the occupied region
    (the build-plate contact surface).
    """
    cells = np.argwhere(stock.occupancy)
    if len(cells) == 0:
        raise ParseError("stock grid is empty")
    ny1 = stock.dims[1] + 1
    nz1 = stock.dims[2] + 1
    corner_ids = (
        (cells[:, None, 0] + _CORNER_OFFSETS[None, :, 0]) * ny1
        + (cells[:, None, 1] + _CORNER_OFFSETS[None, :, 1])
    ) * nz1 + (cells[:, None, 2] + _CORNER_OFFSETS[None, :, 2])
    uniq, inverse = np.unique(corner_ids, return_inverse=True)
    elements = inverse.reshape(len(cells), 8)
    kx, rem = np.divmod(uniq, ny1 * nz1)
    ky, kz = np.divmod(rem, nz1)
    nodes = stock.origin + np.stack([kx, ky, kz], axis=1).astype(np.float64) * stock.h

    zmin_cell = cells[:, 2].min()
    layers = cells[:, 2] - zmin_cell
    z_plate = stock.origin[2] + zmin_cell * stock.h
    clamped = np.nonzero(np.abs(nodes[:, 2] - z_plate) < 1e-9 * max(stock.h, 1.0))[0]
    return FemModel(nodes=nodes, elements=elements, layers=layers, clamped=clamped, h=stock.h)


def _assemble(ke: np.ndarray, elements: np.ndarray, ndof: int) -> sparse.csr_matrix:
    ne = len(elements)
    dofs = (3 * elements[:, :, None] + np.arange(3)[None, None, :]).reshape(ne, 24)
    rows = np.repeat(dofs, 24, axis=1).ravel()
    cols = np.tile(dofs, (1, 24)).ravel()
    vals = np.tile(ke.ravel(), ne)
    k = sparse.coo_matrix((vals, (rows, cols)), shape=(ndof, ndof))
    return k.tocsr()


def _check_connected(elements: np.ndarray, active_nodes: np.ndarray, clamped: set, nn: int):
    """Every connected component of the active part must touch the clamp."""
    if len(elements) == 0:
        return
    # edges between consecutive element nodes are enough for connectivity
    a = elements[:, [0, 1, 2, 3, 4, 5, 6, 0, 1, 2, 3]].ravel()
    b = elements[:, [1, 2, 3, 0, 5, 6, 7, 4, 5, 6, 7]].ravel()
    g = sparse.coo_matrix((np.ones(len(a)), (a, b)), shape=(nn, nn))
    ncomp, labels = csgraph.connected_components(g, directed=False)
    active_labels = np.unique(labels[active_nodes])
    clamped_labels = set(labels[list(clamped)])
    for lab in active_labels:
        if lab not in clamped_labels:
            raise SingularSystem("an active region is not connected to the build plate")


def simulate_build(model: FemModel, mat: MaterialParams, cfg: BuildConfig) -> WarpResult:
    """Sequential activation solve; returns accumulated nodal displacements."""
    ke = element_stiffness(mat, model.h)
    fe = eigenstrain_load(mat, model.h, cfg.strain(mat))
    nn = len(model.nodes)
    ndof = 3 * nn
    clamped_set = set(int(i) for i in model.clamped)
    clamped_dofs = np.concatenate([3 * model.clamped + d for d in range(3)])
    free_mask = np.ones(ndof, dtype=bool)
    free_mask[clamped_dofs] = False

    u = np.zeros(ndof)
    residuals: list[float] = []
    k_pack = cfg.layers_per_activation
    n_layers = model.n_layers
    step = 0
    for start in range(0, n_layers, k_pack):
        end = min(start + k_pack, n_layers)
        active = model.layers < end
        new = (model.layers >= start) & active
        active_elems = model.elements[active]
        active_nodes = np.unique(active_elems)
        _check_connected(active_elems, active_nodes, clamped_set, nn)

        k_full = _assemble(ke, active_elems, ndof)
        if cfg.support_spring > 0.0:
            # springs at the base plane; inert under the rigid clamp but kept
            # on the diagonal so the contract stays visible in the assembly
            spring = sparse.coo_matrix(
                (np.full(len(clamped_dofs), cfg.support_spring), (clamped_dofs, clamped_dofs)),
                shape=(ndof, ndof),
            )
            k_full = (k_full + spring).tocsr()

        f = np.zeros(ndof)
        new_elems = model.elements[new]
        dofs = (3 * new_elems[:, :, None] + np.arange(3)[None, None, :]).reshape(-1)
        np.add.at(f, dofs, np.tile(fe, len(new_elems)))

        # restrict to free dofs of active nodes
        active_dof_mask = np.zeros(ndof, dtype=bool)
        adofs = (3 * active_nodes[:, None] + np.arange(3)[None, :]).ravel()
        active_dof_mask[adofs] = True
        sel = np.nonzero(active_dof_mask & free_mask)[0]
        k_sys = k_full[sel][:, sel]
        f_sys = f[sel]

        step += 1
        fnorm = np.linalg.norm(f_sys)
        if fnorm == 0.0:
            residuals.append(0.0)
            continue
        diag = k_sys.diagonal()
        if np.any(diag <= 0):
            raise SingularSystem(f"non-positive stiffness diagonal at step {step}")
        precond = LinearOperator(k_sys.shape, matvec=lambda x, d=diag: x / d)
        maxiter = cfg.cg_max_iter if cfg.cg_max_iter is not None else 10 * len(sel)
        du, info = cg(k_sys, f_sys, rtol=cfg.cg_rel_tol * 1e-2, atol=0.0, maxiter=maxiter, M=precond)
        res = float(np.linalg.norm(k_sys @ du - f_sys) / fnorm)
        if info > 0 or res > cfg.cg_rel_tol:
            raise SolverDiverged(f"CG did not converge at step {step} (residual {res:.3e})", step=step)
        residuals.append(res)
        u[sel] += du

    return WarpResult(displacement=u.reshape(nn, 3), steps=step, residuals=residuals)


# 6-tet decomposition of a hex along the 0-6 diagonal
_HEX_TETS = np.array(
    [
        [0, 1, 2, 6],
        [0, 2, 3, 6],
        [0, 3, 7, 6],
        [0, 7, 4, 6],
        [0, 4, 5, 6],
        [0, 5, 1, 6],
    ]
)


def warped_volume(model: FemModel, w: WarpResult) -> float:
    """Volume of the deformed configuration, 6 tetrahedra per hexahedron."""
    coords = model.nodes + w.displacement
    hexes = coords[model.elements]  # (ne, 8, 3)
    total = 0.0
    for tet in _HEX_TETS:
        a, b, c, d = (hexes[:, i] for i in tet)
        vols = np.einsum("ij,ij->i", b - a, np.cross(c - a, d - a)) / 6.0
        if np.any(vols <= 0):
            raise InvertedElement("warped tetrahedron with non-positive volume")
        total += vols.sum()
    return float(total)


def warped_surface(
    stock_model: StockModel, model: FemModel, w: WarpResult, exclude_base: bool = True
) -> np.ndarray:
    """Warped positions of the external stock-boundary nodes.

    Cavity-wall nodes are always excluded; base-plane nodes are excluded when
    exclude_base is set. Returns an (n, 3) point cloud in mm.
    """
    stock = stock_model.stock
    cav = stock_model.cavities.occupancy
    cav_pad = np.pad(cav, 1)
    ny1 = stock.dims[1] + 1
    nz1 = stock.dims[2] + 1
    axis_of = {"x": 0, "y": 1, "z": 2}

    external_ids: set[int] = set()
    cavity_ids: set[int] = set()
    for cells, axis_name, sign in boundary_faces(stock):
        axis = axis_of[axis_name]
        nb = cells.copy()
        nb[:, axis] += sign
        is_cavity = cav_pad[nb[:, 0] + 1, nb[:, 1] + 1, nb[:, 2] + 1]
        offs = np.array(_FACE_TABLE[(axis_name, sign)])
        corners = cells[:, None, :] + offs[None, :, :]
        ids = ((corners[..., 0] * ny1 + corners[..., 1]) * nz1 + corners[..., 2]).reshape(-1, 4)
        for face_ids, cavity in zip(ids, is_cavity):
            target = cavity_ids if cavity else external_ids
            target.update(int(i) for i in face_ids)

    keep = np.array(sorted(external_ids - cavity_ids), dtype=np.int64)
    if len(keep) == 0:
        return np.empty((0, 3))
    kx, rem = np.divmod(keep, ny1 * nz1)
    ky, kz = np.divmod(rem, nz1)
    pts = stock.origin + np.stack([kx, ky, kz], axis=1).astype(np.float64) * stock.h

    # map grid corner ids to fem node indices to add displacements
    cells = np.argwhere(stock.occupancy)
    corner_ids = (
        (cells[:, None, 0] + _CORNER_OFFSETS[None, :, 0]) * ny1
        + (cells[:, None, 1] + _CORNER_OFFSETS[None, :, 1])
    ) * nz1 + (cells[:, None, 2] + _CORNER_OFFSETS[None, :, 2])
    uniq = np.unique(corner_ids)
    lookup = {int(g): i for i, g in enumerate(uniq)}
    disp = np.array([w.displacement[lookup[int(g)]] for g in keep])
    pts = pts + disp

    if exclude_base:
        z_plate = model.nodes[model.clamped[0], 2]
        base = np.abs(model.nodes[[lookup[int(g)] for g in keep], 2] - z_plate) < 1e-9
        pts = pts[~base]
    return pts
