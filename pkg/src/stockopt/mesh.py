"""Triangle mesh input, validation and volume computation.

All lengths are in mm. Meshes must be watertight, consistently oriented
(counterclockwise seen from outside) and enclose a positive volume.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import NegativeVolume, ParseError, WatertightnessViolation

WELD_TOL = 1e-6  # mm; below manufacturing relevance, above float noise
MIN_TRIANGLE_AREA = 1e-12  # mm^2


@dataclass(frozen=True)
class TriangleMesh:
    """Watertight triangulated boundary of a solid.

    vertices: (nv, 3) float64 coordinates in mm.
    triangles: (nt, 3) int64 vertex indices, CCW seen from outside.
    """

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "vertices", np.asarray(self.vertices, dtype=np.float64))
        object.__setattr__(self, "triangles", np.asarray(self.triangles, dtype=np.int64))
        self.vertices.setflags(write=False)
        self.triangles.setflags(write=False)

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def triangle_corners(self) -> np.ndarray:
        """(nt, 3, 3) array of triangle corner coordinates."""
        return self.vertices[self.triangles]


def triangle_areas(mesh: TriangleMesh) -> np.ndarray:
    tri = mesh.triangle_corners()
    cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    return 0.5 * np.linalg.norm(cross, axis=1)


def mesh_volume(mesh: TriangleMesh) -> float:
    """Signed volume via the divergence theorem, sum of det(v0,v1,v2)/6."""
    tri = mesh.triangle_corners()
    dets = np.einsum("ij,ij->i", tri[:, 0], np.cross(tri[:, 1], tri[:, 2]))
    return float(dets.sum() / 6.0)


def validate_mesh(mesh: TriangleMesh) -> None:
    """Raise if the mesh violates the watertightness / orientation invariants."""
    nv = len(mesh.vertices)
    if len(mesh.triangles) == 0:
        raise ParseError("mesh has no triangles")
    if mesh.triangles.min() < 0 or mesh.triangles.max() >= nv:
        raise ParseError("triangle index out of range")
    if np.any(
        (mesh.triangles[:, 0] == mesh.triangles[:, 1])
        | (mesh.triangles[:, 1] == mesh.triangles[:, 2])
        | (mesh.triangles[:, 0] == mesh.triangles[:, 2])
    ):
        raise ParseError("triangle with repeated vertex")
    if np.any(triangle_areas(mesh) <= MIN_TRIANGLE_AREA):
        raise ParseError("degenerate triangle (area below 1e-12 mm^2)")

    # Watertight and orientable: every directed edge appears exactly once
    # and its reverse appears exactly once.
    t = mesh.triangles
    directed = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    keys = directed[:, 0] * np.int64(nv) + directed[:, 1]
    uniq, counts = np.unique(keys, return_counts=True)
    if np.any(counts > 1):
        raise WatertightnessViolation("duplicated directed edge (non-manifold or repeated triangle)")
    reverse = directed[:, 1] * np.int64(nv) + directed[:, 0]
    if not np.array_equal(np.sort(keys), np.sort(reverse)):
        raise WatertightnessViolation("open edge found (boundary is not closed)")

    if mesh_volume(mesh) <= 0.0:
        raise NegativeVolume("mesh encloses non-positive signed volume")


def weld_vertices(points: np.ndarray, triangles: np.ndarray) -> TriangleMesh:
    """Merge vertices closer than WELD_TOL and drop the duplicates."""
    quantized = np.round(points / WELD_TOL).astype(np.int64)
    _, first, inverse = np.unique(quantized, axis=0, return_index=True, return_inverse=True)
    return TriangleMesh(points[first], inverse[triangles])


def _parse_binary_stl(data: bytes) -> np.ndarray:
    (ntri,) = struct.unpack_from("<I", data, 80)
    if len(data) != 84 + 50 * ntri:
        raise ParseError("binary STL length does not match triangle count")
    rec = np.frombuffer(data, dtype=np.uint8, offset=84).reshape(ntri, 50)
    floats = rec[:, :48].copy().view("<f4").reshape(ntri, 12)
    return floats[:, 3:].astype(np.float64).reshape(ntri, 3, 3)


def _parse_ascii_stl(text: str) -> np.ndarray:
    verts = []
    for line in text.splitlines():
        parts = line.split()
        if len(parts) == 4 and parts[0].lower() == "vertex":
            try:
                verts.append([float(parts[1]), float(parts[2]), float(parts[3])])
            except ValueError as exc:
                raise ParseError(f"bad vertex line: {line.strip()!r}") from exc
    if not verts or len(verts) % 3 != 0:
        raise ParseError("ASCII STL does not contain a whole number of triangles")
    return np.array(verts, dtype=np.float64).reshape(-1, 3, 3)


def load_mesh(data: bytes) -> TriangleMesh:
    """Parse binary or ASCII STL content into a validated TriangleMesh."""
    if len(data) < 15:
        raise ParseError("file too short to be STL")
    is_binary = False
    if len(data) >= 84:
        (ntri,) = struct.unpack_from("<I", data, 80)
        if len(data) == 84 + 50 * ntri:
            is_binary = True
    if is_binary:
        corners = _parse_binary_stl(data)
    else:
        try:
            text = data.decode("utf-8", errors="strict")
        except UnicodeDecodeError as exc:
            raise ParseError("file is neither valid binary nor ASCII STL") from exc
        corners = _parse_ascii_stl(text)

    ntri = len(corners)
    mesh = weld_vertices(corners.reshape(-1, 3), np.arange(3 * ntri).reshape(ntri, 3))
    validate_mesh(mesh)
    return mesh


def save_stl(mesh: TriangleMesh) -> bytes:
    """Serialize to binary STL (80-byte header, uint32 count, 50-byte records)."""
    tri = mesh.triangle_corners()
    normals = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    lengths = np.linalg.norm(normals, axis=1, keepdims=True)
    normals = np.divide(normals, lengths, out=np.zeros_like(normals), where=lengths > 0)
    nt = len(tri)
    rec = np.zeros((nt, 50), dtype=np.uint8)
    floats = np.concatenate([normals, tri.reshape(nt, 9)], axis=1).astype("<f4")
    rec[:, :48] = floats.view(np.uint8).reshape(nt, 48)
    header = b"stockopt surface export".ljust(80, b"\0")
    return header + struct.pack("<I", nt) + rec.tobytes()


def box_mesh(size, origin=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Axis-aligned box as 12 CCW triangles; handy for tests and demos."""
    sx, sy, sz = (float(s) for s in np.broadcast_to(size, 3))
    ox, oy, oz = origin
    v = np.array(
        [
            [ox, oy, oz],
            [ox + sx, oy, oz],
            [ox + sx, oy + sy, oz],
            [ox, oy + sy, oz],
            [ox, oy, oz + sz],
            [ox + sx, oy, oz + sz],
            [ox + sx, oy + sy, oz + sz],
            [ox, oy + sy, oz + sz],
        ]
    )
    quads = [
        (0, 3, 2, 1),  # -z
        (4, 5, 6, 7),  # +z
        (0, 1, 5, 4),  # -y
        (2, 3, 7, 6),  # +y
        (1, 2, 6, 5),  # +x
        (0, 4, 7, 3),  # -x
    ]
    tris = []
    for a, b, c, d in quads:
        tris.append((a, b, c))
        tris.append((a, c, d))
    mesh = TriangleMesh(v, np.array(tris))
    validate_mesh(mesh)
    return mesh
