"""Point-to-mesh signed distance and the machining-allowance metrics.

Distances are exact point-to-triangle projections accelerated by an AABB
hierarchy; the sign comes from angle-weighted pseudonormals, which is exact
for watertight, consistently oriented meshes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyCloud
from .mesh import TriangleMesh

_LEAF_SIZE = 4


def closest_point_on_triangle(tri: np.ndarray, p: np.ndarray):
    """Closest point, squared distance and feature code for one triangle.

    Feature codes: 0,1,2 vertices a,b,c; 3,4,5 edges ab,bc,ca; 6 face.
    Region resolution follows Ericson's real-time collision detection scheme.
    """
    a, b, c = tri
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = ab @ ap
    d2 = ac @ ap
    if d1 <= 0.0 and d2 <= 0.0:
        return a, 0
    bp = p - b
    d3 = ab @ bp
    d4 = ac @ bp
    if d3 >= 0.0 and d4 <= d3:
        return b, 1
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3)
        return a + v * ab, 3
    cp = p - c
    d5 = ab @ cp
    d6 = ac @ cp
    if d6 >= 0.0 and d5 <= d6:
        return c, 2
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        return a + w * ac, 5
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return b + w * (c - b), 4
    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    return a + v * ab + w * ac, 6


@dataclass
class _BvhNode:
    lo: np.ndarray
    hi: np.ndarray
    left: int = -1
    right: int = -1
    start: int = -1
    end: int = -1  # leaf triangle range in the ordered index array


def _build_bvh(centers, los, his, order, start, end, nodes):
    lo = los[order[start:end]].min(axis=0)
    hi = his[order[start:end]].max(axis=0)
    idx = len(nodes)
    nodes.append(_BvhNode(lo=lo, hi=hi))
    if end - start <= _LEAF_SIZE:
        nodes[idx].start = start
        nodes[idx].end = end
        return idx
    axis = int(np.argmax(hi - lo))
    mid = (start + end) // 2
    sub = order[start:end]
    sel = np.argpartition(centers[sub, axis], mid - start)
    order[start:end] = sub[sel]
    nodes[idx].left = _build_bvh(centers, los, his, order, start, mid, nodes)
    nodes[idx].right = _build_bvh(centers, los, his, order, mid, end, nodes)
    return idx


def _box_sqdist(lo, hi, p):
    d = np.maximum(np.maximum(lo - p, p - hi), 0.0)
    return d @ d


@dataclass
class SignedDistanceQuery:
    """Closest-distance queries against a fixed target mesh.

    The hierarchy and pseudonormals are immutable after construction; the
    warm-start cursor (`last_hit`) belongs to one query stream and only
    tightens the initial search bound, never the result.
    """

    target: TriangleMesh
    last_hit: int | None = None
    triangles_tested: int = 0
    _nodes: list = field(default_factory=list, repr=False)
    _order: np.ndarray | None = field(default=None, repr=False)
    _tri: np.ndarray | None = field(default=None, repr=False)
    _face_normals: np.ndarray | None = field(default=None, repr=False)
    _vertex_normals: np.ndarray | None = field(default=None, repr=False)
    _edge_normals: dict | None = field(default=None, repr=False)

    def __post_init__(self):
        tri = self.target.triangle_corners()
        self._tri = tri
        los = tri.min(axis=1)
        his = tri.max(axis=1)
        centers = 0.5 * (los + his)
        order = np.arange(len(tri))
        self._nodes = []
        _build_bvh(centers, los, his, order, 0, len(tri), self._nodes)
        self._order = order
        self._precompute_pseudonormals()

    def _precompute_pseudonormals(self):
        mesh = self.target
        tri = self._tri
        n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        self._face_normals = n

        vertex_normals = np.zeros_like(mesh.vertices)
        edge_normals: dict[tuple[int, int], np.ndarray] = {}
        for t, (i, j, k) in enumerate(mesh.triangles):
            corners = tri[t]
            for local, vid in enumerate((i, j, k)):
                e1 = corners[(local + 1) % 3] - corners[local]
                e2 = corners[(local + 2) % 3] - corners[local]
                angle = np.arccos(
                    np.clip(e1 @ e2 / (np.linalg.norm(e1) * np.linalg.norm(e2)), -1.0, 1.0)
                )
                vertex_normals[vid] += angle * n[t]
            for a, b in ((i, j), (j, k), (k, i)):
                key = (min(a, b), max(a, b))
                edge_normals[key] = edge_normals.get(key, 0.0) + n[t]
        lengths = np.linalg.norm(vertex_normals, axis=1, keepdims=True)
        self._vertex_normals = np.divide(
            vertex_normals, lengths, out=np.zeros_like(vertex_normals), where=lengths > 0
        )
        self._edge_normals = {k: v / np.linalg.norm(v) for k, v in edge_normals.items()}

    def _pseudonormal(self, tri_idx: int, feature: int) -> np.ndarray:
        i, j, k = self.target.triangles[tri_idx]
        if feature == 6:
            return self._face_normals[tri_idx]
        if feature < 3:
            return self._vertex_normals[(i, j, k)[feature]]
        edge = ((i, j), (j, k), (k, i))[feature - 3]
        return self._edge_normals[(min(edge), max(edge))]

    def query(self, x: np.ndarray):
        """Return (signed distance, closest point, triangle index)."""
        x = np.asarray(x, dtype=np.float64)
        best_sq = np.inf
        best_point = None
        best_tri = -1
        best_feature = 6
        if self.last_hit is not None:
            cp, feat = closest_point_on_triangle(self._tri[self.last_hit], x)
            self.triangles_tested += 1
            best_sq = (x - cp) @ (x - cp)
            best_point, best_tri, best_feature = cp, self.last_hit, feat

        stack = [0]
        nodes = self._nodes
        while stack:
            node = nodes[stack.pop()]
            if _box_sqdist(node.lo, node.hi, x) >= best_sq:
                continue
            if node.start >= 0:
                for t in self._order[node.start : node.end]:
                    if t == best_tri and best_point is not None:
                        continue
                    cp, feat = closest_point_on_triangle(self._tri[t], x)
                    self.triangles_tested += 1
                    sq = (x - cp) @ (x - cp)
                    if sq < best_sq:
                        best_sq = sq
                        best_point, best_tri, best_feature = cp, int(t), feat
            else:
                dl = _box_sqdist(nodes[node.left].lo, nodes[node.left].hi, x)
                dr = _box_sqdist(nodes[node.right].lo, nodes[node.right].hi, x)
                # visit the nearer child first
                if dl <= dr:
                    stack.append(node.right)
                    stack.append(node.left)
                else:
                    stack.append(node.left)
                    stack.append(node.right)

        self.last_hit = best_tri
        normal = self._pseudonormal(best_tri, best_feature)
        sign = 1.0 if (x - best_point) @ normal >= 0 else -1.0
        return sign * float(np.sqrt(best_sq)), best_point, best_tri


def signed_distance(q: SignedDistanceQuery, x) -> float:
    """Signed Euclidean distance; positive outside the solid, negative inside."""
    d, _, _ = q.query(np.asarray(x, dtype=np.float64))
    return d


def delta_thickness(cloud: np.ndarray, q: SignedDistanceQuery) -> float:
    """Minimum signed distance of the cloud to the nominal surface.

    A single intruding point (negative distance) makes the design infeasible,
    hence the minimum.
    """
    cloud = np.asarray(cloud, dtype=np.float64)
    if cloud.ndim != 2 or len(cloud) == 0:
        raise EmptyCloud("thickness constraint needs a nonempty point cloud")
    return min(signed_distance(q, p) for p in cloud)


def delta_volume(warped_vol: float, cavities_vol: float, nominal_vol: float) -> float:
    """Extra material to machine away: warped + cavities - nominal volume."""
    if min(warped_vol, cavities_vol, nominal_vol) < 0:
        raise ValueError("volumes must be non-negative")
    return warped_vol + cavities_vol - nominal_vol
