"""Triangulated closed surfaces, canonical shapes and boundary quadrature.

All boundary integrals in the package run over a :class:`SurfaceMesh`, a flat
triangle mesh with piecewise-constant outward normals. Double-surface
integrals of ``1/r`` use an exact constant-density triangle potential for the
inner integral on near pairs; far pairs use a plain node rule.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Optional, Sequence, Union

import numpy as np
from scipy.spatial import cKDTree

logger = logging.getLogger(__name__)

KernelKind = Literal["newton", "normal-derivative"]
RuleName = Literal["centroid", "3-point", "7-point"]

_AXES = {"x": 0, "y": 1, "z": 2}

# Rows start a new chunk every this many rows during dense assembly.
_ROW_CHUNK = 256


class MeshError(ValueError):
    """Raised for unreadable or topologically invalid meshes."""


# ---------------------------------------------------------------------------
# Triangle quadrature rules (barycentric nodes, weights summing to 1)
# ---------------------------------------------------------------------------

_A1, _B1 = 0.059715871789770, 0.470142064105115
_A2, _B2 = 0.797426985353087, 0.101286507323456

_RULES = {
    "centroid": (np.array([[1 / 3, 1 / 3, 1 / 3]]), np.array([1.0])),
    "3-point": (
        np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]]),
        np.full(3, 1 / 3),
    ),
    "7-point": (
        np.array(
            [
                [1 / 3, 1 / 3, 1 / 3],
                [_A1, _B1, _B1],
                [_B1, _A1, _B1],
                [_B1, _B1, _A1],
                [_A2, _B2, _B2],
                [_B2, _A2, _B2],
                [_B2, _B2, _A2],
            ]
        ),
        np.array([0.225] + [0.132394152788506] * 3 + [0.125939180544827] * 3),
    ),
}


@dataclass(frozen=True)
class QuadratureRule:
    """Per-triangle quadrature nodes and weights for one mesh.

    ``weights[i].sum()`` equals the area of triangle ``i``.
    """

    nodes: np.ndarray  # (nt, q, 3)
    weights: np.ndarray  # (nt, q)
    strategy: str = "centroid"

    def integrate(self, values: np.ndarray) -> float:
        """Integrate nodal ``values`` of shape ``(nt, q)`` over the surface."""
        return float(np.sum(self.weights * values))


# ---------------------------------------------------------------------------
# Surface mesh
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SurfaceMesh:
    """Closed, outward-oriented triangle surface.

    Attributes
    ----------
    vertices : ndarray, shape (nv, 3)
    triangles : ndarray of int, shape (nt, 3)
        Counter-clockwise when seen from outside.
    normals, areas, centroids
        Per-triangle derived quantities, filled in on construction.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    normals: np.ndarray = field(init=False, repr=False)
    areas: np.ndarray = field(init=False, repr=False)
    centroids: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        v = np.ascontiguousarray(self.vertices, dtype=float)
        t = np.ascontiguousarray(self.triangles, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError(f"vertices must have shape (nv, 3), got {v.shape}")
        if t.ndim != 2 or t.shape[1] != 3:
            raise MeshError(f"triangles must have shape (nt, 3), got {t.shape}")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise MeshError("triangle index out of range")
        p = v[t]
        cross = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        twice_area = np.linalg.norm(cross, axis=1)
        if np.any(twice_area <= 0.0):
            bad = int(np.argmin(twice_area))
            raise MeshError(f"degenerate triangle {bad} with zero area")
        v.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        object.__setattr__(self, "normals", cross / twice_area[:, None])
        object.__setattr__(self, "areas", 0.5 * twice_area)
        object.__setattr__(self, "centroids", p.mean(axis=1))

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def corners(self) -> np.ndarray:
        """Triangle corner coordinates, shape (nt, 3, 3)."""
        return self.vertices[self.triangles]

    @property
    def area(self) -> float:
        return float(self.areas.sum())

    @property
    def volume(self) -> float:
        """Signed enclosed volume from the divergence theorem."""
        p = self.corners
        return float(np.einsum("ij,ij->i", p[:, 0], np.cross(p[:, 1], p[:, 2])).sum() / 6.0)

    @property
    def center(self) -> np.ndarray:
        """Volume centroid of the enclosed solid."""
        p = self.corners
        six_vol = np.einsum("ij,ij->i", p[:, 0], np.cross(p[:, 1], p[:, 2]))
        return (six_vol[:, None] * p.sum(axis=1)).sum(axis=0) / (4.0 * six_vol.sum())

    @property
    def radius(self) -> float:
        """Half the largest vertex-to-vertex distance (the body radius a_j)."""
        v = self.vertices
        if len(v) > 4:
            try:
                from scipy.spatial import ConvexHull

                v = v[ConvexHull(v).vertices]
            except Exception:  # pragma: no cover - flat or tiny input
                pass
        best = 0.0
        for start in range(0, len(v), _ROW_CHUNK):
            d = np.linalg.norm(v[start : start + _ROW_CHUNK, None, :] - v[None, :, :], axis=2)
            best = max(best, float(d.max()))
        return 0.5 * best

    @property
    def max_edge(self) -> float:
        p = self.corners
        e = np.linalg.norm(p - np.roll(p, 1, axis=1), axis=2)
        return float(e.max())

    def scaled(self, factor: float) -> "SurfaceMesh":
        return SurfaceMesh(self.vertices * factor, self.triangles)

    def translated(self, offset: Sequence[float]) -> "SurfaceMesh":
        return SurfaceMesh(self.vertices + np.asarray(offset, dtype=float), self.triangles)

    def rotated(self, rotation: np.ndarray) -> "SurfaceMesh":
        """Apply a proper rotation matrix to every vertex."""
        return SurfaceMesh(self.vertices @ np.asarray(rotation, dtype=float).T, self.triangles)

    def quadrature(self, rule: RuleName = "centroid") -> QuadratureRule:
        bary, w = _RULES[rule]
        nodes = np.einsum("qk,tkd->tqd", bary, self.corners)
        return QuadratureRule(nodes, self.areas[:, None] * w[None, :], strategy=rule)

    def validate(self) -> None:
        """Check closedness, manifoldness and consistent orientation.

        Raises :class:`MeshError` naming the offending edge.
        """
        check_topology(self.triangles)
        if self.volume <= 0.0:
            raise MeshError("mesh encloses non-positive volume (inward orientation)")


def check_topology(triangles: np.ndarray) -> None:
    """Raise :class:`MeshError` unless every edge has exactly two faces with
    opposite orientation."""
    t = np.asarray(triangles, dtype=np.int64)
    directed = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    undirected = np.sort(directed, axis=1)
    uniq, counts = np.unique(undirected, axis=0, return_counts=True)
    if np.any(counts == 1):
        a, b = uniq[np.argmax(counts == 1)]
        raise MeshError(f"open surface: edge ({a}, {b}) belongs to a single triangle")
    if np.any(counts > 2):
        a, b = uniq[np.argmax(counts > 2)]
        raise MeshError(f"non-manifold edge ({a}, {b}) shared by {counts.max()} triangles")
    d_uniq, d_counts = np.unique(directed, axis=0, return_counts=True)
    if np.any(d_counts > 1):
        a, b = d_uniq[np.argmax(d_counts > 1)]
        raise MeshError(f"inconsistent orientation at edge ({a}, {b})")


# ---------------------------------------------------------------------------
# Shape generators
# ---------------------------------------------------------------------------

_PHI = (1.0 + math.sqrt(5.0)) / 2.0
_ICO_VERTS = np.array(
    [
        [-1, _PHI, 0], [1, _PHI, 0], [-1, -_PHI, 0], [1, -_PHI, 0],
        [0, -1, _PHI], [0, 1, _PHI], [0, -1, -_PHI], [0, 1, -_PHI],
        [_PHI, 0, -1], [_PHI, 0, 1], [-_PHI, 0, -1], [-_PHI, 0, 1],
    ],
    dtype=float,
)
_ICO_FACES = np.array(
    [
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ]
)


def _subdivide(vertices: np.ndarray, faces: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split every triangle into four using shared edge midpoints."""
    edges = np.sort(np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]]), axis=1)
    uniq, inverse = np.unique(edges, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    mids = 0.5 * (vertices[uniq[:, 0]] + vertices[uniq[:, 1]])
    new_vertices = np.vstack([vertices, mids])
    nf = len(faces)
    m01 = len(vertices) + inverse[:nf]
    m12 = len(vertices) + inverse[nf : 2 * nf]
    m20 = len(vertices) + inverse[2 * nf :]
    a, b, c = faces.T
    new_faces = np.concatenate(
        [
            np.stack([a, m01, m20], axis=1),
            np.stack([b, m12, m01], axis=1),
            np.stack([c, m20, m12], axis=1),
            np.stack([m01, m12, m20], axis=1),
        ]
    )
    return new_vertices, new_faces


def generate_sphere(radius: float = 1.0, refinement: int = 0) -> SurfaceMesh:
    """Icosphere with ``20 * 4**refinement`` triangles centred at the origin."""
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    if refinement < 0:
        raise ValueError(f"refinement must be >= 0, got {refinement}")
    v = _ICO_VERTS / np.linalg.norm(_ICO_VERTS, axis=1, keepdims=True)
    f = _ICO_FACES.copy()
    for _ in range(refinement):
        v, f = _subdivide(v, f)
        v = v / np.linalg.norm(v, axis=1, keepdims=True)
    return SurfaceMesh(radius * v, f)


def generate_ellipsoid(semiaxes: Sequence[float], refinement: int = 0) -> SurfaceMesh:
    """Icosphere stretched along the coordinate axes.

    Normals are recomputed from the mapped triangles.
    """
    axes = np.asarray(semiaxes, dtype=float)
    if axes.shape != (3,) or np.any(axes <= 0):
        raise ValueError(f"semiaxes must be three positive lengths, got {semiaxes}")
    unit = generate_sphere(1.0, refinement)
    return SurfaceMesh(unit.vertices * axes[None, :], unit.triangles)


def generate_box(sides: Sequence[float] = (1.0, 1.0, 1.0), divisions: int = 4) -> SurfaceMesh:
    """Axis-aligned box centred at the origin, each face split into
    ``divisions**2`` squares of two triangles."""
    sides = np.asarray(sides, dtype=float)
    if sides.shape != (3,) or np.any(sides <= 0):
        raise ValueError(f"sides must be three positive lengths, got {sides}")
    if divisions < 1:
        raise ValueError("divisions must be >= 1")
    n = divisions
    s = np.linspace(-0.5, 0.5, n + 1)
    verts: list[np.ndarray] = []
    faces: list[np.ndarray] = []
    for axis in range(3):
        for sign in (-1.0, 1.0):
            u_ax, v_ax = [a for a in range(3) if a != axis]
            uu, vv = np.meshgrid(s, s, indexing="ij")
            pts = np.zeros((n + 1, n + 1, 3))
            pts[..., axis] = 0.5 * sign
            pts[..., u_ax] = uu
            pts[..., v_ax] = vv
            base = sum(len(x) for x in verts)
            idx = base + np.arange((n + 1) ** 2).reshape(n + 1, n + 1)
            a = idx[:-1, :-1].ravel()
            b = idx[1:, :-1].ravel()
            c = idx[1:, 1:].ravel()
            d = idx[:-1, 1:].ravel()
            quad = np.concatenate([np.stack([a, b, c], 1), np.stack([a, c, d], 1)])
            # (u, v, axis) is right-handed only for one cyclic ordering
            e_u, e_v = np.eye(3)[u_ax], np.eye(3)[v_ax]
            if np.dot(np.cross(e_u, e_v), np.eye(3)[axis]) * sign < 0:
                quad = quad[:, ::-1]
            verts.append(pts.reshape(-1, 3))
            faces.append(quad)
    v = np.vstack(verts)
    f = np.vstack(faces)
    # weld duplicated edge vertices
    key = np.round(v * 2 * n).astype(np.int64)
    _, first, inverse = np.unique(key, axis=0, return_index=True, return_inverse=True)
    v = v[first] * sides[None, :]
    f = inverse.reshape(-1)[f]
    return SurfaceMesh(v, f)


# ---------------------------------------------------------------------------
# OFF-style mesh files
# ---------------------------------------------------------------------------


def _tokens(text: str):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line.split()


def parse_off(text: str) -> SurfaceMesh:
    """Parse OFF text into a validated, outward-oriented mesh."""
    lines = list(_tokens(text))
    if not lines or lines[0][1][0] != "OFF":
        raise MeshError("line 1: expected 'OFF' header")
    head = lines[0][1][1:]
    pos = 1
    if not head:
        if len(lines) < 2:
            raise MeshError("missing counts line")
        lineno, head = lines[1]
        pos = 2
    try:
        nv, nt = int(head[0]), int(head[1])
    except (IndexError, ValueError) as exc:
        raise MeshError(f"line {lines[pos - 1][0]}: bad counts {head}") from exc
    if len(lines) < pos + nv + nt:
        raise MeshError(f"expected {nv} vertices and {nt} faces, file is truncated")
    verts = np.empty((nv, 3))
    for i in range(nv):
        lineno, tok = lines[pos + i]
        try:
            verts[i] = [float(x) for x in tok[:3]]
        except ValueError as exc:
            raise MeshError(f"line {lineno}: bad vertex {tok}") from exc
        if len(tok) < 3:
            raise MeshError(f"line {lineno}: vertex needs 3 coordinates")
    tris = np.empty((nt, 3), dtype=np.int64)
    for i in range(nt):
        lineno, tok = lines[pos + nv + i]
        if tok[0] != "3" or len(tok) < 4:
            raise MeshError(f"line {lineno}: only triangular faces '3 i j k' are supported")
        try:
            tris[i] = [int(x) for x in tok[1:4]]
        except ValueError as exc:
            raise MeshError(f"line {lineno}: bad face {tok}") from exc
        if tris[i].min() < 0 or tris[i].max() >= nv:
            raise MeshError(f"line {lineno}: vertex index out of range")
    check_topology(tris)
    mesh = SurfaceMesh(verts, tris)
    if mesh.volume < 0:
        logger.info("reversing inward-oriented mesh")
        mesh = SurfaceMesh(verts, tris[:, ::-1])
    mesh.validate()
    return mesh


def load_mesh(path: Union[str, Path]) -> SurfaceMesh:
    """Read an OFF-style mesh file (see :func:`parse_off`)."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise MeshError(f"{path}: {exc}") from exc
    try:
        return parse_off(text)
    except MeshError as exc:
        raise MeshError(f"{path}: {exc}") from exc


def format_off(mesh: SurfaceMesh) -> str:
    out = ["OFF", f"{len(mesh.vertices)} {mesh.n_triangles} 0"]
    out += [" ".join(f"{c:.17g}" for c in v) for v in mesh.vertices]
    out += ["3 " + " ".join(str(int(i)) for i in t) for t in mesh.triangles]
    return "\n".join(out) + "\n"


def save_mesh(mesh: SurfaceMesh, path: Union[str, Path]) -> None:
    Path(path).write_text(format_off(mesh))


# ---------------------------------------------------------------------------
# Exact potential of a uniform flat triangle
# ---------------------------------------------------------------------------


def triangle_potential(points: np.ndarray, corners: np.ndarray, normals: Optional[np.ndarray] = None) -> np.ndarray:
    """Integral of ``1/|x - y|`` over flat triangles for observation points x.

    ``points`` has shape (P, 3) and ``corners`` shape (P, 3, 3); both are
    paired element-wise. Valid for points on or off the triangle plane.
    """
    x = np.asarray(points, dtype=float)
    c = np.asarray(corners, dtype=float)
    if normals is None:
        nrm = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
        nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    else:
        nrm = normals
    d = np.einsum("pi,pi->p", x - c[:, 0], nrm)
    w0 = np.abs(d)
    total = np.zeros(len(x))
    for i in range(3):
        a = c[:, i]
        b = c[:, (i + 1) % 3]
        edge = b - a
        length = np.linalg.norm(edge, axis=1)
        lhat = edge / length[:, None]
        uhat = np.cross(lhat, nrm)
        s_minus = np.einsum("pi,pi->p", a - x, lhat)
        s_plus = s_minus + length
        t0 = np.einsum("pi,pi->p", a - x, uhat)
        r_minus = np.linalg.norm(x - a, axis=1)
        r_plus = np.linalg.norm(x - b, axis=1)
        r0sq = t0 * t0 + d * d
        forward = s_minus + s_plus >= 0.0
        with np.errstate(divide="ignore", invalid="ignore"):
            num = np.where(forward, r_plus + s_plus, r_minus - s_minus)
            den = np.where(forward, r_minus + s_minus, r_plus - s_plus)
            log_term = np.log(num / den)
            ang = np.arctan(t0 * s_plus / (r0sq + w0 * r_plus)) - np.arctan(t0 * s_minus / (r0sq + w0 * r_minus))
        on_line = np.abs(t0) <= 1e-14 * length
        log_term = np.where(on_line, 0.0, log_term)
        ang = np.where(on_line | ~np.isfinite(ang), 0.0, ang)
        total += t0 * log_term - w0 * ang
    return total


# ---------------------------------------------------------------------------
# Assembled boundary operators
# ---------------------------------------------------------------------------


def _near_pairs(mesh: SurfaceMesh, near_factor: float) -> tuple[np.ndarray, np.ndarray]:
    """All ordered (i, j) triangle pairs, i != j, with centroid distance below
    ``near_factor`` times the longest edge."""
    tree = cKDTree(mesh.centroids)
    pairs = tree.query_pairs(near_factor * mesh.max_edge, output_type="ndarray")
    if len(pairs) == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    i = np.concatenate([pairs[:, 0], pairs[:, 1]])
    j = np.concatenate([pairs[:, 1], pairs[:, 0]])
    return i, j


def _far_newton(targets: np.ndarray, sources: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Dense ``weights_j / |t_i - s_j|`` with the diagonal left at zero."""
    n = len(targets)
    out = np.empty((n, len(sources)))
    for start in range(0, n, _ROW_CHUNK):
        stop = min(n, start + _ROW_CHUNK)
        r = np.linalg.norm(targets[start:stop, None, :] - sources[None, :, :], axis=2)
        with np.errstate(divide="ignore"):
            block = weights[None, :] / r
        block[~np.isfinite(block)] = 0.0
        out[start:stop] = block
    return out


def collocation_single_layer(mesh: SurfaceMesh, near_factor: float = 2.0) -> np.ndarray:
    """Matrix ``P_ij = int_{T_j} dy / |c_i - y|`` at triangle centroids.

    Self and near entries are exact; far entries use the centroid rule.
    """
    c = mesh.centroids
    mat = _far_newton(c, c, mesh.areas)
    idx = np.arange(mesh.n_triangles)
    ni, nj = _near_pairs(mesh, near_factor)
    ii = np.concatenate([idx, ni])
    jj = np.concatenate([idx, nj])
    mat[ii, jj] = triangle_potential(c[ii], mesh.corners[jj], mesh.normals[jj])
    return mat


def galerkin_single_layer(mesh: SurfaceMesh, rule: RuleName = "centroid", near_factor: float = 2.0) -> np.ndarray:
    """Matrix ``W_ij = int_{T_i} int_{T_j} ds dt / |s - t|``.

    Near pairs (including i == j) integrate the inner integral exactly and the
    outer one with a 7-point rule; remaining pairs use ``rule`` on both sides.
    """
    quad = mesh.quadrature(rule)
    nt, nq = quad.weights.shape
    if nq == 1:
        c = quad.nodes[:, 0]
        mat = _far_newton(c, c, mesh.areas) * mesh.areas[:, None]
    else:
        pts = quad.nodes.reshape(-1, 3)
        w = quad.weights.reshape(-1)
        mat = np.zeros((nt, nt))
        for start in range(0, nt, _ROW_CHUNK // nq + 1):
            stop = min(nt, start + _ROW_CHUNK // nq + 1)
            t = quad.nodes[start:stop].reshape(-1, 3)
            r = np.linalg.norm(t[:, None, :] - pts[None, :, :], axis=2)
            with np.errstate(divide="ignore"):
                k = 1.0 / r
            k[~np.isfinite(k)] = 0.0
            k = k * w[None, :] * quad.weights[start:stop].reshape(-1)[:, None]
            mat[start:stop] = k.reshape(stop - start, nq, nt, nq).sum(axis=(1, 3))
    idx = np.arange(nt)
    ni, nj = _near_pairs(mesh, near_factor)
    ii = np.concatenate([idx, ni])
    jj = np.concatenate([idx, nj])
    fine = mesh.quadrature("7-point")
    q7 = fine.nodes.shape[1]
    outer = fine.nodes[ii].reshape(-1, 3)
    corners = np.repeat(mesh.corners[jj], q7, axis=0)
    normals = np.repeat(mesh.normals[jj], q7, axis=0)
    pot = triangle_potential(outer, corners, normals).reshape(-1, q7)
    mat[ii, jj] = np.sum(pot * fine.weights[ii], axis=1)
    return mat


def solid_angle(points: np.ndarray, corners: np.ndarray) -> np.ndarray:
    """Signed solid angle of flat triangles seen from ``points``.

    Positive when the triangle's right-handed normal points away from the
    observer. Element-wise over (P, 3) points and (P, 3, 3) corners.
    """
    r = corners - points[:, None, :]
    n = np.linalg.norm(r, axis=2)
    r1, r2, r3 = r[:, 0], r[:, 1], r[:, 2]
    num = np.einsum("pi,pi->p", r1, np.cross(r2, r3))
    den = (
        n[:, 0] * n[:, 1] * n[:, 2]
        + np.einsum("pi,pi->p", r1, r2) * n[:, 2]
        + np.einsum("pi,pi->p", r1, r3) * n[:, 1]
        + np.einsum("pi,pi->p", r2, r3) * n[:, 0]
    )
    return 2.0 * np.arctan2(num, den)


def double_layer_matrix(mesh: SurfaceMesh) -> np.ndarray:
    """Collocation matrix ``D_ij = int_{T_j} d/dN_s (1/|c_i - s|) ds``.

    The derivative acts on the integration variable, so each entry is minus
    the solid angle of triangle ``j`` seen from centroid ``i`` and is exact.
    On a closed surface every row sums to ``-2 pi``.
    """
    c = mesh.centroids
    corners = mesh.corners
    nt = mesh.n_triangles
    mat = np.empty((nt, nt))
    rows = max(1, _ROW_CHUNK * 64 // max(nt, 1))
    for start in range(0, nt, rows):
        stop = min(nt, start + rows)
        pts = np.repeat(c[start:stop], nt, axis=0)
        tri = np.tile(corners, (stop - start, 1, 1))
        mat[start:stop] = -solid_angle(pts, tri).reshape(stop - start, nt)
    np.fill_diagonal(mat, 0.0)
    return mat


def double_surface_integral(
    mesh: SurfaceMesh,
    kernel: KernelKind,
    p: Union[int, str],
    q: Union[int, str],
    rule: RuleName = "centroid",
) -> float:
    """``int int N_p(s) N_q(t) K(s, t) ds dt`` over the mesh.

    ``kernel="newton"`` uses ``K = 1/|s - t|``; ``"normal-derivative"`` uses
    ``K = d/dN_t (1/|s - t|)``.
    """
    p = _AXES.get(p, p) if isinstance(p, str) else p
    q = _AXES.get(q, q) if isinstance(q, str) else q
    if kernel == "newton":
        mat = galerkin_single_layer(mesh, rule=rule)
        return float(mesh.normals[:, p] @ mat @ mesh.normals[:, q])
    if kernel == "normal-derivative":
        # int N_q(t) d/dN_t int N_p(s)/r ds dt == int N_p(s) (D N_q)(s) ds
        mat = double_layer_matrix(mesh)
        return float((mesh.normals[:, p] * mesh.areas) @ mat @ mesh.normals[:, q])
    raise ValueError(f"unknown kernel {kernel!r}")
