"""Triangular meshes of half-disks, disks and graph domains.

Meshes are generated with Triangle (quality bound 20°).  Vertices Triangle
inserts on boundary segments are projected back onto the exact curve, so
boundary vertices sit exactly on the arc, on ``y = 0`` or on the graph.
Half-disks are built from a quarter disk mirrored across ``x = 0`` and disks
from the half-disk mirrored across ``y = 0``; both mirror symmetries are exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import triangle
from scipy.spatial import cKDTree

from .geometry import FullBall, GraphDomain, HalfBall

__all__ = ["Mesh", "MeshError", "build_mesh", "mirror_mesh", "save_mesh", "load_mesh"]

FLAT, ARC, OUTER = "flat", "arc", "outer"
MIN_TRIANGLES = 50


class MeshError(ValueError):
    pass


@dataclass
class Mesh:
    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    edge_tags: np.ndarray
    h: float
    radius: float = 1.0
    kind: str = "half_ball"
    # full-ball meshes: index of the image of each vertex under x_d -> -x_d
    mirror: np.ndarray | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def corners(self):
        v = self.vertices[self.triangles]
        return v[:, 0], v[:, 1], v[:, 2]

    def signed_areas(self) -> np.ndarray:
        a, b, c = self.corners()
        return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))

    @property
    def areas(self) -> np.ndarray:
        if "areas" not in self._cache:
            self._cache["areas"] = np.abs(self.signed_areas())
        return self._cache["areas"]

    @property
    def gradients(self) -> np.ndarray:
        """Gradients of the three barycentric functions per triangle, ``(m, 3, 2)``."""
        if "grads" not in self._cache:
            a, b, c = self.corners()
            area2 = 2.0 * self.signed_areas()
            g = np.empty((self.n_triangles, 3, 2))
            for k, (p, q) in enumerate(((b, c), (c, a), (a, b))):
                g[:, k, 0] = (p[:, 1] - q[:, 1]) / area2
                g[:, k, 1] = (q[:, 0] - p[:, 0]) / area2
            self._cache["grads"] = g
        return self._cache["grads"]

    def angles(self) -> np.ndarray:
        v = self.vertices[self.triangles]
        out = np.empty((self.n_triangles, 3))
        for k in range(3):
            p, q, r = v[:, k], v[:, (k + 1) % 3], v[:, (k + 2) % 3]
            u, w = q - p, r - p
            cosang = np.einsum("ij,ij->i", u, w) / (np.linalg.norm(u, axis=1) * np.linalg.norm(w, axis=1))
            out[:, k] = np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0)))
        return out

    def min_angle(self) -> float:
        return float(self.angles().min())

    def edges_with(self, tag: str) -> np.ndarray:
        return self.boundary_edges[self.edge_tags == tag]

    def has_tag(self, tag: str) -> bool:
        return bool(np.any(self.edge_tags == tag))

    def boundary_vertices(self, tag: str | None = None) -> np.ndarray:
        edges = self.boundary_edges if tag is None else self.edges_with(tag)
        return np.unique(edges.ravel())

    def edge_triangles(self, edges: np.ndarray) -> np.ndarray:
        """Index of the (unique) triangle adjacent to each boundary edge."""
        lookup = self._edge_lookup()
        out = np.empty(len(edges), dtype=int)
        for k, (i, j) in enumerate(edges):
            out[k] = lookup[(min(i, j), max(i, j))]
        return out

    def _edge_lookup(self) -> dict:
        if "edge_lookup" not in self._cache:
            lookup = {}
            for t, tri in enumerate(self.triangles):
                for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
                    lookup.setdefault((min(a, b), max(a, b)), t)
            self._cache["edge_lookup"] = lookup
        return self._cache["edge_lookup"]

    def outward_normals(self, edges: np.ndarray) -> np.ndarray:
        """Unit outward normals of boundary edges."""
        p, q = self.vertices[edges[:, 0]], self.vertices[edges[:, 1]]
        t = q - p
        n = np.c_[t[:, 1], -t[:, 0]]
        n /= np.linalg.norm(n, axis=1)[:, None]
        centroid = self.vertices[self.triangles[self.edge_triangles(edges)]].mean(axis=1)
        mid = 0.5 * (p + q)
        flip = np.einsum("ij,ij->i", n, mid - centroid) < 0
        n[flip] *= -1.0
        return n

    def lumped_mass(self) -> np.ndarray:
        m = np.zeros(self.n_vertices)
        np.add.at(m, self.triangles.ravel(), np.repeat(self.areas / 3.0, 3))
        return m

    # point location -----------------------------------------------------

    def locate(self, points, k: int = 16):
        """Containing triangle and barycentric coordinates of each point.

        Points outside the mesh (e.g. between a polygonal arc and the true
        circle) are assigned to the nearest candidate triangle and evaluated
        by linear extrapolation.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if "kdtree" not in self._cache:
            cent = self.vertices[self.triangles].mean(axis=1)
            self._cache["kdtree"] = cKDTree(cent)
        tree = self._cache["kdtree"]
        tri = np.full(len(pts), -1)
        bary = np.zeros((len(pts), 3))
        todo = np.arange(len(pts))
        for kk in (min(k, self.n_triangles), min(64, self.n_triangles)):
            if len(todo) == 0:
                break
            _, cand = tree.query(pts[todo], k=kk)
            cand = cand.reshape(len(todo), kk)
            lam = self._bary(pts[todo], cand)
            score = lam.min(axis=2)
            inside = score >= -1e-12
            has = inside.any(axis=1)
            first = np.argmax(inside, axis=1)
            best = np.where(has, first, np.argmax(score, axis=1))
            rows = np.arange(len(todo))
            sel = has if kk < min(64, self.n_triangles) else np.ones(len(todo), dtype=bool)
            tri[todo[sel]] = cand[rows[sel], best[sel]]
            bary[todo[sel]] = lam[rows[sel], best[sel]]
            todo = todo[~sel]
        return tri, bary

    def _bary(self, pts, cand):
        v = self.vertices[self.triangles[cand]]  # (n, k, 3, 2)
        a, b, c = v[..., 0, :], v[..., 1, :], v[..., 2, :]
        det = (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - (b[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0])
        px = pts[:, None, 0] - a[..., 0]
        py = pts[:, None, 1] - a[..., 1]
        l1 = (px * (c[..., 1] - a[..., 1]) - py * (c[..., 0] - a[..., 0])) / det
        l2 = (py * (b[..., 0] - a[..., 0]) - px * (b[..., 1] - a[..., 1])) / det
        return np.stack([1.0 - l1 - l2, l1, l2], axis=-1)


# ---------------------------------------------------------------------------
# construction


def size_function(h: float, radius: float, grading: float | None):
    """Target element size ``h (|x|/R)^(g-1)`` clamped below by ``h²``."""
    if grading is None or grading == 1.0:
        return lambda p: np.full(len(np.atleast_2d(p)), h)
    g = float(grading)

    def hloc(p):
        rr = np.linalg.norm(np.atleast_2d(p), axis=1) / radius
        return np.maximum(h * rr ** (g - 1.0), h * h)

    return hloc


def _graded_points(length: float, hloc_1d, breaks=()) -> np.ndarray:
    """Abscissae in ``[0, length]`` starting at 0, spaced by the local size."""
    xs = [0.0]
    while True:
        step = float(hloc_1d(xs[-1] + 0.5 * hloc_1d(xs[-1])))
        nxt = xs[-1] + step
        if nxt >= length - 0.5 * step:
            break
        xs.append(nxt)
    xs.append(length)
    xs = np.array(xs)
    for b in breaks:
        if 0 < b < length:
            hb = float(hloc_1d(b))
            xs = xs[np.abs(xs - b) > 0.4 * hb]
            xs = np.sort(np.append(xs, b))
    return xs


def _triangulate(vertices, segments, markers, hloc, max_iter: int = 12):
    area_of = lambda s: np.sqrt(3.0) / 4.0 * s * s
    base = dict(vertices=vertices, segments=segments, segment_markers=markers)
    h_max = float(np.max(hloc(vertices)))
    out = triangle.triangulate(base, f"pq20Qa{area_of(h_max):.17g}")
    for _ in range(max_iter):
        v, t = out["vertices"], out["triangles"]
        cent = v[t].mean(axis=1)
        target = area_of(hloc(cent))
        a, b, c = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
        area = 0.5 * np.abs((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))
        if np.all(area <= 1.05 * target):
            break
        out["triangle_max_area"] = np.minimum(target, area)
        out = triangle.triangulate(out, "rpq20Qa")
    return out


def _segment_vertices(out, marker: int) -> np.ndarray:
    segs = out["segments"][out["segment_markers"].ravel() == marker]
    return np.unique(segs.ravel())


def _orient(vertices, tris):
    a, b, c = vertices[tris[:, 0]], vertices[tris[:, 1]], vertices[tris[:, 2]]
    sa = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    tris = tris.copy()
    neg = sa < 0
    tris[neg] = tris[neg][:, [0, 2, 1]]
    return tris


def _mirror(vertices, tris, edges, tags, axis: int):
    """Reflect a mesh across ``x_axis = 0`` and glue along the mirror line."""
    on_line = vertices[:, axis] == 0.0
    n = len(vertices)
    image = np.arange(n)
    off = np.flatnonzero(~on_line)
    image[off] = n + np.arange(len(off))
    mv = vertices[off].copy()
    mv[:, axis] *= -1.0
    new_vertices = np.vstack([vertices, mv])
    new_tris = np.vstack([tris, image[tris][:, [0, 2, 1]]])
    new_edges = np.vstack([edges, image[edges]])
    new_tags = np.concatenate([tags, tags])
    return new_vertices, new_tris, new_edges, new_tags, image


def _quarter_disk(R: float, h: float, hloc, breaks=()):
    hl1 = lambda s: float(hloc(np.array([[s, 0.0]]))[0])
    xs = _graded_points(R, hl1, breaks)
    n_arc = max(int(np.ceil(0.5 * np.pi * R / h)), 2)
    th = np.linspace(0.0, 0.5 * np.pi, n_arc + 1)
    flat = np.c_[xs, np.zeros_like(xs)]
    arc = np.c_[R * np.cos(th[1:-1]), R * np.sin(th[1:-1])]
    axis = np.c_[np.zeros_like(xs), xs][::-1]
    axis[0] = [0.0, R]
    verts = np.vstack([flat, arc, axis[:-1]])
    # polygon order: origin -> (R,0) -> arc -> (0,R) -> origin
    nv = len(verts)
    segs = np.c_[np.arange(nv), (np.arange(nv) + 1) % nv]
    markers = np.concatenate([
        np.full(len(flat) - 1, 1),
        np.full(len(arc) + 1, 2),
        np.full(len(axis) - 1, 3),
    ])
    # exact values on the boundary
    verts[len(flat) - 1] = [R, 0.0]
    verts[len(flat) + len(arc)] = [0.0, R]
    return verts, segs, markers


def _tag_edges(out, keep: dict[int, str]):
    segs = out["segments"]
    marks = out["segment_markers"].ravel()
    sel = np.isin(marks, list(keep))
    tags = np.array([keep[m] for m in marks[sel]], dtype=object)
    return segs[sel], tags


def _half_disk(R: float, h: float, grading, breaks=()):
    hloc = size_function(h, R, grading)
    verts, segs, markers = _quarter_disk(R, h, hloc, breaks)
    out = _triangulate(verts, segs, markers, hloc)
    v = out["vertices"].copy()
    arc = _segment_vertices(out, 2)
    v[arc] *= R / np.linalg.norm(v[arc], axis=1)[:, None]
    v[_segment_vertices(out, 1), 1] = 0.0
    v[_segment_vertices(out, 3), 0] = 0.0
    tris = _orient(v, out["triangles"])
    edges, tags = _tag_edges(out, {1: FLAT, 2: ARC})
    v, tris, edges, tags, _ = _mirror(v, tris, edges, tags, axis=0)
    return v, tris, edges, tags


def _graph_mesh(dom: GraphDomain, h: float, grading):
    R = dom.radius
    hloc = size_function(h, R, grading)
    sL, sR = dom.endpoints()

    def march(end):
        hl1 = lambda s: float(hloc(np.array([[s, dom.graph([s])[0]]]))[0])
        pts = _graded_points(abs(end), hl1)
        return np.sign(end) * pts

    right = march(sR)
    left = march(sL)
    s = np.concatenate([left[::-1], right[1:]])
    s[0], s[-1] = sL, sR
    gx = np.c_[s, dom.graph(s)]
    gx[len(left) - 1] = [0.0, 0.0]
    aR = np.arctan2(gx[-1, 1], gx[-1, 0])
    aL = np.arctan2(gx[0, 1], gx[0, 0])
    n_arc = max(int(np.ceil((aL - aR) * R / h)), 3)
    th = np.linspace(aR, aL, n_arc + 1)[1:-1]
    arc = np.c_[R * np.cos(th), R * np.sin(th)]
    verts = np.vstack([gx, arc])
    nv = len(verts)
    segs = np.c_[np.arange(nv), (np.arange(nv) + 1) % nv]
    markers = np.concatenate([np.full(len(gx) - 1, 1), np.full(len(arc) + 1, 2)])
    out = _triangulate(verts, segs, markers, hloc)
    v = out["vertices"].copy()
    arc_v = _segment_vertices(out, 2)
    v[arc_v] *= R / np.linalg.norm(v[arc_v], axis=1)[:, None]
    gv = _segment_vertices(out, 1)
    v[gv, 1] = dom.graph(v[gv, 0])
    tris = _orient(v, out["triangles"])
    edges, tags = _tag_edges(out, {1: FLAT, 2: ARC})
    return v, tris, edges, tags


def _full_from_half(v, t, e, tags):
    v, t, e, tags, image = _mirror(v, t, e, tags, axis=1)
    keep = tags != FLAT
    e, tags = e[keep], np.full(int(keep.sum()), OUTER, dtype=object)
    n = len(image)
    mirror = np.empty(len(v), dtype=int)
    mirror[:n] = image
    mirror[image] = np.arange(n)
    return v, t, e, tags, mirror


def mirror_mesh(half: Mesh) -> Mesh:
    """Full-ball mesh from a half-ball mesh by reflection across ``x_d = 0``.

    The first ``half.n_vertices`` vertices keep their indices; ``mirror``
    maps every vertex to its reflection.
    """
    if half.kind != "half_ball":
        raise MeshError(f"can only mirror a half-ball mesh, got {half.kind!r}")
    v, t, e, tags, mirror = _full_from_half(half.vertices, half.triangles,
                                            half.boundary_edges, half.edge_tags)
    return Mesh(np.ascontiguousarray(v), np.ascontiguousarray(t), np.ascontiguousarray(e),
                np.asarray(tags, dtype=object), h=half.h, radius=half.radius,
                kind="full_ball", mirror=mirror)


def build_mesh(domain, h: float, grading: float | None = None, breaks=()) -> Mesh:
    """Mesh a :class:`HalfBall`, :class:`FullBall` or :class:`GraphDomain` (d=2).

    ``grading`` in ``[1, 3]`` refines toward the origin; ``breaks`` lists
    abscissae ``b > 0`` such that ``±b`` become vertices of the flat boundary.
    """
    if not h > 0:
        raise MeshError(f"mesh size must be positive, got {h}")
    if grading is not None and not 1.0 <= grading <= 3.0:
        raise MeshError(f"grading exponent must lie in [1, 3], got {grading}")
    if getattr(domain, "dim", 2) != 2:
        raise MeshError("meshes are two-dimensional")
    R = float(domain.radius)
    if h > R:
        raise MeshError(f"h={h} too large to resolve a domain of radius {R}")
    mirror = None
    if isinstance(domain, HalfBall):
        v, t, e, tags = _half_disk(R, h, grading, breaks)
        kind = "half_ball"
    elif isinstance(domain, FullBall):
        v, t, e, tags = _half_disk(R, h, grading, breaks)
        v, t, e, tags, mirror = _full_from_half(v, t, e, tags)
        kind = "full_ball"
    elif isinstance(domain, GraphDomain):
        v, t, e, tags = _graph_mesh(domain, h, grading)
        kind = "graph"
    else:
        raise MeshError(f"cannot mesh {type(domain).__name__}")
    if len(t) < MIN_TRIANGLES:
        raise MeshError(f"h={h} too large: only {len(t)} triangles (need {MIN_TRIANGLES})")
    return Mesh(np.ascontiguousarray(v, dtype=float), np.ascontiguousarray(t, dtype=int),
                np.ascontiguousarray(e, dtype=int), np.asarray(tags, dtype=object),
                h=float(h), radius=R, kind=kind, mirror=mirror)


# ---------------------------------------------------------------------------
# plain-text exchange format


def save_mesh(mesh: Mesh, path) -> None:
    lines = [f"# ucplab mesh kind={mesh.kind} h={mesh.h!r} radius={mesh.radius!r}"]
    lines += [f"v {x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    lines += [f"t {i} {j} {k}" for i, j, k in mesh.triangles.tolist()]
    lines += [f"e {i} {j} {tag}" for (i, j), tag in zip(mesh.boundary_edges.tolist(), mesh.edge_tags)]
    Path(path).write_text("\n".join(lines) + "\n")


def load_mesh(path) -> Mesh:
    verts, tris, edges, tags = [], [], [], []
    meta = {"kind": "half_ball", "h": "0.0", "radius": "1.0"}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "#":
            for tok in parts[1:]:
                if "=" in tok:
                    k, val = tok.split("=", 1)
                    meta[k] = val
            continue
        try:
            if parts[0] == "v":
                verts.append((float(parts[1]), float(parts[2])))
            elif parts[0] == "t":
                tris.append(tuple(int(p) for p in parts[1:4]))
            elif parts[0] == "e":
                edges.append((int(parts[1]), int(parts[2])))
                tags.append(parts[3])
            else:
                raise MeshError(f"line {lineno}: unknown record {parts[0]!r}")
        except (IndexError, ValueError) as exc:
            raise MeshError(f"line {lineno}: malformed record {line!r}") from exc
    v = np.array(verts, dtype=float)
    mirror = None
    if meta["kind"] == "full_ball":
        tree = cKDTree(v)
        _, mirror = tree.query(v * np.array([1.0, -1.0]))
    return Mesh(v, np.array(tris, dtype=int), np.array(edges, dtype=int).reshape(-1, 2),
                np.array(tags, dtype=object), h=float(meta["h"]), radius=float(meta["radius"]),
                kind=meta["kind"], mirror=mirror)
