"""Polygonal meshes for the two-subdomain consolidation problem.

A mesh is a flat list of CCW polygonal cells tagged 'P' (poroelastic) or
'E' (elastic). Subdomain meshes are built independently and combined with
`merge_at_interface`, which inserts the union of both traces on every
interface edge, so hanging nodes become ordinary polygon vertices and edge
adjacency across the interface is one-to-one afterwards.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import cKDTree

from .exceptions import InterfaceMismatchError, MeshError
from .monomials import polygon_area, polygon_centroid, polygon_diameter


@dataclass
class PolygonalMesh:
    """Immutable-by-convention polygonal mesh with subdomain and edge tags.

    edge_tags maps canonical boundary-edge keys (v0, v1), v0 < v1, to a
    caller-defined label; interface_edges lists interior edges separating a
    P cell from an E cell.
    """

    vertices: np.ndarray
    cells: list[np.ndarray]
    cell_tags: list[str]
    edge_tags: dict[tuple[int, int], str] = field(default_factory=dict)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        self.cells = [np.asarray(c, dtype=int) for c in self.cells]
        self._build_topology()

    def _build_topology(self):
        edge_cells: dict[tuple[int, int], list[int]] = {}
        for ic, cell in enumerate(self.cells):
            for a, b in zip(cell, np.roll(cell, -1)):
                key = (int(a), int(b)) if a < b else (int(b), int(a))
                edge_cells.setdefault(key, []).append(ic)
        self.edge_cells = edge_cells
        self.boundary_edges = [k for k, cs in edge_cells.items() if len(cs) == 1]
        self.interface_edges = [
            k for k, cs in edge_cells.items()
            if len(cs) == 2 and self.cell_tags[cs[0]] != self.cell_tags[cs[1]]
        ]
        self.cell_diameters = np.array(
            [polygon_diameter(self.vertices[c]) for c in self.cells])

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def h(self) -> float:
        """Mesh size: the largest cell diameter."""
        return float(self.cell_diameters.max())

    def cell_vertices(self, i: int) -> np.ndarray:
        return self.vertices[self.cells[i]]

    def edge_length(self, key: tuple[int, int]) -> float:
        a, b = self.vertices[key[0]], self.vertices[key[1]]
        return float(np.hypot(*(b - a)))

    def boundary_edge_orientation(self, key: tuple[int, int]):
        """Endpoints of a boundary edge ordered so the outward normal is
        (t_y, -t_x) for tangent t, i.e. as the owning CCW cell walks it."""
        (ic,) = self.edge_cells[key]
        cell = self.cells[ic]
        pos = {int(v): p for p, v in enumerate(cell)}
        a, b = key
        if (pos[a] + 1) % len(cell) == pos[b]:
            return a, b
        return b, a

    def validate(self):
        """Check the structural mesh invariants; raise MeshError on failure."""
        for ic, cell in enumerate(self.cells):
            if len(cell) < 3:
                raise MeshError(f"cell {ic} has fewer than 3 vertices")
            if len(set(cell.tolist())) != len(cell):
                raise MeshError(f"cell {ic} repeats a vertex")
            verts = self.vertices[cell]
            if polygon_area(verts) <= 0.0:
                raise MeshError(f"cell {ic} is not CCW with positive area")
            if _self_intersects(verts):
                raise MeshError(f"cell {ic} is self-intersecting")
            d2 = ((verts[:, None, :] - verts[None, :, :]) ** 2).sum(-1)
            np.fill_diagonal(d2, np.inf)
            if np.sqrt(d2.min()) < 1e-12 * self.cell_diameters[ic]:
                raise MeshError(f"cell {ic} has coincident vertices")
        for key, cs in self.edge_cells.items():
            if len(cs) > 2:
                raise MeshError(f"edge {key} shared by more than two cells")
        for key in self.boundary_edges:
            if key not in self.edge_tags:
                raise MeshError(f"boundary edge {key} is untagged")

    def content_hash(self) -> str:
        md = hashlib.sha256()
        md.update(np.ascontiguousarray(self.vertices).tobytes())
        for c, t in zip(self.cells, self.cell_tags):
            md.update(np.ascontiguousarray(c).tobytes())
            md.update(t.encode())
        return md.hexdigest()

    def to_json(self) -> str:
        return json.dumps({
            "vertices": self.vertices.tolist(),
            "cells": [c.tolist() for c in self.cells],
            "cell_tags": self.cell_tags,
            "edge_tags": [[int(a), int(b), t]
                          for (a, b), t in sorted(self.edge_tags.items())],
        })

    @classmethod
    def from_json(cls, text: str) -> "PolygonalMesh":
        data = json.loads(text)
        return cls(
            vertices=np.array(data["vertices"], dtype=float),
            cells=[np.array(c, dtype=int) for c in data["cells"]],
            cell_tags=list(data["cell_tags"]),
            edge_tags={(a, b): t for a, b, t in data["edge_tags"]},
        )


def _self_intersects(verts: np.ndarray) -> bool:
    """Brute-force proper-crossing test between non-adjacent edges."""
    n = len(verts)
    segs = [(verts[i], verts[(i + 1) % n]) for i in range(n)]
    for i in range(n):
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue
            if _segments_cross(*segs[i], *segs[j]):
                return True
    return False


def _segments_cross(a, b, c, d) -> bool:
    def orient(p, q, r):
        return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])

    o1, o2 = orient(a, b, c), orient(a, b, d)
    o3, o4 = orient(c, d, a), orient(c, d, b)
    return (o1 * o2 < 0) and (o3 * o4 < 0)


def build_rect_grid(xlim, ylim, nx: int, ny: int, tag: str,
                    boundary_tagger=None) -> PolygonalMesh:
    """Uniform nx-by-ny quadrilateral grid on [x0,x1]x[y0,y1].

    boundary_tagger(midpoint, outward_normal) -> str assigns edge labels;
    without one, boundary edges get the label 'untagged'.
    """
    x0, x1 = map(float, xlim)
    y0, y1 = map(float, ylim)
    if nx < 1 or ny < 1:
        raise MeshError("grid needs nx, ny >= 1")
    if x1 <= x0 or y1 <= y0:
        raise MeshError("degenerate rectangle")
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    xx, yy = np.meshgrid(xs, ys, indexing="xy")
    verts = np.column_stack([xx.ravel(), yy.ravel()])

    def vid(i, j):
        return j * (nx + 1) + i

    cells = []
    for j in range(ny):
        for i in range(nx):
            cells.append(np.array(
                [vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)]))
    mesh = PolygonalMesh(verts, cells, [tag] * (nx * ny))
    retag_boundary(mesh, boundary_tagger)
    return mesh


def retag_boundary(mesh: PolygonalMesh, tagger) -> None:
    """(Re)assign boundary edge tags with tagger(midpoint, outward_normal)."""
    tags = {}
    for key in mesh.boundary_edges:
        a, b = mesh.boundary_edge_orientation(key)
        p0, p1 = mesh.vertices[a], mesh.vertices[b]
        t = p1 - p0
        nrm = np.array([t[1], -t[0]])
        nrm /= np.hypot(*nrm)
        mid = 0.5 * (p0 + p1)
        tags[key] = tagger(mid, nrm) if tagger is not None else "untagged"
    mesh.edge_tags = tags


def _collinear_overlap(pa0, pa1, pb0, pb1, atol):
    """Parameter interval of segment B on segment A if collinear, else None."""
    da = pa1 - pa0
    la = np.hypot(*da)
    ta = da / la
    for q in (pb0, pb1):
        off = q - pa0
        if abs(off[0] * ta[1] - off[1] * ta[0]) > atol:
            return None
    s0 = float(np.dot(pb0 - pa0, ta) / la)
    s1 = float(np.dot(pb1 - pa0, ta) / la)
    lo, hi = min(s0, s1), max(s0, s1)
    rel = atol / la
    if hi <= rel or lo >= 1.0 - rel:
        return None
    return max(lo, 0.0), min(hi, 1.0)


def merge_at_interface(mesh_a: PolygonalMesh, mesh_b: PolygonalMesh,
                       tol: float = 1e-10) -> PolygonalMesh:
    """Merge two subdomain meshes along their common trace.

    Every boundary edge of one mesh that collinearly overlaps boundary
    edges of the other gets the opposite trace's vertices inserted as
    additional polygon vertices; a geometric gap or overlap beyond `tol`
    (relative to the mesh size) raises InterfaceMismatchError. Cell and
    boundary tags are preserved.
    """
    return merge_many([mesh_a, mesh_b], tol)


def merge_many(meshes: list[PolygonalMesh], tol: float = 1e-10
               ) -> PolygonalMesh:
    """N-way merge of subdomain meshes along their mutually shared traces.

    A boundary edge may be covered jointly by edges of several other pieces
    (relevant when a subdomain is decomposed into multiple patches meeting
    at corners); coverage is validated against the union of all overlaps.
    """
    scale = max(m.h for m in meshes)
    atol = tol * scale
    offsets = np.cumsum([0] + [len(m.vertices) for m in meshes])
    inserts, covered = _plan_splits(meshes, offsets, atol)
    _check_full_coverage(covered, atol, meshes)

    verts = np.vstack([m.vertices for m in meshes])
    cells = []
    cell_tags = []
    for mi, m in enumerate(meshes):
        for c in m.cells:
            cells.append(_split_cell(c, m.vertices, inserts.get(mi, {}),
                                     offsets[mi], verts))
        cell_tags.extend(m.cell_tags)

    verts, remap = _dedup_vertices(verts, atol)
    cells = [_compress_loop(remap[c]) for c in cells]
    merged = PolygonalMesh(verts, cells, cell_tags)

    tags = {}
    tagged_segments = []
    for mi, m in enumerate(meshes):
        for (a, b), t in m.edge_tags.items():
            tagged_segments.append((verts[remap[a + offsets[mi]]],
                                    verts[remap[b + offsets[mi]]], t))
    for key in merged.boundary_edges:
        q0, q1 = verts[key[0]], verts[key[1]]
        for p0, p1, t in tagged_segments:
            if _edge_on_segment(q0, q1, p0, p1, atol):
                tags[key] = t
                break
        else:
            raise InterfaceMismatchError(
                "boundary edge unmatched after merge (trace gap or overlap)")
    merged.edge_tags = tags
    return merged


def _edge_on_segment(q0, q1, p0, p1, atol) -> bool:
    d = p1 - p0
    ln2 = float(d @ d)
    rel = atol / np.sqrt(ln2)
    for q in (q0, q1):
        t = float((q - p0) @ d) / ln2
        if t < -rel or t > 1 + rel:
            return False
        if np.hypot(*(p0 + t * d - q)) > atol:
            return False
    return True


def _plan_splits(meshes, offsets, atol):
    """Opposite-trace vertex indices to insert into each boundary edge.

    Inserted points are referenced by their global index in the stacked
    vertex array, so coordinates stay bit-identical across the interface
    and deduplication is exact.
    """
    inserts: dict[int, dict[tuple[int, int], list[int]]] = {}
    covered: dict[tuple[int, tuple[int, int]], list[tuple[float, float]]] = {}
    nm = len(meshes)
    for ma in range(nm):
        pa = meshes[ma].vertices
        for mb in range(ma + 1, nm):
            pb = meshes[mb].vertices
            for ea in meshes[ma].boundary_edges:
                a0, a1 = pa[ea[0]], pa[ea[1]]
                la = np.hypot(*(a1 - a0))
                for eb in meshes[mb].boundary_edges:
                    b0, b1 = pb[eb[0]], pb[eb[1]]
                    if (min(a0[0], a1[0]) - atol > max(b0[0], b1[0])
                            or min(b0[0], b1[0]) - atol > max(a0[0], a1[0])
                            or min(a0[1], a1[1]) - atol > max(b0[1], b1[1])
                            or min(b0[1], b1[1]) - atol > max(a0[1], a1[1])):
                        continue
                    ov = _collinear_overlap(a0, a1, b0, b1, atol)
                    if ov is None:
                        continue
                    covered.setdefault((ma, ea), []).append(ov)
                    ov_b = _collinear_overlap(b0, b1, a0, a1, atol)
                    if ov_b is not None:
                        covered.setdefault((mb, eb), []).append(ov_b)
                    lb = np.hypot(*(b1 - b0))
                    for qi in eb:
                        t = float(np.dot(pb[qi] - a0, a1 - a0) / (la * la))
                        if atol / la < t < 1 - atol / la:
                            inserts.setdefault(ma, {}).setdefault(
                                ea, []).append(qi + offsets[mb])
                    for qi in ea:
                        t = float(np.dot(pa[qi] - b0, b1 - b0) / (lb * lb))
                        if atol / lb < t < 1 - atol / lb:
                            inserts.setdefault(mb, {}).setdefault(
                                eb, []).append(qi + offsets[ma])
    return inserts, covered


def _check_full_coverage(covered, atol, meshes):
    for (mi, key), intervals in covered.items():
        rel = atol / meshes[mi].edge_length(key)
        pos = 0.0
        for lo, hi in sorted(set(intervals)):
            if abs(lo - pos) > rel:
                raise InterfaceMismatchError(
                    "trace mismatch on an interface edge "
                    f"(gap of relative size {abs(lo - pos):.2e})")
            pos = max(pos, hi)
        if pos < 1.0 - rel:
            raise InterfaceMismatchError(
                "interface edge only partially covered by the opposite trace")


def _split_cell(cell, local_verts, inserts, offset, all_verts) -> np.ndarray:
    out = []
    n = len(cell)
    for i in range(n):
        a, b = int(cell[i]), int(cell[(i + 1) % n])
        key = (a, b) if a < b else (b, a)
        out.append(a + offset)
        extra = inserts.get(key, [])
        if extra:
            pa = local_verts[a]
            extra = sorted(set(extra),
                           key=lambda qi: float(np.hypot(*(all_verts[qi] - pa))))
            out.extend(extra)
    return np.array(out, dtype=int)


def _compress_loop(cell: np.ndarray) -> np.ndarray:
    """Drop consecutive duplicate indices created by vertex snapping."""
    out = [int(cell[0])]
    for v in cell[1:]:
        if int(v) != out[-1]:
            out.append(int(v))
    if len(out) > 1 and out[0] == out[-1]:
        out.pop()
    return np.array(out, dtype=int)


def _dedup_vertices(verts, atol):
    tree = cKDTree(verts)
    pairs = tree.query_pairs(max(atol, 1e-300), output_type="ndarray")
    parent = np.arange(len(verts))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return int(i)

    for a, b in pairs:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    roots = np.array([find(i) for i in range(len(verts))])
    uniq, remap = np.unique(roots, return_inverse=True)
    return verts[uniq].copy(), remap


def subdivide(mesh: PolygonalMesh) -> PolygonalMesh:
    """Uniform polygonal refinement: each n-gon splits into n quadrilaterals
    by connecting edge midpoints to the cell centroid.

    Edge midpoints are shared through canonical edge keys, so the refined
    mesh is conforming; boundary sub-edges inherit their parent's tag, and
    short edges (hanging-node geometry) persist under refinement.
    """
    verts = [mesh.vertices]
    mid_index: dict[tuple[int, int], int] = {}
    next_id = len(mesh.vertices)
    mids = []
    for key in mesh.edge_cells:
        mid_index[key] = next_id
        mids.append(0.5 * (mesh.vertices[key[0]] + mesh.vertices[key[1]]))
        next_id += 1
    centroids = []
    cent_base = next_id
    cells = []
    tags = []
    for ic, cell in enumerate(mesh.cells):
        n = len(cell)
        centroids.append(polygon_centroid(mesh.vertices[cell]))
        cid = cent_base + ic
        for j in range(n):
            v = int(cell[j])
            vn = int(cell[(j + 1) % n])
            vp = int(cell[(j - 1) % n])
            k_next = (v, vn) if v < vn else (vn, v)
            k_prev = (v, vp) if v < vp else (vp, v)
            cells.append(np.array(
                [v, mid_index[k_next], cid, mid_index[k_prev]]))
            tags.append(mesh.cell_tags[ic])
    all_verts = np.vstack([mesh.vertices, np.array(mids),
                           np.array(centroids)])
    fine = PolygonalMesh(all_verts, cells, tags)
    edge_tags = {}
    for (a, b), t in mesh.edge_tags.items():
        m = mid_index[(a, b)]
        for key in ((a, m) if a < m else (m, a), (b, m) if b < m else (m, b)):
            edge_tags[key] = t
    fine.edge_tags = edge_tags
    return fine


@dataclass
class MeshQualityReport:
    """Star-shapedness and short-edge diagnostics per cell."""

    rho: np.ndarray          # kernel inradius / cell diameter
    edge_ratio: np.ndarray   # shortest edge / cell diameter
    min_rho: float
    min_edge_ratio: float

    def violations(self, tol: float) -> np.ndarray:
        """Indices of cells whose rho or edge ratio falls below tol."""
        return np.flatnonzero((self.rho < tol) | (self.edge_ratio < tol))


def _kernel_inradius(verts: np.ndarray) -> float:
    """Radius of the largest disc inside the polygon's kernel (LP).

    For a convex polygon the kernel is the polygon itself, so this is the
    plain inradius; returns 0 for non-star-shaped cells.
    """
    n = len(verts)
    a_ub = []
    b_ub = []
    for i in range(n):
        p0, p1 = verts[i], verts[(i + 1) % n]
        t = p1 - p0
        ln = np.hypot(*t)
        if ln == 0.0:
            continue
        inward = np.array([-t[1], t[0]]) / ln
        # inward.(x - p0) >= r  ->  -inward.x + r <= -inward.p0
        a_ub.append([-inward[0], -inward[1], 1.0])
        b_ub.append(-float(inward @ p0))
    res = linprog(c=[0.0, 0.0, -1.0], A_ub=np.array(a_ub), b_ub=np.array(b_ub),
                  bounds=[(None, None), (None, None), (None, None)],
                  method="highs")
    if not res.success:
        return 0.0
    return max(0.0, float(res.x[2]))


def check_mesh_assumptions(mesh: PolygonalMesh) -> MeshQualityReport:
    """Per-cell star-shapedness radius ratio and shortest-edge ratio."""
    rho = np.empty(mesh.n_cells)
    edge_ratio = np.empty(mesh.n_cells)
    for i, cell in enumerate(mesh.cells):
        verts = mesh.vertices[cell]
        hk = mesh.cell_diameters[i]
        rho[i] = _kernel_inradius(verts) / hk
        lengths = np.hypot(*(np.roll(verts, -1, axis=0) - verts).T)
        edge_ratio[i] = lengths.min() / hk
    return MeshQualityReport(rho=rho, edge_ratio=edge_ratio,
                             min_rho=float(rho.min()),
                             min_edge_ratio=float(edge_ratio.min()))
