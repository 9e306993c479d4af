"""Centroidal-Voronoi polygonal mesh generators for the experiments.

Rectangular patches are tiled by Lloyd-relaxed Voronoi cells of seeds
mirrored across the patch sides, which clips cells to the rectangle
exactly and keeps every cell convex. Composite domains (square or
polygonal-disc inclusion) are assembled from per-patch tilings merged with
hanging nodes along the seams, which is what produces the short interface
edges these meshes are meant to exercise.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import Voronoi

from .exceptions import MeshError
from .mesh import (PolygonalMesh, _compress_loop, _dedup_vertices,
                   build_rect_grid, merge_many, retag_boundary)
from .monomials import polygon_area

# Calibrated so the realized h (largest cell diameter after relaxation)
# lands within a few percent above the requested target.
_DIAM_FACTOR = 1.8


def _seed_count(area: float, target_h: float) -> int:
    return max(3, int(round(area * (_DIAM_FACTOR / target_h) ** 2)))


def _mirrored(points, xlim, ylim):
    x0, x1 = xlim
    y0, y1 = ylim
    refl = [points.copy() for _ in range(4)]
    refl[0][:, 0] = 2 * x0 - points[:, 0]
    refl[1][:, 0] = 2 * x1 - points[:, 0]
    refl[2][:, 1] = 2 * y0 - points[:, 1]
    refl[3][:, 1] = 2 * y1 - points[:, 1]
    return np.vstack([points] + refl)


def _bounded_regions(vor: Voronoi, n: int):
    regions = []
    for i in range(n):
        region = vor.regions[vor.point_region[i]]
        if -1 in region or len(region) < 3:
            raise MeshError("unbounded Voronoi region for an interior seed")
        regions.append(region)
    return regions


def lloyd_voronoi_rectangle(xlim, ylim, target_h: float, rng,
                            iterations: int = 80, tag: str = "P"
                            ) -> PolygonalMesh:
    """Lloyd-relaxed Voronoi tiling of a rectangle with convex cells."""
    x0, x1 = map(float, xlim)
    y0, y1 = map(float, ylim)
    area = (x1 - x0) * (y1 - y0)
    n = _seed_count(area, target_h)
    pts = np.column_stack([rng.uniform(x0, x1, n), rng.uniform(y0, y1, n)])
    for _ in range(iterations):
        vor = Voronoi(_mirrored(pts, (x0, x1), (y0, y1)))
        regions = _bounded_regions(vor, n)
        for i, region in enumerate(regions):
            poly = vor.vertices[region]
            pts[i] = _poly_centroid(poly)
        pts[:, 0] = np.clip(pts[:, 0], x0, x1)
        pts[:, 1] = np.clip(pts[:, 1], y0, y1)
    vor = Voronoi(_mirrored(pts, (x0, x1), (y0, y1)))
    regions = _bounded_regions(vor, n)
    verts = vor.vertices.copy()
    # snap the mirror-generated boundary vertices exactly onto the rectangle
    snap = 1e-9 * max(x1 - x0, y1 - y0)
    for c, (lo, hi) in ((0, (x0, x1)), (1, (y0, y1))):
        verts[np.abs(verts[:, c] - lo) < snap, c] = lo
        verts[np.abs(verts[:, c] - hi) < snap, c] = hi
    cells = []
    for region in regions:
        cell = np.array(region, dtype=int)
        if polygon_area(verts[cell]) < 0:
            cell = cell[::-1]
        cells.append(cell)
    return _finalize_voronoi(verts, cells, tag, 1e-9 * target_h)


def _finalize_voronoi(verts, cells, tag, snap_tol) -> PolygonalMesh:
    """Drop unused vertices, unify near-duplicates, orient and tag."""
    used = np.unique(np.concatenate(cells))
    remap = -np.ones(len(verts), dtype=int)
    remap[used] = np.arange(len(used))
    verts = verts[used]
    cells = [remap[c] for c in cells]
    verts, remap2 = _dedup_vertices(verts, snap_tol)
    cells = [_compress_loop(remap2[c]) for c in cells]
    if any(len(c) < 3 for c in cells):
        raise MeshError("degenerate Voronoi cell after vertex snapping")
    mesh = PolygonalMesh(verts, cells, [tag] * len(cells))
    retag_boundary(mesh, None)
    return mesh


def _poly_centroid(poly: np.ndarray) -> np.ndarray:
    x, y = poly[:, 0], poly[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    a = cross.sum() / 2.0
    cx = ((x + xn) * cross).sum() / (6 * a)
    cy = ((y + yn) * cross).sum() / (6 * a)
    return np.array([cx, cy])


def square_inclusion_mesh(target_h: float, seed: int = 0,
                          inner=(0.25, 0.75), ratio: float = 2.0,
                          boundary_tagger=None) -> PolygonalMesh:
    """Voronoi mesh of (0,1)^2 with the elastic square `inner`^2 inclusion.

    The poroelastic frame is decomposed into four rectangles tiled at size
    target_h; the inclusion is tiled at target_h/ratio, so the merged
    interface carries hanging nodes and small edges.
    """
    if target_h >= 1.0:
        raise MeshError("target_h must resolve the unit square")
    lo, hi = inner
    if target_h > (hi - lo):
        raise MeshError("target_h larger than the inclusion size")
    rng = np.random.default_rng(seed)
    h_in = target_h / ratio
    pieces = [
        lloyd_voronoi_rectangle((0, 1), (0, lo), target_h, rng, tag="P"),
        lloyd_voronoi_rectangle((0, 1), (hi, 1), target_h, rng, tag="P"),
        lloyd_voronoi_rectangle((0, lo), (lo, hi), target_h, rng, tag="P"),
        lloyd_voronoi_rectangle((hi, 1), (lo, hi), target_h, rng, tag="P"),
        lloyd_voronoi_rectangle((lo, hi), (lo, hi), h_in, rng, tag="E"),
    ]
    mesh = merge_many(pieces)
    retag_boundary(mesh, boundary_tagger)
    return mesh


def disc_inclusion_mesh(target_h: float, seed: int = 0, radius: float = 0.25,
                        center=(0.5, 0.5), ratio: float = 2.0,
                        boundary_tagger=None) -> PolygonalMesh:
    """Voronoi mesh of (0,1)^2 with a polygonal-disc elastic inclusion.

    The circle is approximated by an inscribed regular polygon whose chord
    sagitta stays below target_h^2; cells of the surrounding frame are
    clipped against it, so the interface is the polygon itself.
    """
    import shapely.geometry as geom

    rng = np.random.default_rng(seed)
    h_in = target_h / ratio
    # chord sagitta R(1-cos(theta/2)) <= target_h^2
    theta = 2.0 * np.arccos(max(-1.0, 1.0 - min(0.5, target_h**2 / radius)))
    nseg = max(8, int(np.ceil(2 * np.pi / theta)))
    angles = 2 * np.pi * np.arange(nseg) / nseg
    ring = np.column_stack([center[0] + radius * np.cos(angles),
                            center[1] + radius * np.sin(angles)])
    ngon = geom.Polygon(ring)

    inner = _voronoi_in_polygon(ring, h_in, rng, tag="E")
    frame = _voronoi_frame(ring, ngon, target_h, rng)
    mesh = merge_many([frame, inner])
    retag_boundary(mesh, boundary_tagger)
    return mesh


def _voronoi_in_polygon(ring: np.ndarray, target_h: float, rng, tag: str
                        ) -> PolygonalMesh:
    """Lloyd Voronoi tiling of a convex polygon via edge-line mirroring."""
    import shapely.geometry as geom

    poly = geom.Polygon(ring)
    n = _seed_count(poly.area, target_h)
    minx, miny, maxx, maxy = poly.bounds
    pts = []
    while len(pts) < n:
        cand = np.column_stack([rng.uniform(minx, maxx, 4 * n),
                                rng.uniform(miny, maxy, 4 * n)])
        for p in cand:
            if poly.contains(geom.Point(p)):
                pts.append(p)
                if len(pts) == n:
                    break
    pts = np.array(pts)

    def mirrored(points):
        out = [points]
        m = len(ring)
        for i in range(m):
            p0, p1 = ring[i], ring[(i + 1) % m]
            t = (p1 - p0) / np.hypot(*(p1 - p0))
            nrm = np.array([t[1], -t[0]])
            d = (points - p0) @ nrm
            out.append(points - 2 * d[:, None] * nrm)
        return np.vstack(out)

    for _ in range(80):
        vor = Voronoi(mirrored(pts))
        regions = _bounded_regions(vor, len(pts))
        for i, region in enumerate(regions):
            pts[i] = _poly_centroid(vor.vertices[region])
    vor = Voronoi(mirrored(pts))
    regions = _bounded_regions(vor, len(pts))
    cells = []
    verts = vor.vertices
    for region in regions:
        cell = np.array(region, dtype=int)
        if polygon_area(verts[cell]) < 0:
            cell = cell[::-1]
        cells.append(cell)
    return _finalize_voronoi(verts, cells, tag, 1e-9 * target_h)


def _voronoi_frame(ring: np.ndarray, ngon, target_h: float, rng
                   ) -> PolygonalMesh:
    """Voronoi tiling of (0,1)^2 minus a convex polygon (shapely clipping)."""
    import shapely.geometry as geom

    n = _seed_count(1.0 - ngon.area, target_h)
    pts = []
    while len(pts) < n:
        cand = rng.uniform(0, 1, (4 * n, 2))
        for p in cand:
            if not ngon.buffer(0.3 * target_h).contains(geom.Point(p)):
                pts.append(p)
                if len(pts) == n:
                    break
    pts = np.array(pts)
    for it in range(60):
        vor = Voronoi(_mirrored(pts, (0, 1), (0, 1)))
        regions = _bounded_regions(vor, len(pts))
        for i, region in enumerate(regions):
            cell = geom.Polygon(vor.vertices[region]).difference(ngon)
            if cell.is_empty or cell.geom_type != "Polygon":
                continue
            pts[i] = np.array(cell.centroid.coords[0])
    vor = Voronoi(_mirrored(pts, (0, 1), (0, 1)))
    regions = _bounded_regions(vor, len(pts))
    polys = []
    for region in regions:
        cell = geom.Polygon(vor.vertices[region]).difference(ngon)
        if cell.is_empty:
            continue
        if cell.geom_type == "MultiPolygon":
            polys.extend(list(cell.geoms))
        else:
            polys.append(cell)
    return _mesh_from_shapely(polys, tag="P", snap=1e-9)


def _mesh_from_shapely(polys, tag: str, snap: float) -> PolygonalMesh:
    """Assemble a mesh from loose polygons, unifying vertices by rounding."""
    verts = []
    index: dict[tuple[float, float], int] = {}
    cells = []
    for poly in polys:
        ring = np.array(poly.exterior.coords[:-1])
        if polygon_area(ring) < 0:
            ring = ring[::-1]
        cell = []
        for p in ring:
            key = (round(p[0] / snap), round(p[1] / snap))
            idx = index.get(key)
            if idx is None:
                idx = len(verts)
                verts.append(p)
                index[key] = idx
            cell.append(idx)
        # drop consecutive duplicates from snapping
        cell = [c for j, c in enumerate(cell) if c != cell[(j - 1) % len(cell)]]
        if len(cell) >= 3:
            cells.append(np.array(cell, dtype=int))
    mesh = PolygonalMesh(np.array(verts), cells, [tag] * len(cells))
    retag_boundary(mesh, None)
    return mesh


def two_grid_interface_mesh(n_coarse: int, boundary_tagger=None,
                            p_domain=((0.0, 1.0), (0.0, 1.0)),
                            e_domain=((0.0, 1.0), (1.0, 2.0)),
                            e_refine: float = 4.0 / 3.0) -> PolygonalMesh:
    """Non-matching rectangular subdomain grids merged with hanging nodes.

    The poroelastic patch carries an n x n grid, the elastic patch a finer
    grid (default 4n/3 cells per side), so every interface cell of the
    coarse side picks up hanging nodes.
    """
    n_e = int(round(n_coarse * e_refine))
    mesh_p = build_rect_grid(*p_domain, n_coarse, n_coarse, "P")
    mesh_e = build_rect_grid(*e_domain, n_e, n_e, "E")
    mesh = merge_many([mesh_p, mesh_e])
    retag_boundary(mesh, boundary_tagger)
    return mesh


def mandel_mesh(nx: int = 50, boundary_tagger=None, width: float = 100.0,
                height: float = 40.0, split: float = 20.0) -> PolygonalMesh:
    """Rectangular Mandel-type mesh: poroelastic lower half, elastic upper."""
    ny_p = max(1, int(round(nx * split / width)))
    ny_e = max(1, int(round(nx * (height - split) / width)))
    mesh_p = build_rect_grid((0, width), (0, split), nx, ny_p, "P")
    mesh_e = build_rect_grid((0, width), (split, height), nx, ny_e, "E")
    mesh = merge_many([mesh_p, mesh_e])
    retag_boundary(mesh, boundary_tagger)
    return mesh
