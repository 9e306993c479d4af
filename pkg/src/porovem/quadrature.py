"""Quadrature rules on edges, triangles and simple polygons.

Edge rules are Gauss-Lobatto (nodes double as degrees of freedom) and
Gauss-Legendre (used whenever integrands exceed the Lobatto exactness).
Polygon rules fan-triangulate around the centroid and use a collapsed
tensor Gauss rule on each triangle; signed triangle areas make the fan
correct for any simple polygon, convex or not.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre

from .exceptions import MeshError, UnsupportedOrderError


@lru_cache(maxsize=None)
def gauss_legendre_1d(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes/weights on [-1, 1], exact to degree 2n-1."""
    x, w = np.polynomial.legendre.leggauss(n)
    return x, w


@lru_cache(maxsize=None)
def gauss_lobatto_1d(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Lobatto nodes/weights on [-1, 1] with n >= 2 points.

    Includes both endpoints; exact for polynomials of degree 2n-3.
    Interior nodes are the roots of P'_{n-1}.
    """
    if n < 2:
        raise UnsupportedOrderError("Gauss-Lobatto rule needs at least 2 points")
    if n == 2:
        return np.array([-1.0, 1.0]), np.array([1.0, 1.0])
    # roots of the derivative of the Legendre polynomial P_{n-1}
    coeffs = np.zeros(n)
    coeffs[-1] = 1.0
    interior = legendre.legroots(legendre.legder(coeffs))
    nodes = np.concatenate(([-1.0], np.sort(interior), [1.0]))
    pn = legendre.legval(nodes, coeffs)
    weights = 2.0 / (n * (n - 1) * pn**2)
    return nodes, weights


@dataclass(frozen=True)
class EdgeQuadrature:
    """Quadrature points/weights on a physical straight edge."""

    points: np.ndarray   # (n, 2)
    weights: np.ndarray  # (n,), sum to edge length

    @property
    def n(self) -> int:
        return len(self.weights)


def _map_to_edge(p0, p1, nodes, weights) -> EdgeQuadrature:
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    length = float(np.hypot(*(p1 - p0)))
    if length <= 0.0:
        raise MeshError("degenerate edge in quadrature construction")
    pts = 0.5 * (p0 + p1) + 0.5 * np.outer(nodes, p1 - p0)
    return EdgeQuadrature(points=pts, weights=weights * (length / 2.0))


def gauss_lobatto_edge(p0, p1, k: int) -> EdgeQuadrature:
    """Lobatto rule with k+1 points (endpoints plus k-1 interior) on an edge.

    The node set matches the boundary degree-of-freedom layout for order-k
    virtual spaces; the rule is exact for polynomials of degree 2k-1.
    """
    if k < 2:
        raise UnsupportedOrderError(f"edge rule requires k >= 2, got k={k}")
    nodes, weights = gauss_lobatto_1d(k + 1)
    return _map_to_edge(p0, p1, nodes, weights)


def gauss_edge(p0, p1, n: int) -> EdgeQuadrature:
    """Gauss-Legendre rule with n points on an edge (degree 2n-1)."""
    nodes, weights = gauss_legendre_1d(n)
    return _map_to_edge(p0, p1, nodes, weights)


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Rule on the reference triangle (0,0),(1,0),(0,1), exact to `degree`.

    Collapsed tensor Gauss (Duffy) rule; all weights positive.
    """
    n = max(1, (degree + 2 + 1) // 2)  # 2n-1 >= degree+1 covers the Jacobian
    x, w = gauss_legendre_1d(n)
    u = 0.5 * (x + 1.0)
    wu = 0.5 * w
    U, V = np.meshgrid(u, u, indexing="ij")
    W = np.outer(wu, wu) * U  # Jacobian of (u,v) -> (u(1-v), uv) is u
    pts = np.column_stack([(U * (1.0 - V)).ravel(), (U * V).ravel()])
    return pts, W.ravel()


@dataclass(frozen=True)
class PolygonQuadrature:
    """Volume quadrature for a simple polygon (signed centroid fan)."""

    points: np.ndarray   # (n, 2)
    weights: np.ndarray  # (n,), sum to polygon area (weights may be signed
                         # on non-convex cells)


def polygon_quadrature(verts: np.ndarray, degree: int) -> PolygonQuadrature:
    """Quadrature exact for bivariate polynomials up to `degree` on a polygon."""
    verts = np.asarray(verts, dtype=float)
    nv = len(verts)
    if nv < 3:
        raise MeshError("polygon needs at least 3 vertices")
    ref_pts, ref_w = triangle_rule(degree)
    center = verts.mean(axis=0)
    pts = []
    wts = []
    for i in range(nv):
        a, b = verts[i], verts[(i + 1) % nv]
        e1 = a - center
        e2 = b - center
        jac = e1[0] * e2[1] - e1[1] * e2[0]  # twice the signed area
        if jac == 0.0:
            continue
        p = center + np.outer(ref_pts[:, 0], e1) + np.outer(ref_pts[:, 1], e2)
        pts.append(p)
        wts.append(ref_w * jac)
    return PolygonQuadrature(points=np.vstack(pts), weights=np.concatenate(wts))
