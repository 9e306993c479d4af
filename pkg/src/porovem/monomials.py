"""Scaled monomial bases and exact moment integration on polygons.

Monomials on a cell K are m_ab(x, y) = ((x-xc)/hK)^a ((y-yc)/hK)^b with xc
the centroid and hK the diameter, so every basis function is O(1) on K.
Volume integrals of monomials reduce exactly to per-edge integrals of 1D
polynomials (Green's theorem), which keeps all moment computations free of
volume quadrature error.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg

from .exceptions import ConditioningError, MeshError


@lru_cache(maxsize=None)
def monomial_exponents(k: int) -> np.ndarray:
    """Exponent pairs (a, b), a+b <= k, ordered by total degree."""
    exps = [(d - i, i) for d in range(k + 1) for i in range(d + 1)]
    return np.array(exps, dtype=int)


def n_monomials(k: int) -> int:
    return (k + 1) * (k + 2) // 2 if k >= 0 else 0


def exp_index(a: int, b: int) -> int:
    """Position of m_ab in the ordering of `monomial_exponents`."""
    d = a + b
    return d * (d + 1) // 2 + b


def polygon_area(verts: np.ndarray) -> float:
    """Signed shoelace area (positive for CCW loops)."""
    v = np.asarray(verts, dtype=float)
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def polygon_centroid(verts: np.ndarray) -> np.ndarray:
    v = np.asarray(verts, dtype=float)
    x, y = v[:, 0], v[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area = 0.5 * cross.sum()
    if area == 0.0:
        raise MeshError("degenerate polygon (zero area)")
    cx = ((x + xn) * cross).sum() / (6.0 * area)
    cy = ((y + yn) * cross).sum() / (6.0 * area)
    return np.array([cx, cy])


def polygon_diameter(verts: np.ndarray) -> float:
    v = np.asarray(verts, dtype=float)
    diff = v[:, None, :] - v[None, :, :]
    return float(np.sqrt((diff**2).sum(-1)).max())


def _edge_power_table(c0: float, dc: float, maxp: int) -> list[np.ndarray]:
    """Ascending coefficient arrays of (c0 + dc*t)^p for p = 0..maxp."""
    out = [np.array([1.0])]
    lin = np.array([c0, dc])
    for _ in range(maxp):
        out.append(np.convolve(out[-1], lin))
    return out


def monomial_moments(verts: np.ndarray, center: np.ndarray, diam: float,
                     kmax: int) -> np.ndarray:
    """All integrals over the polygon of m_ab, a+b <= kmax (exact)."""
    verts = np.asarray(verts, dtype=float)
    exps = monomial_exponents(kmax)
    mom = np.zeros(len(exps))
    nv = len(verts)
    for e in range(nv):
        p0 = verts[e]
        p1 = verts[(e + 1) % nv]
        dy = p1[1] - p0[1]
        if dy == 0.0:
            continue
        xp = _edge_power_table((p0[0] - center[0]) / diam,
                               (p1[0] - p0[0]) / diam, kmax + 1)
        yp = _edge_power_table((p0[1] - center[1]) / diam, dy / diam, kmax)
        for idx, (a, b) in enumerate(exps):
            c = np.convolve(xp[a + 1], yp[b])
            integral = (c / np.arange(1.0, len(c) + 1.0)).sum()
            mom[idx] += dy * diam / (a + 1.0) * integral
    return mom


def integrate_monomial(verts: np.ndarray, a: int, b: int) -> float:
    """Exact integral of the raw monomial x^a y^b over a simple polygon."""
    if a < 0 or b < 0:
        raise ValueError("monomial exponents must be non-negative")
    verts = np.asarray(verts, dtype=float)
    if len(verts) < 3 or polygon_area(verts) == 0.0:
        raise MeshError("degenerate polygon")
    mom = monomial_moments(verts, np.zeros(2), 1.0, a + b)
    return float(mom[exp_index(a, b)])


@dataclass(frozen=True)
class ScaledMonomialBasis:
    """Monomial basis m_ab = ((x-xc)/h)^a ((y-yc)/h)^b, a+b <= degree."""

    degree: int
    center: np.ndarray
    diameter: float

    @property
    def exponents(self) -> np.ndarray:
        return monomial_exponents(self.degree)

    @property
    def n(self) -> int:
        return n_monomials(self.degree)

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Values of every basis function at `points`; shape (npts, n)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        xb = (pts[:, 0] - self.center[0]) / self.diameter
        yb = (pts[:, 1] - self.center[1]) / self.diameter
        xp = np.vander(xb, self.degree + 1, increasing=True)
        yp = np.vander(yb, self.degree + 1, increasing=True)
        exps = self.exponents
        return xp[:, exps[:, 0]] * yp[:, exps[:, 1]]


def dx_matrix(k: int, diam: float) -> np.ndarray:
    """Coefficients of d/dx: degree-k basis -> degree-(k-1) basis."""
    exps = monomial_exponents(k)
    out = np.zeros((n_monomials(k - 1), n_monomials(k)))
    for j, (a, b) in enumerate(exps):
        if a > 0:
            out[exp_index(a - 1, b), j] = a / diam
    return out


def dy_matrix(k: int, diam: float) -> np.ndarray:
    exps = monomial_exponents(k)
    out = np.zeros((n_monomials(k - 1), n_monomials(k)))
    for j, (a, b) in enumerate(exps):
        if b > 0:
            out[exp_index(a, b - 1), j] = b / diam
    return out


def mass_matrix(moments: np.ndarray, krow: int, kcol: int) -> np.ndarray:
    """Cross mass matrix (m_i, m_j) from a moment table of degree >= krow+kcol."""
    er = monomial_exponents(krow)
    ec = monomial_exponents(kcol)
    idx = np.empty((len(er), len(ec)), dtype=int)
    for i, (a, b) in enumerate(er):
        for j, (c, d) in enumerate(ec):
            idx[i, j] = exp_index(a + c, b + d)
    return moments[idx]


def grad_coefficients(l: int, diam: float) -> np.ndarray:
    """Columns: gradients of degree >= 1 monomials of M_{l+1} in the block
    vector basis [M_l]^2 (x-components first, then y-components)."""
    nl = n_monomials(l)
    dx = dx_matrix(l + 1, diam)
    dy = dy_matrix(l + 1, diam)
    cols = []
    for j in range(1, n_monomials(l + 1)):
        cols.append(np.concatenate([dx[:, j], dy[:, j]]))
    return np.array(cols).T if cols else np.zeros((2 * nl, 0))


def gperp_dimension(l: int) -> int:
    """dim of the L2-orthogonal complement of grad(P_{l+1}) in [P_l]^2."""
    return max(0, l * (l + 1) // 2)


def gperp_basis(l: int, diam: float, mass_l: np.ndarray) -> np.ndarray:
    """L2(K)-orthonormal basis of the complement of grad(P_{l+1}) in [P_l]^2.

    Rows are coefficient vectors in the block layout of [M_l]^2. The row
    count l(l+1)/2 is what makes the displacement-space dimension formula
    2*k*Nv + (k-1)(k-2)/2 + k(k+1)/2 - 1 come out right with l = k-2 (and in
    particular the basis is empty for k = 2).
    """
    dim = gperp_dimension(l)
    if dim == 0:
        return np.zeros((0, 2 * n_monomials(l))) if l >= 0 else np.zeros((0, 0))
    h2 = scipy.linalg.block_diag(mass_l, mass_l)
    w = grad_coefficients(l, diam)
    ns = scipy.linalg.null_space(w.T @ h2)
    if ns.shape[1] != dim:
        raise ConditioningError(
            f"complement basis rank {ns.shape[1]} != expected {dim}")
    gram = ns.T @ h2 @ ns
    try:
        chol = np.linalg.cholesky(gram)
    except np.linalg.LinAlgError as exc:
        raise ConditioningError("complement Gram not positive definite") from exc
    return scipy.linalg.solve_triangular(chol, ns.T, lower=True)
