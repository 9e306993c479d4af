"""Per-element degrees of freedom and projection operators.

For a cell K and order k >= 2 the three local spaces carry:

* displacement (V): vertex values, values at the k-1 interior Gauss-Lobatto
  points of every edge, moments against an orthonormal basis of the
  complement of grad(P_{k-1}) in [P_{k-2}]^2, and moments of the divergence
  against non-constant monomials of degree k-1;
* fluid pressure (Q): the scalar boundary values plus moments against
  monomials of degree k-2;
* total pressure (Z): plain polynomial coefficients of degree k-1.

All projections (energy, symmetric-gradient energy, L2, and the L2
projection of gradients) are assembled from those DOFs alone by reducing
volume terms to divergence moments, complement moments and boundary
integrals of the known polynomial traces.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg

from .exceptions import ConditioningError, UnsupportedOrderError
from .monomials import (ScaledMonomialBasis, dx_matrix, dy_matrix, exp_index,
                        gperp_basis, gperp_dimension, grad_coefficients,
                        mass_matrix, monomial_exponents, monomial_moments,
                        n_monomials, polygon_area, polygon_centroid,
                        polygon_diameter)
from .quadrature import gauss_legendre_1d, gauss_lobatto_1d, polygon_quadrature

COND_REPORT_THRESHOLD = 1e12


@dataclass(frozen=True)
class DofLayout:
    """Counts and offsets of the local DOFs of one space on one cell."""

    space: str
    k: int
    n_vertices: int
    n_boundary: int
    n_interior: int

    @property
    def n_total(self) -> int:
        return self.n_boundary + self.n_interior


def dof_layout(space: str, k: int, n_vertices: int) -> DofLayout:
    if k < 2:
        raise UnsupportedOrderError(f"local spaces need k >= 2, got {k}")
    nv = n_vertices
    if space == "V":
        n_bnd = 2 * k * nv
        n_int = gperp_dimension(k - 2) + (k * (k + 1)) // 2 - 1
    elif space == "Q":
        n_bnd = k * nv
        n_int = n_monomials(k - 2)
    elif space == "Z":
        n_bnd = 0
        n_int = n_monomials(k - 1)
    else:
        raise ValueError(f"unknown space {space!r}")
    return DofLayout(space, k, nv, n_bnd, n_int)


@lru_cache(maxsize=None)
def _lagrange_matrices(k: int, n_gauss: int):
    """Lagrange basis at the k+1 Lobatto params: values and t-derivatives
    evaluated at the n_gauss Gauss params on [-1, 1]."""
    nodes, _ = gauss_lobatto_1d(k + 1)
    tg, _ = gauss_legendre_1d(n_gauss)
    vand = np.vander(nodes, k + 1, increasing=True)
    inv = np.linalg.inv(vand)          # column j: coefficients of ell_j
    vals = np.vander(tg, k + 1, increasing=True) @ inv
    dcoef = inv[1:, :] * np.arange(1, k + 1)[:, None]
    dvals = np.vander(tg, k, increasing=True) @ dcoef
    return vals, dvals


class ElementOps:
    """All geometric and projector machinery of one cell at one order."""

    def __init__(self, verts: np.ndarray, k: int):
        if k < 2:
            raise UnsupportedOrderError(f"virtual element order must be >= 2")
        verts = np.asarray(verts, dtype=float)
        self.verts = verts
        self.k = k
        self.nv = len(verts)
        self.area = polygon_area(verts)
        self.centroid = polygon_centroid(verts)
        self.diameter = polygon_diameter(verts)
        self.basis = ScaledMonomialBasis(k, self.centroid, self.diameter)
        self.layout_v = dof_layout("V", k, self.nv)
        self.layout_q = dof_layout("Q", k, self.nv)
        self.layout_z = dof_layout("Z", k, self.nv)

        self._geometry()
        self._moments_and_masses()
        self._boundary_tables()
        self._q_space()
        self._v_space()
        self._quad_packs: dict = {}

    # -- geometry ----------------------------------------------------------

    def _geometry(self):
        v = self.verts
        nxt = np.roll(v, -1, axis=0)
        tangents = nxt - v
        self.edge_lengths = np.hypot(tangents[:, 0], tangents[:, 1])
        self.tangents = tangents / self.edge_lengths[:, None]
        self.normals = np.column_stack(
            [self.tangents[:, 1], -self.tangents[:, 0]])

    def _moments_and_masses(self):
        k = self.k
        self.moments = monomial_moments(self.verts, self.centroid,
                                        self.diameter, 2 * k)
        mom = self.moments
        self.H_k = mass_matrix(mom, k, k)
        self.H_km1 = mass_matrix(mom, k - 1, k - 1)
        self.H_km2 = mass_matrix(mom, k - 2, k - 2) if k >= 2 else None
        self.H_km1_k = mass_matrix(mom, k - 1, k)
        self.H_km1_kp1 = mass_matrix(mom, k - 1, k + 1)
        self.H_km2_k = mass_matrix(mom, k - 2, k)
        self.Dx_k = dx_matrix(k, self.diameter)
        self.Dy_k = dy_matrix(k, self.diameter)
        self.Dx_km1 = dx_matrix(k - 1, self.diameter)
        self.Dy_km1 = dy_matrix(k - 1, self.diameter)
        self.Dx_kp1 = dx_matrix(k + 1, self.diameter)
        self.Dy_kp1 = dy_matrix(k + 1, self.diameter)
        self.gp_km2 = gperp_basis(k - 2, self.diameter, self.H_km2)
        self.gp_k = gperp_basis(k, self.diameter, self.H_k)
        self.n_gp = self.gp_km2.shape[0]

    # -- boundary node tables ------------------------------------------------

    def _boundary_tables(self):
        k, nv = self.k, self.nv
        lob_nodes, lob_w = gauss_lobatto_1d(k + 1)
        n_gauss = k + 2
        tg, wg = gauss_legendre_1d(n_gauss)
        lag_vals, lag_dvals = _lagrange_matrices(k, n_gauss)

        nb = k * nv
        self.n_bnodes = nb
        bnodes = np.empty((nb, 2))
        edge_nodes = np.empty((nv, k + 1), dtype=int)
        for e in range(nv):
            p0, p1 = self.verts[e], self.verts[(e + 1) % nv]
            for j in range(k):
                t = lob_nodes[j]
                bnodes[e * k + j] = 0.5 * (p0 + p1) + 0.5 * t * (p1 - p0)
            edge_nodes[e] = [e * k + j for j in range(k)] + [((e + 1) % nv) * k]
        self.bnodes = bnodes
        self.edge_nodes = edge_nodes
        self.lobatto_weights = np.outer(self.edge_lengths / 2.0, lob_w)

        # per-edge Gauss machinery for integrands beyond Lobatto exactness
        self.gauss_interp = lag_vals                       # (ng, k+1)
        self.gauss_deriv = lag_dvals                       # (ng, k+1), d/dt
        gp = np.empty((nv, n_gauss, 2))
        for e in range(nv):
            p0, p1 = self.verts[e], self.verts[(e + 1) % nv]
            gp[e] = 0.5 * (p0 + p1) + 0.5 * np.outer(tg, p1 - p0)
        self.gauss_points = gp
        self.gauss_weights = np.outer(self.edge_lengths / 2.0, wg)

        self.vals_k_bnodes = self.basis.evaluate(bnodes)
        self.vals_km1_bnodes = ScaledMonomialBasis(
            k - 1, self.centroid, self.diameter).evaluate(bnodes)
        self.vals_kp1_gauss = ScaledMonomialBasis(
            k + 1, self.centroid, self.diameter).evaluate(
                gp.reshape(-1, 2)).reshape(nv, n_gauss, -1)

    def _boundary_integral_vn(self, poly_vals_at_bnodes: np.ndarray):
        """Rows of the functionals v -> int_bdry (v.n) phi_r over V DOFs,
        with phi_r given by values at the boundary nodes (Lobatto rule)."""
        nr = poly_vals_at_bnodes.shape[1]
        out = np.zeros((nr, self.layout_v.n_total))
        for e in range(self.nv):
            idx = self.edge_nodes[e]
            w = self.lobatto_weights[e]
            phi = poly_vals_at_bnodes[idx]       # (k+1, nr)
            for c in range(2):
                cols = 2 * idx + c
                out[:, cols] += (w[:, None] * phi).T * self.normals[e, c]
        return out

    def _boundary_integral_q(self, poly_vals_at_bnodes: np.ndarray):
        """Rows of q -> int_bdry q phi_r over Q DOFs (Lobatto rule)."""
        nr = poly_vals_at_bnodes.shape[1]
        out = np.zeros((nr, self.layout_q.n_total))
        for e in range(self.nv):
            idx = self.edge_nodes[e]
            w = self.lobatto_weights[e]
            phi = poly_vals_at_bnodes[idx]
            out[:, idx] += (w[:, None] * phi).T
        return out

    # -- fluid pressure space ------------------------------------------------

    def _q_space(self):
        k = self.k
        nk, nkm1, nkm2 = n_monomials(k), n_monomials(k - 1), n_monomials(k - 2)
        nq = self.layout_q.n_total

        dq = np.zeros((nq, nk))
        dq[:self.n_bnodes] = self.vals_k_bnodes
        dq[self.n_bnodes:] = self.H_km2_k / self.area
        self.D_Q = dq

        # energy projection: gradient Gram with the zero-mean row replacing
        # the constant equation
        gs = (self.Dx_k.T @ self.H_km1 @ self.Dx_k
              + self.Dy_k.T @ self.H_km1 @ self.Dy_k)
        lap = self.Dx_km1 @ self.Dx_k + self.Dy_km1 @ self.Dy_k
        gx_b = self.vals_km1_bnodes @ self.Dx_k   # (nb, nk)
        gy_b = self.vals_km1_bnodes @ self.Dy_k
        b = self._boundary_integral_q_edgewise(gx_b, gy_b)  # (nk, nq)
        b[:, self.n_bnodes:] -= self.area * lap.T
        g = gs.copy()
        g[0] = self.moments[:nk]
        b[0] = 0.0
        b[0, self.n_bnodes + 0] = self.area  # P0(q) = |K| * first moment DOF
        self.pi_nabla_q = self._solve_reported(g, b, "scalar energy projection")

        # L2 projection of order k: low moments from DOFs, top moments from
        # the energy projection (the defining property of the space)
        mq = np.zeros((nk, nq))
        mq[:nkm2, self.n_bnodes:] = self.area * np.eye(nkm2)
        mq[nkm2:] = self.H_k[nkm2:, :] @ self.pi_nabla_q
        self.pi0_q = np.linalg.solve(self.H_k, mq)
        self.P0q_dof = self.D_Q @ self.pi0_q

        # L2 projection of the gradient onto [P_{k-1}]^2
        vals_km1 = self.vals_km1_bnodes
        bx = np.zeros((nkm1, nq))
        by = np.zeros((nkm1, nq))
        for e in range(self.nv):
            idx = self.edge_nodes[e]
            w = self.lobatto_weights[e]
            phi = vals_km1[idx]
            bx[:, idx] += (w[:, None] * phi).T * self.normals[e, 0]
            by[:, idx] += (w[:, None] * phi).T * self.normals[e, 1]
        bx[:, self.n_bnodes:] -= self.area * self.Dx_km1.T
        by[:, self.n_bnodes:] -= self.area * self.Dy_km1.T
        self.grad_proj_x = np.linalg.solve(self.H_km1, bx)
        self.grad_proj_y = np.linalg.solve(self.H_km1, by)

        self.edge_stab_scalar = self._edge_stab_nodal()

    def _boundary_integral_q_edgewise(self, fx, fy):
        """Rows of q -> sum_e int_e q (fx n_x + fy n_y) with fx, fy values at
        boundary nodes (arrays (nb, nr))."""
        nr = fx.shape[1]
        out = np.zeros((nr, self.layout_q.n_total))
        for e in range(self.nv):
            idx = self.edge_nodes[e]
            w = self.lobatto_weights[e]
            phi = fx[idx] * self.normals[e, 0] + fy[idx] * self.normals[e, 1]
            out[:, idx] += (w[:, None] * phi).T
        return out

    # -- displacement space ----------------------------------------------------

    def _v_space(self):
        k, nv = self.k, self.nv
        nk, nkm1, nkm2 = n_monomials(k), n_monomials(k - 1), n_monomials(k - 2)
        nvdof = self.layout_v.n_total
        nb = self.n_bnodes
        ngp = self.n_gp
        ndiv = nkm1 - 1

        # DOF matrix of the 2*nk vector monomials (x-block then y-block)
        dv = np.zeros((nvdof, 2 * nk))
        dv[0:2 * nb:2, :nk] = self.vals_k_bnodes
        dv[1:2 * nb:2, nk:] = self.vals_k_bnodes
        if ngp:
            cross = self.H_km2_k  # (nkm2, nk)
            gx = self.gp_km2[:, :nkm2]
            gy = self.gp_km2[:, nkm2:]
            dv[2 * nb:2 * nb + ngp, :nk] = gx @ cross / self.area
            dv[2 * nb:2 * nb + ngp, nk:] = gy @ cross / self.area
        div_ops = np.hstack([self.Dx_k, self.Dy_k])  # (nkm1, 2nk) coefficients
        dv[2 * nb + ngp:, :] = (self.H_km1 @ div_ops)[1:, :] / self.area
        self.D_V = dv
        self.div_coeff_of_monomials = div_ops

        # moments of div(v) against all monomials of degree k-1
        mdiv = np.zeros((nkm1, nvdof))
        ones = np.ones((nb, 1))
        mdiv[0] = self._boundary_integral_vn(ones)[0]
        mdiv[1:, 2 * nb + ngp:] = self.area * np.eye(ndiv)
        self.M_div = mdiv
        self.div_coeff = np.linalg.solve(self.H_km1, mdiv)

        # exact moments against [M_{k-2}]^2 via the gradient/complement split
        w_split = grad_coefficients(k - 2, self.diameter)
        t_split = np.hstack([w_split, self.gp_km2.T]) if ngp else w_split
        mu_rows = []
        vals_km1_b = self.vals_km1_bnodes
        for aidx in range(1, nkm1):
            row = (self._boundary_integral_q_style_vn(vals_km1_b[:, aidx])
                   - mdiv[aidx])
            mu_rows.append(row)
        for j in range(ngp):
            row = np.zeros(nvdof)
            row[2 * nb + j] = self.area
            mu_rows.append(row)
        mu_split = np.array(mu_rows) if mu_rows else np.zeros((0, nvdof))
        tinv = np.linalg.inv(t_split)
        self.v_moments_km2 = tinv.T @ mu_split  # (2*nkm2, nvdof)
        h2_km2 = scipy.linalg.block_diag(self.H_km2, self.H_km2)
        self.pi0_v_km2 = np.linalg.solve(h2_km2, self.v_moments_km2)

        # strain operators in Voigt form (coefficients in M_{k-1})
        z = np.zeros_like(self.Dx_k)
        exx = np.hstack([self.Dx_k, z])
        eyy = np.hstack([z, self.Dy_k])
        exy = 0.5 * np.hstack([self.Dy_k, self.Dx_k])
        self.G_eps = (exx.T @ self.H_km1 @ exx + eyy.T @ self.H_km1 @ eyy
                      + 2.0 * exy.T @ self.H_km1 @ exy)
        gs = (self.Dx_k.T @ self.H_km1 @ self.Dx_k
              + self.Dy_k.T @ self.H_km1 @ self.Dy_k)
        self.G_grad = scipy.linalg.block_diag(gs, gs)

        # boundary parts of the right-hand sides
        exx_b = vals_km1_b @ exx
        eyy_b = vals_km1_b @ eyy
        exy_b = vals_km1_b @ exy
        b_eps = self._traction_rows(exx_b, exy_b, exy_b, eyy_b)
        gxx_b = vals_km1_b @ np.hstack([self.Dx_k, z])
        gxy_b = vals_km1_b @ np.hstack([self.Dy_k, z])
        gyx_b = vals_km1_b @ np.hstack([z, self.Dx_k])
        gyy_b = vals_km1_b @ np.hstack([z, self.Dy_k])
        b_grad = self._traction_rows(gxx_b, gxy_b, gyx_b, gyy_b)

        # interior parts via div eps(r) resp. Lap r decomposed into
        # grad(P_{k-1}) + complement
        diveps = np.vstack([
            self.Dx_km1 @ exx + self.Dy_km1 @ exy,
            self.Dx_km1 @ exy + self.Dy_km1 @ eyy,
        ])
        lap_s = self.Dx_km1 @ self.Dx_k + self.Dy_km1 @ self.Dy_k
        zs = np.zeros_like(lap_s)
        lap_v = np.vstack([np.hstack([lap_s, zs]), np.hstack([zs, lap_s])])
        b_eps -= self._interior_v_dot(t_split, diveps, vals_km1_b, mdiv)
        b_grad -= self._interior_v_dot(t_split, lap_v, vals_km1_b, mdiv)

        # kernel-fixing conditions
        vv = self.verts
        xb = (vv[:, 0] - self.centroid[0]) / self.diameter
        yb = (vv[:, 1] - self.centroid[1]) / self.diameter
        vert_nodes = k * np.arange(nv)
        rm_dof = np.zeros((3, nvdof))
        rm_dof[0, 2 * vert_nodes] = 1.0
        rm_dof[1, 2 * vert_nodes + 1] = 1.0
        rm_dof[2, 2 * vert_nodes] = -yb
        rm_dof[2, 2 * vert_nodes + 1] = xb
        rm_dof /= nv
        vals_verts = self.vals_k_bnodes[vert_nodes]  # (nv, nk)
        rm_poly = np.zeros((3, 2 * nk))
        rm_poly[0, :nk] = vals_verts.sum(0)
        rm_poly[1, nk:] = vals_verts.sum(0)
        rm_poly[2, :nk] = -(yb[:, None] * vals_verts).sum(0)
        rm_poly[2, nk:] = (xb[:, None] * vals_verts).sum(0)
        rm_poly /= nv
        self.pi_eps = self._solve_pinned(self.G_eps, b_eps, rm_poly, rm_dof,
                                         "strain energy projection")
        mean_poly = np.zeros((2, 2 * nk))
        mean_poly[0, :nk] = self.moments[:nk]
        mean_poly[1, nk:] = self.moments[:nk]
        mean_dof = self.v_moments_km2[[0, nkm2]] if nkm2 else None
        self.pi_nabla_v = self._solve_pinned(self.G_grad, b_grad, mean_poly,
                                             mean_dof,
                                             "vector energy projection")
        self.Peps_dof = self.D_V @ self.pi_eps

        # L2 projection at order k: gradient-part moments are exact, the
        # remaining complement moments are taken from the energy projection
        t_k = np.hstack([grad_coefficients(k, self.diameter), self.gp_k.T])
        mu_rows = np.zeros((2 * nk, nvdof))
        rows = 0
        for aidx in range(1, n_monomials(k + 1)):
            bnd = self._gauss_boundary_vn(aidx)
            vol = self.H_km1_kp1[:, aidx] @ self.div_coeff
            mu_rows[rows] = bnd - vol
            rows += 1
        h2_k = scipy.linalg.block_diag(self.H_k, self.H_k)
        for j in range(self.gp_k.shape[0]):
            mu_rows[rows] = (self.gp_k[j] @ h2_k) @ self.pi_nabla_v
            rows += 1
        self.v_moments_k = np.linalg.inv(t_k).T @ mu_rows
        self.pi0_v_k = np.linalg.solve(h2_k, self.v_moments_k)

        self.edge_stab_v = self._edge_stab_vector()

    def _boundary_integral_q_style_vn(self, phi_at_bnodes: np.ndarray):
        """Row of v -> int_bdry (v.n) phi for one scalar polynomial phi."""
        return self._boundary_integral_vn(phi_at_bnodes[:, None])[0]

    def _traction_rows(self, sxx, sxy, syx, syy):
        """Rows of v -> int_bdry v . (S n) for 2*nk matrix polynomials S
        given by nodal values of their entries (each (nb, 2nk))."""
        nvdof = self.layout_v.n_total
        out = np.zeros((2 * self.basis.n, nvdof))
        for e in range(self.nv):
            idx = self.edge_nodes[e]
            w = self.lobatto_weights[e]
            nx, ny = self.normals[e]
            tx = sxx[idx] * nx + sxy[idx] * ny   # (k+1, 2nk)
            ty = syx[idx] * nx + syy[idx] * ny
            out[:, 2 * idx] += (w[:, None] * tx).T
            out[:, 2 * idx + 1] += (w[:, None] * ty).T
        return out

    def _interior_v_dot(self, t_split, coeff, vals_km1_b, mdiv):
        """Rows of v -> int_K v . c_r with c_r in [P_{k-2}]^2 given by
        coefficient columns of `coeff` (2*n_{k-2} x nr)."""
        nvdof = self.layout_v.n_total
        nkm1 = n_monomials(self.k - 1)
        nb = self.n_bnodes
        ngp = self.n_gp
        z = np.linalg.solve(t_split, coeff)      # split coefficients
        npc = nkm1 - 1
        pc = z[:npc]                              # gradient-part coefficients
        out = -(pc.T @ mdiv[1:, :])
        # boundary term sum_e int (v.n) p with p = sum pc m_alpha
        p_at_b = vals_km1_b[:, 1:] @ pc           # (nb, nr)
        out += self._boundary_integral_vn(p_at_b)
        if ngp:
            gcols = np.arange(2 * nb, 2 * nb + ngp)
            out[:, gcols] += self.area * z[npc:].T
        return out

    def _gauss_boundary_vn(self, aidx: int):
        """Row of v -> int_bdry (v.n) m_alpha for a degree-(k+1) monomial,
        using the Gauss rule (trace interpolated from Lobatto nodes)."""
        nvdof = self.layout_v.n_total
        out = np.zeros(nvdof)
        interp = self.gauss_interp
        for e in range(self.nv):
            idx = self.edge_nodes[e]
            w = self.gauss_weights[e]
            phi = self.vals_kp1_gauss[e, :, aidx]
            nx, ny = self.normals[e]
            contrib = interp.T @ (w * phi)        # (k+1,)
            out[2 * idx] += contrib * nx
            out[2 * idx + 1] += contrib * ny
        return out

    def _edge_stab_nodal(self):
        """Nodal tangential-gradient form sum_e int_e dt(u) dt(v) (scalar)."""
        nb = self.n_bnodes
        s = np.zeros((nb, nb))
        for e in range(self.nv):
            idx = self.edge_nodes[e]
            le = self.edge_lengths[e]
            dl = self.gauss_deriv * (2.0 / le)
            w = self.gauss_weights[e]
            s[np.ix_(idx, idx)] += dl.T @ (w[:, None] * dl)
        return s

    def _edge_stab_vector(self):
        """h_K-weighted tangential jump form on V boundary DOFs."""
        nb = self.n_bnodes
        nvdof = self.layout_v.n_total
        s = np.zeros((nvdof, nvdof))
        sb = self.diameter * self.edge_stab_scalar
        for c in range(2):
            cols = 2 * np.arange(nb) + c
            s[np.ix_(cols, cols)] += sb
        return s

    # -- linear algebra helpers ---------------------------------------------

    def _solve_reported(self, g, b, what):
        cond = np.linalg.cond(g)
        if cond > COND_REPORT_THRESHOLD:
            warnings.warn(f"{what}: local system condition {cond:.2e}")
        try:
            return np.linalg.solve(g, b)
        except np.linalg.LinAlgError as exc:
            raise ConditioningError(f"{what}: singular local system") from exc

    def _solve_pinned(self, gram, b, pin_poly, pin_dof, what):
        """Solve gram*x = b with the rank-deficient kernel pinned by extra
        conditions pin_poly @ x = pin_dof (consistent by construction)."""
        scale = np.trace(gram) / gram.shape[0]
        a = gram + scale * (pin_poly.T @ pin_poly)
        rhs = b.copy()
        if pin_dof is not None:
            rhs += scale * (pin_poly.T @ pin_dof)
        return self._solve_reported(a, rhs, what)

    # -- quadrature packs (cacheable across congruent, translated cells) ------

    def quad_pack(self, degree: int):
        """Volume quadrature in this element's own coordinates plus cached
        monomial values; congruent translated cells reuse it with a shift."""
        pack = self._quad_packs.get(degree)
        if pack is None:
            q = polygon_quadrature(self.verts, degree)
            pack = {"pts": q.points, "w": q.weights, "vals": {}}
            self._quad_packs[degree] = pack
        return pack

    def basis_values(self, pack, degree: int) -> np.ndarray:
        vals = pack["vals"].get(degree)
        if vals is None:
            basis = ScaledMonomialBasis(degree, self.centroid, self.diameter)
            vals = basis.evaluate(pack["pts"])
            pack["vals"][degree] = vals
        return vals

    # -- DOF interpolation of exact fields ------------------------------------
    # A nonzero `shift` evaluates the data at (own coordinates + shift):
    # cached operators of a congruent cell are reused at its true position.

    def interpolate_q(self, fn, shift=None) -> np.ndarray:
        """Q DOFs of a scalar function fn(points)->(n,) sampled exactly."""
        s = 0.0 if shift is None else shift
        dofs = np.empty(self.layout_q.n_total)
        dofs[:self.n_bnodes] = fn(self.bnodes + s)
        pack = self.quad_pack(2 * self.k + 2)
        vals = fn(pack["pts"] + s)
        mb = self.basis_values(pack, self.k - 2)
        dofs[self.n_bnodes:] = (pack["w"][:, None] * mb).T @ vals / self.area
        return dofs

    def interpolate_v(self, fn, div_fn, shift=None) -> np.ndarray:
        """V DOFs of a vector field fn(points)->(n,2) with divergence div_fn."""
        s = 0.0 if shift is None else shift
        nb = self.n_bnodes
        dofs = np.empty(self.layout_v.n_total)
        vals_b = fn(self.bnodes + s)
        dofs[0:2 * nb:2] = vals_b[:, 0]
        dofs[1:2 * nb:2] = vals_b[:, 1]
        pack = self.quad_pack(2 * self.k + 2)
        vv = fn(pack["pts"] + s)
        if self.n_gp:
            mb = self.basis_values(pack, self.k - 2)
            nkm2 = n_monomials(self.k - 2)
            gvals = (mb @ self.gp_km2[:, :nkm2].T * vv[:, :1]
                     + mb @ self.gp_km2[:, nkm2:].T * vv[:, 1:2])
            dofs[2 * nb:2 * nb + self.n_gp] = (
                pack["w"] @ gvals) / self.area
        dv = div_fn(pack["pts"] + s)
        mb1 = self.basis_values(pack, self.k - 1)[:, 1:]
        dofs[2 * nb + self.n_gp:] = (
            (pack["w"][:, None] * mb1).T @ dv) / self.area
        return dofs

    def project_z(self, fn, shift=None) -> np.ndarray:
        """Coefficients of the cellwise L2 projection of fn onto P_{k-1}."""
        s = 0.0 if shift is None else shift
        pack = self.quad_pack(2 * self.k + 2)
        mb = self.basis_values(pack, self.k - 1)
        rhs = (pack["w"][:, None] * mb).T @ fn(pack["pts"] + s)
        return np.linalg.solve(self.H_km1, rhs)
