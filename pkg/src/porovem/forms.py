"""Local discrete bilinear forms, stabilizers and load vectors.

Every form follows the consistency-plus-stabilization pattern: the exact
form evaluated on projected polynomials plus a stabilizer acting on the
projector complement. Two stabilizer families are available for the
displacement block: the plain DOF product ('dofi-dofi') and the
h_K-weighted tangential edge form ('edge'). Pressure stabilizers stay
DOF-based unless edge_stab_scope='all' extends the tangential form to the
Darcy block.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .element import ElementOps
from .exceptions import ConfigError, MeshError

STAB_DOFI = "dofi-dofi"
STAB_EDGE = "edge"


@dataclass
class MaterialParams:
    """Material data; Lame pairs per subdomain plus coupling coefficients."""

    mu_p: float
    lam_p: float
    mu_e: float
    lam_e: float
    kappa: float
    eta: float
    alpha: float
    c0: float

    def __post_init__(self):
        if min(self.mu_p, self.lam_p, self.mu_e, self.lam_e) <= 0:
            raise ConfigError("Lame parameters must be positive")
        if self.kappa <= 0 or self.eta <= 0:
            raise ConfigError("permeability and viscosity must be positive")
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError("Biot-Willis coefficient must be in (0, 1]")
        if self.c0 < 0:
            raise ConfigError("storativity must be non-negative")

    @classmethod
    def from_young_poisson(cls, e_p, nu_p, e_e, nu_e, kappa, eta, alpha, c0):
        return cls(mu_p=lame_mu(e_p, nu_p), lam_p=lame_lambda(e_p, nu_p),
                   mu_e=lame_mu(e_e, nu_e), lam_e=lame_lambda(e_e, nu_e),
                   kappa=kappa, eta=eta, alpha=alpha, c0=c0)

    def mu(self, tag: str) -> float:
        return self.mu_p if tag == "P" else self.mu_e

    def lam(self, tag: str) -> float:
        return self.lam_p if tag == "P" else self.lam_e

    @property
    def storage(self) -> float:
        """Zero-order pressure weight c0 + alpha^2 / lambda_P."""
        return self.c0 + self.alpha**2 / self.lam_p


def lame_mu(young, poisson):
    if not -1.0 < poisson < 0.5:
        raise ConfigError(f"Poisson ratio {poisson} outside (-1, 1/2)")
    return young / (2.0 + 2.0 * poisson)


def lame_lambda(young, poisson):
    if not -1.0 < poisson < 0.5:
        raise ConfigError(f"Poisson ratio {poisson} outside (-1, 1/2)")
    return young * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson))


def _complement_v(ops: ElementOps) -> np.ndarray:
    return np.eye(ops.layout_v.n_total) - ops.Peps_dof


def _complement_q(ops: ElementOps) -> np.ndarray:
    return np.eye(ops.layout_q.n_total) - ops.P0q_dof


def local_edge_stabilizer(ops: ElementOps) -> np.ndarray:
    """Tangential edge form on V DOFs: sum_e h_K int_e dt(u).dt(v)."""
    return ops.edge_stab_v


def local_a1(ops: ElementOps, params: MaterialParams, tag: str,
             stab: str = STAB_DOFI) -> np.ndarray:
    two_mu = 2.0 * params.mu(tag)
    cons = two_mu * (ops.pi_eps.T @ ops.G_eps @ ops.pi_eps)
    comp = _complement_v(ops)
    if stab == STAB_DOFI:
        sigma1 = np.trace(cons) / cons.shape[0]
        s = sigma1 * (comp.T @ comp)
    elif stab == STAB_EDGE:
        s = two_mu * (comp.T @ ops.edge_stab_v @ comp)
    else:
        raise ConfigError(f"unknown stabilizer {stab!r}")
    return cons + s


def local_a2(ops: ElementOps, params: MaterialParams, tag: str,
             stab: str = STAB_DOFI, edge_stab_scope: str = "displacement"
             ) -> np.ndarray:
    if tag != "P":
        raise MeshError("Darcy form only lives on poroelastic cells")
    w = params.kappa / params.eta
    cons = w * (ops.grad_proj_x.T @ ops.H_km1 @ ops.grad_proj_x
                + ops.grad_proj_y.T @ ops.H_km1 @ ops.grad_proj_y)
    comp = _complement_q(ops)
    if stab == STAB_EDGE and edge_stab_scope == "all":
        nb = ops.n_bnodes
        s_nodal = np.zeros((ops.layout_q.n_total, ops.layout_q.n_total))
        s_nodal[:nb, :nb] = ops.diameter * ops.edge_stab_scalar
        s = w * (comp.T @ s_nodal @ comp)
    else:
        sigma2 = np.trace(cons) / cons.shape[0]
        s = sigma2 * (comp.T @ comp)
    return cons + s


def local_a2_tilde(ops: ElementOps, params: MaterialParams, tag: str
                   ) -> np.ndarray:
    if tag != "P":
        raise MeshError("storage form only lives on poroelastic cells")
    w = params.storage
    cons = w * (ops.pi0_q.T @ ops.H_k @ ops.pi0_q)
    comp = _complement_q(ops)
    return cons + w * ops.area * (comp.T @ comp)


def local_b1(ops: ElementOps) -> np.ndarray:
    """Coupling b1(v, phi) = -int_K phi div v; rows over the Z coefficients."""
    return -ops.M_div


def local_b2(ops: ElementOps, params: MaterialParams, tag: str) -> np.ndarray:
    if tag != "P":
        raise MeshError("pressure coupling only lives on poroelastic cells")
    return (params.alpha / params.lam_p) * (ops.H_km1_k @ ops.pi0_q)


def local_a3(ops: ElementOps, params: MaterialParams, tag: str) -> np.ndarray:
    return ops.H_km1 / params.lam(tag)


def local_loads(ops: ElementOps, b_fn=None, ell_fn=None, quad_degree=None,
                shift=None, body_order: int | None = None):
    """Discrete load vectors F (V) and G (Q) from pointwise data callables.

    The data enters through L2 projections of the test functions: order k
    for the volumetric source, and order `body_order` (default k) for the
    body load. Order k-2 is the minimal computable choice for the body
    load, but it caps the displacement L2 convergence one order short, so
    the full order is the default. `shift` translates the quadrature points
    for cached operators reused on congruent cells.
    """
    deg = quad_degree or (2 * ops.k + 2)
    pack = ops.quad_pack(deg)
    s = 0.0 if shift is None else shift
    pts = pack["pts"] + s
    w = pack["w"]
    f = np.zeros(ops.layout_v.n_total)
    g = np.zeros(ops.layout_q.n_total)
    order = ops.k if body_order is None else body_order
    if order not in (ops.k, ops.k - 2):
        raise ConfigError("body load order must be k or k-2")
    if b_fn is not None:
        bvals = np.asarray(b_fn(pts))
        proj = ops.pi0_v_k if order == ops.k else ops.pi0_v_km2
        mb = ops.basis_values(pack, order)
        mom = np.concatenate([(w * bvals[:, 0]) @ mb, (w * bvals[:, 1]) @ mb])
        f = proj.T @ mom
    if ell_fn is not None:
        lvals = np.asarray(ell_fn(pts))
        mb = ops.basis_values(pack, ops.k)
        mom = (w * lvals) @ mb
        g = ops.pi0_q.T @ mom
    return f, g


@dataclass
class LocalForms:
    """All local matrices of one cell in DOF coordinates."""

    tag: str
    A1: np.ndarray
    B1: np.ndarray
    A3: np.ndarray
    A2: np.ndarray | None = None
    A2t: np.ndarray | None = None
    B2: np.ndarray | None = None


def local_forms(ops: ElementOps, params: MaterialParams, tag: str,
                stab: str = STAB_DOFI, edge_stab_scope: str = "displacement"
                ) -> LocalForms:
    lf = LocalForms(
        tag=tag,
        A1=local_a1(ops, params, tag, stab),
        B1=local_b1(ops),
        A3=local_a3(ops, params, tag),
    )
    if tag == "P":
        lf.A2 = local_a2(ops, params, tag, stab, edge_stab_scope)
        lf.A2t = local_a2_tilde(ops, params, tag)
        lf.B2 = local_b2(ops, params, tag)
    return lf
