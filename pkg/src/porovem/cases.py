"""Benchmark registry: exact solutions, derived data, geometry and schedules.

Each case bundles closed-form displacement/pressure fields (where they
exist), the forcing terms obtained by pushing those fields through the
governing equations with symbolic differentiation, the boundary-condition
roles of every edge tag, and a mesh recipe per refinement level.

The manufactured global fields deliberately violate the interface
transmission conditions (the total traction and the fluid flux jump across
the interface), so the corresponding jump data is part of the case and is
applied as interface surface loads.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
import sympy as sym

from .assembly import BCSpec, ProblemData
from .exceptions import ConfigError, NoExactSolution
from .forms import MaterialParams
from .mesh import PolygonalMesh, retag_boundary, subdivide
from . import meshgen

CASE_IDS = ("jump-interface", "small-edges", "transient", "circle-interface",
            "mandel")

_X, _Y, _T = sym.symbols("x y t")
_PSYMS = sym.symbols("mu_p lam_p mu_e lam_e kappa eta alpha c0")
_MU_P, _LAM_P, _MU_E, _LAM_E, _KAPPA, _ETA, _ALPHA, _C0 = _PSYMS

_SOLUTIONS = {
    "trig-tall": (
        sym.Rational(1, 10) * _X * (1 - _X) * sym.cos(sym.pi * _X)
        * sym.sin(sym.pi * _Y),
        sym.Rational(1, 10) * sym.sin(sym.pi * _Y) * sym.cos(sym.pi * _Y)
        * _Y**2 * (2 - _Y),
        sym.sin(sym.pi * _X) * sym.sin(sym.pi * _Y),
    ),
    "trig-unit": (
        sym.Rational(1, 10) * _X * (1 - _X) * sym.cos(sym.pi * _X)
        * sym.sin(2 * sym.pi * _Y),
        sym.Rational(1, 10) * sym.sin(sym.pi * _X) * sym.cos(sym.pi * _Y)
        * _Y**2 * (1 - _Y),
        sym.cos(2 * sym.pi * (_X - sym.Rational(1, 4)))
        * sym.sin(2 * sym.pi * (_Y - sym.Rational(1, 4))),
    ),
    "quadratic-in-time": (
        sym.sin(_T) * (_X**2 + _Y**2),
        sym.sin(_T) * (_X**2 + _Y**2),
        sym.sin(_T) * (_X**2 + _Y**2),
    ),
}


def _lambdify(expr):
    fn = sym.lambdify((_X, _Y, _T) + _PSYMS, expr, modules="numpy")

    def wrapped(xa, ya, ta, pvals):
        out = np.asarray(fn(xa, ya, ta, *pvals), dtype=float)
        if out.shape != np.shape(xa):
            out = np.broadcast_to(out, np.shape(xa)).copy()
        return out

    return wrapped


@lru_cache(maxsize=None)
def _derived_family(family: str):
    """Symbolically derived fields and data of one solution family."""
    u1, u2, p = _SOLUTIONS[family]
    div_u = sym.diff(u1, _X) + sym.diff(u2, _Y)
    psi = {"P": _ALPHA * p - _LAM_P * div_u, "E": -_LAM_E * div_u}
    mu = {"P": _MU_P, "E": _MU_E}
    exprs = {
        "u1": u1, "u2": u2, "p": p,
        "u1x": sym.diff(u1, _X), "u1y": sym.diff(u1, _Y),
        "u2x": sym.diff(u2, _X), "u2y": sym.diff(u2, _Y),
        "px": sym.diff(p, _X), "py": sym.diff(p, _Y),
        "div_u": div_u,
    }
    for tag in ("P", "E"):
        eps_xx = sym.diff(u1, _X)
        eps_yy = sym.diff(u2, _Y)
        eps_xy = (sym.diff(u1, _Y) + sym.diff(u2, _X)) / 2
        sxx = 2 * mu[tag] * eps_xx - psi[tag]
        syy = 2 * mu[tag] * eps_yy - psi[tag]
        sxy = 2 * mu[tag] * eps_xy
        exprs[f"psi_{tag}"] = psi[tag]
        exprs[f"sxx_{tag}"] = sxx
        exprs[f"sxy_{tag}"] = sxy
        exprs[f"syy_{tag}"] = syy
        exprs[f"b1_{tag}"] = -(sym.diff(sxx, _X) + sym.diff(sxy, _Y))
        exprs[f"b2_{tag}"] = -(sym.diff(sxy, _X) + sym.diff(syy, _Y))
    exprs["ell"] = ((_C0 + _ALPHA**2 / _LAM_P) * sym.diff(p, _T)
                    - (_ALPHA / _LAM_P) * sym.diff(psi["P"], _T)
                    - (_KAPPA / _ETA)
                    * (sym.diff(p, _X, 2) + sym.diff(p, _Y, 2)))
    return {name: _lambdify(e) for name, e in exprs.items()}


class ExactFields:
    """Vectorized evaluators of the exact fields and derived data."""

    def __init__(self, family: str, params: MaterialParams):
        self._f = _derived_family(family)
        self.params = params
        self._pv = (params.mu_p, params.lam_p, params.mu_e, params.lam_e,
                    params.kappa, params.eta, params.alpha, params.c0)

    def _eval(self, name, pts, t):
        pts = np.atleast_2d(pts)
        return self._f[name](pts[:, 0], pts[:, 1], t, self._pv)

    def u(self, pts, t=0.0):
        return np.column_stack([self._eval("u1", pts, t),
                                self._eval("u2", pts, t)])

    def grad_u(self, pts, t=0.0):
        g = np.empty((np.atleast_2d(pts).shape[0], 2, 2))
        g[:, 0, 0] = self._eval("u1x", pts, t)
        g[:, 0, 1] = self._eval("u1y", pts, t)
        g[:, 1, 0] = self._eval("u2x", pts, t)
        g[:, 1, 1] = self._eval("u2y", pts, t)
        return g

    def div_u(self, pts, t=0.0):
        return self._eval("div_u", pts, t)

    def p(self, pts, t=0.0):
        return self._eval("p", pts, t)

    def grad_p(self, pts, t=0.0):
        return np.column_stack([self._eval("px", pts, t),
                                self._eval("py", pts, t)])

    def psi(self, pts, t=0.0, tag="P"):
        return self._eval(f"psi_{tag}", pts, t)

    def stress(self, pts, t=0.0, tag="P"):
        s = np.empty((np.atleast_2d(pts).shape[0], 2, 2))
        s[:, 0, 0] = self._eval(f"sxx_{tag}", pts, t)
        s[:, 0, 1] = s[:, 1, 0] = self._eval(f"sxy_{tag}", pts, t)
        s[:, 1, 1] = self._eval(f"syy_{tag}", pts, t)
        return s

    def body(self, pts, t=0.0, tag="P"):
        return np.column_stack([self._eval(f"b1_{tag}", pts, t),
                                self._eval(f"b2_{tag}", pts, t)])

    def source(self, pts, t=0.0):
        return self._eval("ell", pts, t)

    def flux_vector(self, pts, t=0.0):
        return (self.params.kappa / self.params.eta) * self.grad_p(pts, t)

    def traction_jump(self, pts, normal, t=0.0):
        """(sigma_P - sigma_E) n with n pointing from P into E."""
        jump = self.stress(pts, t, "P") - self.stress(pts, t, "E")
        return jump @ normal

    def normal_flux(self, pts, normal, t=0.0):
        return self.flux_vector(pts, t) @ normal


def _manufactured_bc(fields: ExactFields, u_tags, p_tags, traction_tags,
                     flux_tags) -> BCSpec:
    """BCSpec for a manufactured run: essential data interpolates the exact
    fields; natural data (tractions, fluxes, interface jumps) is imposed as
    surface loads."""
    u_dir = {tag: ((True, True), lambda pts, t: fields.u(pts, t))
             for tag in u_tags}
    p_dir = {tag: (lambda pts, t: fields.p(pts, t)) for tag in p_tags}
    tractions = {
        tag: (lambda pts, normal, t, dom=dom:
              fields.stress(pts, t, dom) @ normal)
        for tag, dom in traction_tags.items()
    }
    fluxes = {tag: (lambda pts, normal, t: fields.normal_flux(pts, normal, t))
              for tag in flux_tags}
    return BCSpec(
        u_dirichlet=u_dir, p_dirichlet=p_dir, tractions=tractions,
        fluxes=fluxes,
        interface_traction=lambda pts, n, t: fields.traction_jump(pts, n, t),
        interface_flux=lambda pts, n, t: fields.normal_flux(pts, n, t))


@dataclass
class ManufacturedCase:
    """One benchmark configuration ready to mesh, assemble and run."""

    case_id: str
    params: MaterialParams
    stationary: bool
    problem: ProblemData
    mesh_builder: Callable               # (level, seed) -> PolygonalMesh
    fields: ExactFields | None = None
    t_final: float | None = None
    dt_rule: str = "h2"
    load_off_time: float | None = None
    description: str = ""

    def eval_exact(self, field: str, pts, t: float = 0.0, tag: str = "P"):
        if self.fields is None:
            raise NoExactSolution(
                f"case {self.case_id!r} has no closed-form solution")
        f = self.fields
        dispatch = {
            "u": lambda: f.u(pts, t),
            "p": lambda: f.p(pts, t),
            "psi": lambda: f.psi(pts, t, tag),
            "grad_u": lambda: f.grad_u(pts, t),
            "grad_p": lambda: f.grad_p(pts, t),
            "div_u": lambda: f.div_u(pts, t),
        }
        if field not in dispatch:
            raise ConfigError(f"unknown field {field!r}")
        return dispatch[field]()

    def eval_forcing(self, which: str, pts, t: float = 0.0, tag: str = "P"):
        if which not in ("b", "ell"):
            raise ConfigError(f"unknown forcing {which!r}")
        if self.fields is None:  # Mandel runs with zero body load and source
            n = np.atleast_2d(pts).shape[0]
            return np.zeros((n, 2)) if which == "b" else np.zeros(n)
        if which == "b":
            return self.fields.body(pts, t, tag)
        return self.fields.source(pts, t)

    def timestep(self, h: float) -> float:
        """Time step from the case's rule (h2 keeps t_final an exact multiple)."""
        if self.stationary:
            raise ConfigError("stationary case has no time step")
        if self.dt_rule.startswith("fixed:"):
            return float(self.dt_rule.split(":", 1)[1])
        if self.dt_rule == "h2":
            n = max(1, int(round(self.t_final / h**2)))
            return self.t_final / n
        raise ConfigError(f"unknown dt rule {self.dt_rule!r}")


def _tag_tall_domain(mid, normal):
    if abs(mid[1] - 2.0) < 1e-9:
        return "GDE"
    if abs(mid[1]) < 1e-9:
        return "GDP"
    return "GNE" if mid[1] > 1.0 else "GNP"


def _tag_unit_square(mid, normal):
    return "GDP" if (abs(mid[0]) < 1e-9 or abs(mid[1]) < 1e-9) else "GNP"


_DEFAULT_PARAMS = {
    "jump-interface": dict(e_p=100.0, nu_p=0.3, e_e=10000.0, nu_e=0.45,
                           kappa=1e-6, eta=0.01, alpha=0.1, c0=1e-3),
    "small-edges": dict(e_p=10.0, nu_p=0.3, e_e=100.0, nu_e=0.4,
                        kappa=1.0, eta=1.0, alpha=1.0, c0=1.0),
    "transient": dict(e_p=1.0, nu_p=0.3, e_e=1.0, nu_e=0.4,
                      kappa=1.0, eta=1.0, alpha=1.0, c0=1.0),
    "circle-interface": dict(e_p=100.0, nu_p=0.49999, e_e=3e4, nu_e=0.499,
                             kappa=1e-4, eta=1.0, alpha=1.0, c0=1e-3),
    "mandel": dict(e_p=2.4e5, nu_p=0.4, e_e=4.8e5, nu_e=0.499,
                   kappa=1e-6, eta=1e-3, alpha=1.0, c0=2.5e-4),
}

MANDEL_TRACTION = 5e4
MANDEL_BASE_NX = 50


def get_case(case_id: str, **param_overrides) -> ManufacturedCase:
    """Build a fully populated case; keyword overrides replace the default
    Young/Poisson/coupling parameters (used by robustness sweeps)."""
    if case_id not in CASE_IDS:
        raise ConfigError(f"unknown case {case_id!r}; known: {CASE_IDS}")
    raw = dict(_DEFAULT_PARAMS[case_id])
    unknown = set(param_overrides) - set(raw)
    if unknown:
        raise ConfigError(f"unknown parameter overrides: {sorted(unknown)}")
    raw.update(param_overrides)
    params = MaterialParams.from_young_poisson(**raw)

    if case_id == "mandel":
        return _mandel_case(params)

    family = {"jump-interface": "trig-tall", "small-edges": "trig-unit",
              "transient": "quadratic-in-time",
              "circle-interface": "quadratic-in-time"}[case_id]
    fields = ExactFields(family, params)
    problem_body = lambda pts, t, tag: fields.body(pts, t, tag)
    problem_src = lambda pts, t: fields.source(pts, t)

    if case_id == "jump-interface":
        bc = _manufactured_bc(fields, u_tags=("GDE", "GDP"), p_tags=("GNP",),
                              traction_tags={"GNE": "E", "GNP": "P"},
                              flux_tags=("GDP",))
        builder = lambda level, seed=0: meshgen.two_grid_interface_mesh(
            3 * 2**level, boundary_tagger=_tag_tall_domain)
        return ManufacturedCase(
            case_id=case_id, params=params, stationary=True, fields=fields,
            problem=ProblemData(params, bc, problem_body, problem_src),
            mesh_builder=builder,
            description="stationary interface problem with data jumps, "
                        "non-matching rectangular grids")

    bc = _manufactured_bc(fields, u_tags=("GDP",), p_tags=("GNP",),
                          traction_tags={"GNP": "P"}, flux_tags=("GDP",))
    problem = ProblemData(params, bc, problem_body, problem_src)
    if case_id == "small-edges":
        builder = lambda level, seed=0: meshgen.square_inclusion_mesh(
            0.28 / 2**level, seed=seed, boundary_tagger=_tag_unit_square)
        return ManufacturedCase(
            case_id=case_id, params=params, stationary=True, fields=fields,
            problem=problem, mesh_builder=builder,
            description="stationary square-inclusion problem on Voronoi "
                        "meshes with short interface edges")
    if case_id == "transient":
        builder = lambda level, seed=0: meshgen.square_inclusion_mesh(
            0.28 / 2**level, seed=seed, boundary_tagger=_tag_unit_square)
        return ManufacturedCase(
            case_id=case_id, params=params, stationary=False, fields=fields,
            problem=problem, mesh_builder=builder,
            t_final=0.3125, dt_rule="h2",
            description="space-time manufactured solution, backward Euler "
                        "with dt = h^2")
    builder = lambda level, seed=0: meshgen.disc_inclusion_mesh(
        0.28 / 2**level, seed=seed, boundary_tagger=_tag_unit_square)
    return ManufacturedCase(
        case_id=case_id, params=params, stationary=False, fields=fields,
        problem=problem, mesh_builder=builder,
        t_final=0.3125, dt_rule="h2",
        description="transient run with a polygonal-circle interface in the "
                    "nearly incompressible regime")


def _mandel_case(params: MaterialParams) -> ManufacturedCase:
    width, height, split = 100.0, 40.0, 20.0

    def tagger(mid, normal):
        x, y = mid
        if abs(x) < 1e-9:
            return "slide_x"
        if abs(y) < 1e-9:
            return "slide_y"
        if abs(y - height) < 1e-9:
            return "load_top"
        if abs(x - width) < 1e-9:
            return "drained" if y < split else "free_side"
        raise ConfigError(f"untaggable Mandel boundary edge at {mid}")

    case_box = {}

    def traction(pts, normal, t):
        off = case_box["case"].load_off_time
        n = np.atleast_2d(pts).shape[0]
        mag = MANDEL_TRACTION if (off is None or t <= off) else 0.0
        out = np.zeros((n, 2))
        out[:, 1] = -mag
        return out

    zero_vec = lambda pts, t: np.zeros((np.atleast_2d(pts).shape[0], 2))
    zero_scal = lambda pts, t: np.zeros(np.atleast_2d(pts).shape[0])
    bc = BCSpec(
        u_dirichlet={"slide_x": ((True, False), zero_vec),
                     "slide_y": ((False, True), zero_vec)},
        p_dirichlet={"drained": zero_scal},
        tractions={"load_top": traction},
        free_tags={"drained", "free_side"},
    )
    builder = lambda level, seed=0: meshgen.mandel_mesh(
        MANDEL_BASE_NX * 2**level, boundary_tagger=tagger,
        width=width, height=height, split=split)
    case = ManufacturedCase(
        case_id="mandel", params=params, stationary=False, fields=None,
        problem=ProblemData(params, bc), mesh_builder=builder,
        t_final=1000.0, dt_rule="fixed:10.0",
        description="consolidation of an elastic layer over a poroelastic "
                    "reservoir under top compression (no closed form)")
    case_box["case"] = case
    return case
