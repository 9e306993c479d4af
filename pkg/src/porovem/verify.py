"""Error proxies, experimental rates, and the convergence-study driver.

Errors are measured in the computable projections of the discrete fields:
the L2 proxy compares the exact field against its cellwise L2 projection
of the discrete solution, the H1 proxy compares gradients against the
gradient of the energy projection. The total pressure is already a
cellwise polynomial, so only its L2 error is reported.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field

import numpy as np

from .assembly import DiscreteSystem, TransientState, interpolate_fields
from .cases import ManufacturedCase
from .exceptions import ConfigError, NoExactSolution
from .monomials import n_monomials

RATE_FLOOR = 1e-9  # below this absolute error, rates are quadrature noise


def rate(e_coarse: float, e_fine: float, h_coarse: float, h_fine: float
         ) -> float:
    """Experimental decay rate log(Ec/Ef) / log(hc/hf); NaN when undefined."""
    if h_coarse <= h_fine:
        raise ConfigError("rate needs h_coarse > h_fine")
    if e_coarse <= 0.0 or e_fine <= 0.0:
        return float("nan")
    if e_coarse < RATE_FLOOR and e_fine < RATE_FLOOR:
        return float("nan")
    return float(np.log(e_coarse / e_fine) / np.log(h_coarse / h_fine))


@dataclass
class ErrorRow:
    h: float
    E0_u: float
    E1_u: float
    E0_p: float
    E1_p: float
    E0_psi: float
    dt: float | None = None
    wall_s: float = 0.0
    residual: float = 0.0
    n_cells: int = 0
    n_dofs: int = 0

    _FIELDS = ("E0_u", "E1_u", "E0_p", "E1_p", "E0_psi")


@dataclass
class ErrorReport:
    case_id: str
    k: int
    stab: str
    rows: list[ErrorRow] = field(default_factory=list)

    def rates(self) -> list[dict]:
        """Per-interval rates between consecutive rows, in row order
        (first entry belongs to the second row)."""
        out = []
        for prev, cur in zip(self.rows, self.rows[1:]):
            out.append({
                name[1:]: rate(getattr(prev, name), getattr(cur, name),
                               prev.h, cur.h)
                for name in ErrorRow._FIELDS
            })
        return out

    def final_rates(self) -> dict:
        if len(self.rows) < 2:
            raise ConfigError("need at least two rows to compute rates")
        return self.rates()[-1]

    def max_residual(self) -> float:
        return max((r.residual for r in self.rows), default=0.0)

    def to_csv(self, include_wall: bool = True) -> str:
        """Table in the experiment column layout (transient runs carry dt)."""
        transient = any(r.dt is not None for r in self.rows)
        cols = ["h"] + (["dt"] if transient else [])
        for name in ErrorRow._FIELDS:
            j = name[1]
            cols += [name, f"r{j}_{name.split('_')[1]}"]
        if include_wall:
            cols.append("wall_s")
        rates = [dict.fromkeys(
            (n[1:] for n in ErrorRow._FIELDS), float("nan"))] + self.rates()
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(cols)
        for row, rr in zip(self.rows, rates):
            rec = [f"{row.h:.6g}"]
            if transient:
                rec.append(f"{row.dt:.6g}" if row.dt is not None else "")
            for name in ErrorRow._FIELDS:
                rec.append(f"{getattr(row, name):.6e}")
                rv = rr[name[1:]]
                rec.append("" if np.isnan(rv) else f"{rv:.3f}")
            if include_wall:
                rec.append(f"{row.wall_s:.2f}")
            writer.writerow(rec)
        return buf.getvalue()


def compute_errors(system: DiscreteSystem, U, P, Z,
                   case: ManufacturedCase, t: float = 0.0) -> dict:
    """Projection-based error proxies of one discrete solution."""
    if case.fields is None:
        raise NoExactSolution("error proxies need closed-form fields")
    mesh, k = system.mesh, system.k
    dm = system.dofmap
    deg = 2 * k + 2
    fields = case.fields

    pts_chunks, slices = [], []
    count = 0
    for i in range(mesh.n_cells):
        pack = system.ops(i).quad_pack(deg)
        pts = pack["pts"] + system.shift(i)
        pts_chunks.append(pts)
        slices.append((count, count + len(pts)))
        count += len(pts)
    pts_all = np.vstack(pts_chunks)

    u_ex = fields.u(pts_all, t)
    gu_ex = fields.grad_u(pts_all, t)
    p_ex = fields.p(pts_all, t)
    gp_ex = fields.grad_p(pts_all, t)
    psi_ex = {tag: fields.psi(pts_all, t, tag) for tag in ("P", "E")}

    acc = dict.fromkeys(("E0_u", "E1_u", "E0_p", "E1_p", "E0_psi"), 0.0)
    nk = n_monomials(k)
    for i in range(mesh.n_cells):
        ops = system.ops(i)
        tag = mesh.cell_tags[i]
        pack = ops.quad_pack(deg)
        w = pack["w"]
        lo, hi = slices[i]
        mk = ops.basis_values(pack, k)
        mkm1 = ops.basis_values(pack, k - 1)

        ud = U[dm.cell_v_dofs(i)]
        c0u = ops.pi0_v_k @ ud
        diff = u_ex[lo:hi] - np.column_stack([mk @ c0u[:nk], mk @ c0u[nk:]])
        acc["E0_u"] += w @ (diff**2).sum(axis=1)
        cnu = ops.pi_nabla_v @ ud
        gxx = mkm1 @ (ops.Dx_k @ cnu[:nk])
        gxy = mkm1 @ (ops.Dy_k @ cnu[:nk])
        gyx = mkm1 @ (ops.Dx_k @ cnu[nk:])
        gyy = mkm1 @ (ops.Dy_k @ cnu[nk:])
        gd = gu_ex[lo:hi]
        acc["E1_u"] += w @ ((gd[:, 0, 0] - gxx)**2 + (gd[:, 0, 1] - gxy)**2
                            + (gd[:, 1, 0] - gyx)**2 + (gd[:, 1, 1] - gyy)**2)

        zd = Z[dm.cell_z_dofs(i)]
        acc["E0_psi"] += w @ (psi_ex[tag][lo:hi] - mkm1 @ zd)**2

        if tag == "P":
            pd = P[dm.cell_q_dofs(i)]
            c0p = ops.pi0_q @ pd
            acc["E0_p"] += w @ (p_ex[lo:hi] - mk @ c0p)**2
            cnp = ops.pi_nabla_q @ pd
            px = mkm1 @ (ops.Dx_k @ cnp)
            py = mkm1 @ (ops.Dy_k @ cnp)
            acc["E1_p"] += w @ ((gp_ex[lo:hi, 0] - px)**2
                                + (gp_ex[lo:hi, 1] - py)**2)
    return {name: float(np.sqrt(max(val, 0.0))) for name, val in acc.items()}


def solve_case_on_mesh(case: ManufacturedCase, mesh, k: int,
                       stab: str = "dofi-dofi",
                       edge_stab_scope: str = "displacement"):
    """Assemble and solve one refinement level; returns (system, U, P, Z,
    dt, residual_max)."""
    system = DiscreteSystem(mesh, k, case.problem, stab, edge_stab_scope)
    if case.stationary:
        sol = system.solve_stationary(0.0)
        return system, sol.U, sol.P, sol.Z, None, sol.residual
    dt = case.timestep(mesh.h)
    stepper = system.stepper(dt)
    state = _initial_state(system, case, stepper)
    n_steps = int(round(case.t_final / dt))
    for _ in range(n_steps):
        state = stepper.step(state)
    return (system, state.U, state.P, state.Z, dt, stepper.max_residual)


def _initial_state(system, case, stepper) -> TransientState:
    f = case.fields
    if f is None:
        return stepper.initial_state()
    U0, P0, Z0 = interpolate_fields(
        system,
        u_fn=lambda pts, t: f.u(pts, t),
        div_u_fn=lambda pts, t: f.div_u(pts, t),
        p_fn=lambda pts, t: f.p(pts, t),
        psi_fn=lambda pts, t, tag: f.psi(pts, t, tag),
        t=0.0)
    return stepper.initial_state(U0, P0, Z0)


def run_convergence_study(case: ManufacturedCase, k: int, stab: str,
                          levels: int, seed: int = 0,
                          edge_stab_scope: str = "displacement",
                          level_offset: int = 0) -> ErrorReport:
    """Uniform refinement study; errors, rates and wall time per level."""
    if levels < 1:
        raise ConfigError("study needs at least one level")
    report = ErrorReport(case_id=case.case_id, k=k, stab=stab)
    for level in range(level_offset, level_offset + levels):
        t0 = time.perf_counter()
        mesh = case.mesh_builder(level, seed)
        system, U, P, Z, dt, residual = solve_case_on_mesh(
            case, mesh, k, stab, edge_stab_scope)
        t_eval = 0.0 if case.stationary else case.t_final
        errors = compute_errors(system, U, P, Z, case, t_eval)
        report.rows.append(ErrorRow(
            h=mesh.h, dt=dt, wall_s=time.perf_counter() - t0,
            residual=residual, n_cells=mesh.n_cells, n_dofs=system.dofmap.N,
            **errors))
    return report
