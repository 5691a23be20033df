"""Manufactured solutions, error norms and the verification studies.

Rate targets used by the studies come from standard approximation theory
(first order for P1 displacements and lowest-order Nedelec microdistortions);
they are expectations, not measured reference data.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import fem
from .assembly import SystemMatrices, assemble_gauge, assemble_load, assemble_mass, assemble_micromorphic
from .fields import AnalyticField, CallableField, curl_rows, curl_rows_grad, sine_product, LEVI_CIVITA
from .gauge import DEFAULT_K, GaugeProblem, gauge_rhs, invariance_report, solve_gauge
from .helmholtz import HelmholtzOperators, decompose
from .linalg import CGResult, SolverError, cg_solve, smallest_generalized_eigenvalue
from .material import MaterialError, MaterialModel, apply_lc, default_material, from_mandel, mandel
from .mesh import TetMesh, build_cube_mesh

P_ARMS = {"nedelec": "nedelec0_tensor3", "lagrange": "lagrange_tensor3", "lagrange_h1": "lagrange_tensor3"}


# --------------------------------------------------------------------------
# manufactured data


def default_pair() -> tuple[AnalyticField, AnalyticField]:
    """u* = s (1, 1, 1), P* = s I with s = sin(pi x) sin(pi y) sin(pi z)."""
    s = sine_product(1)
    return AnalyticField.scaled(s, np.ones(3)), AnalyticField.scaled(s, np.eye(3))


def default_gauge_field(K=None) -> AnalyticField:
    return AnalyticField.scaled(sine_product(1), DEFAULT_K if K is None else K)


def manufacture_rhs(u_star: AnalyticField, P_star: AnalyticField, material: MaterialModel):
    """Volume force and body moment for which (u*, P*) solves the strong form.

    ``f = -Div(Ce sym(grad u* - P*))`` and
    ``M = Curl(Lc Curl P*) - Ce sym(grad u* - P*) + Cmicro sym P*``.
    """
    if not material.is_constant:
        raise MaterialError("manufactured data needs constant coefficients")
    ce, cm, lc = material.constants()

    def stress(x):
        return from_mandel(np.einsum("ab,nb->na", ce, mandel(u_star.grad(x) - P_star.value(x))))

    def f(x):
        du = u_star.hessian(x)  # [n, i, j, k] = d_j d_k u_i
        dP = P_star.grad(x)  # [n, i, j, k] = d_k P_ij
        deps = np.moveaxis(du - dP, -1, 1)  # [n, k, i, j]
        dsig = from_mandel(np.einsum("ab,nkb->nka", ce, mandel(deps)))  # [n, k, i, j]
        return -np.einsum("njij->ni", dsig)

    def M(x):
        dcurl = curl_rows_grad(P_star.hessian(x))  # [n, i, l, k]
        dm = np.moveaxis(apply_lc(lc, np.moveaxis(dcurl, -1, 1)), 1, -1)
        curl_m = np.einsum("akl,nilk->nia", LEVI_CIVITA, dm)
        micro = from_mandel(np.einsum("ab,nb->na", cm, mandel(P_star.value(x))))
        return curl_m - stress(x) + micro

    return CallableField((3,), f), CallableField((3, 3), M)


# --------------------------------------------------------------------------
# solutions and norms


@dataclass
class MicromorphicSolution:
    mesh: TetMesh
    space_u: fem.FeSpace
    space_P: fem.FeSpace
    material: MaterialModel
    x: np.ndarray
    cg: CGResult
    system: SystemMatrices
    load: np.ndarray

    @property
    def u(self) -> np.ndarray:
        return self.x[: self.space_u.dof_count]

    @property
    def P(self) -> np.ndarray:
        return self.x[self.space_u.dof_count:]


def solve_micromorphic(mesh: TetMesh, material: MaterialModel, f=None, M=None, u_order: int = 1,
                       p_arm: str = "nedelec", rel_tol: float = 1e-10, max_iter: int | None = None,
                       keep_parts: bool = False) -> MicromorphicSolution:
    if p_arm not in P_ARMS:
        raise ValueError(f"unknown P discretisation {p_arm!r}")
    su = fem.build_space(mesh, "lagrange_vec3", u_order)
    sP = fem.build_space(mesh, P_ARMS[p_arm])
    load = assemble_load(su, sP, f, M)
    system = assemble_micromorphic(mesh, su, sP, material, rhs=load, keep_parts=keep_parts)
    cg = cg_solve(system.K, system.rhs, rel_tol=rel_tol, max_iter=max_iter)
    return MicromorphicSolution(mesh, su, sP, material, cg.x, cg, system, load)


def _sq_errors(mesh, cells, q, vals_h, vals_star):
    wdet = q.weights[None, :] * np.abs(np.linalg.det(mesh.jacobians[cells]))[:, None]
    d = (vals_h - vals_star).reshape(vals_h.shape[:2] + (-1,))
    return float(np.sum(wdet * np.einsum("cqa,cqa->cq", d, d)))


def tensor_errors(space_P: fem.FeSpace, P: np.ndarray, P_star, degree: int = 6) -> tuple[float, float]:
    """``(||P_h - P*||, ||Curl P_h - Curl P*||)`` in L2."""
    mesh = space_P.mesh
    q = fem.quadrature(degree)
    eP = eC = 0.0
    for cells in fem.iter_chunks(mesh.num_cells, 512):
        x = fem.physical_points(mesh, cells, q.points)
        shape = x.shape[:2]
        pts = x.reshape(-1, 3)
        ph, ch = fem.eval_tensor(space_P, P, cells, q.points)
        eP += _sq_errors(mesh, cells, q, ph, P_star.value(pts).reshape(shape + (3, 3)))
        eC += _sq_errors(mesh, cells, q, ch, curl_rows(P_star.grad(pts)).reshape(shape + (3, 3)))
    return math.sqrt(eP), math.sqrt(eC)


def vector_errors(space_u: fem.FeSpace, u: np.ndarray, u_star, degree: int = 6) -> tuple[float, float]:
    """``(||u_h - u*||, |u_h - u*|_H1)``."""
    mesh = space_u.mesh
    q = fem.quadrature(degree)
    eL = eH = 0.0
    for cells in fem.iter_chunks(mesh.num_cells, 512):
        x = fem.physical_points(mesh, cells, q.points)
        shape = x.shape[:2]
        pts = x.reshape(-1, 3)
        uh, gh = fem.eval_vector(space_u, u, cells, q.points)
        eL += _sq_errors(mesh, cells, q, uh, u_star.value(pts).reshape(shape + (3,)))
        eH += _sq_errors(mesh, cells, q, gh, u_star.grad(pts).reshape(shape + (3, 3)))
    return math.sqrt(eL), math.sqrt(eH)


def error_norms(sol: MicromorphicSolution, u_star, P_star) -> dict:
    eLu, eHu = vector_errors(sol.space_u, sol.u, u_star)
    eLP, eCP = tensor_errors(sol.space_P, sol.P, P_star)
    return {"e_L2_u": eLu, "e_H1_u": eHu, "e_L2_P": eLP, "e_curl_P": eCP}


# --------------------------------------------------------------------------
# rate tables


@dataclass
class RateTable:
    rows: list
    error_keys: tuple
    columns: tuple = ()
    notes: list = field(default_factory=list)

    def __post_init__(self):
        self.compute_rates()

    def compute_rates(self) -> None:
        prev = None
        for row in self.rows:
            for key in self.error_keys:
                row[f"rate_{key}"] = math.nan
                if prev is not None and row.get("status") == "ok" and prev.get("status") == "ok":
                    e0, e1 = prev[key], row[key]
                    if e0 > 0 and e1 > 0:
                        row[f"rate_{key}"] = math.log(e0 / e1) / math.log(prev["h"] / row["h"])
            prev = row

    def finest_rates(self) -> dict:
        if len(self.rows) < 2:
            return {}
        return {k: self.rows[-1][f"rate_{k}"] for k in self.error_keys}

    def to_csv(self) -> str:
        cols = list(self.columns) or list(self.rows[0].keys())
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for row in self.rows:
            w.writerow([_fmt(row.get(c, "")) for c in cols])
        return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


MICRO_ERRORS = ("e_L2_u", "e_H1_u", "e_L2_P", "e_curl_P")
MICRO_COLUMNS = ("n", "h", "dofs_u", "dofs_P") + MICRO_ERRORS + tuple(f"rate_{k}" for k in MICRO_ERRORS) + (
    "cg_iters", "residual", "status")


def convergence_study(levels=(2, 4, 8, 16), p_arm: str = "nedelec", material: MaterialModel | None = None,
                      u_order: int = 1, pair=None, rel_tol: float = 1e-10,
                      max_iter: int | None = None) -> RateTable:
    """Solve the manufactured problem on each level and tabulate errors/rates."""
    material = material or default_material()
    u_star, P_star = pair or default_pair()
    f, M = manufacture_rhs(u_star, P_star, material)
    rows = []
    for n in levels:
        mesh = build_cube_mesh(n)
        row = {"n": n, "h": mesh.h}
        try:
            sol = solve_micromorphic(mesh, material, f, M, u_order=u_order, p_arm=p_arm, rel_tol=rel_tol,
                                     max_iter=max_iter)
        except SolverError as exc:
            row.update({k: math.nan for k in MICRO_ERRORS}, status=f"solver_failure: {exc}")
            rows.append(row)
            continue
        row.update(dofs_u=sol.space_u.dof_count, dofs_P=sol.space_P.dof_count)
        row.update(error_norms(sol, u_star, P_star))
        row.update(cg_iters=sol.cg.iterations, residual=sol.cg.residual, status="ok")
        rows.append(row)
    return RateTable(rows, MICRO_ERRORS, MICRO_COLUMNS,
                     notes=["rate targets are approximation-theory expectations"])


# --------------------------------------------------------------------------
# Korn constant


def korn_matrices(mesh: TetMesh):
    """Free-DOF blocks of the sym+Curl energy and the L2 mass on Nedelec fields."""
    space = fem.build_space(mesh, "nedelec0_tensor3")
    unit = MaterialModel(np.eye(6), np.eye(6), np.eye(9), mu_c=0.0, lc_kind="scalar")
    K = assemble_gauge(mesh, space, unit, keep_parts=True)
    K = (K.parts["A"] + K.parts["curl"]).tocsr()
    M = assemble_mass(space)
    free = space.free_dofs
    return K[free][:, free].tocsr(), M[free][:, free].tocsr()


def korn_constant_study(levels=(1, 2, 4), tol: float = 1e-7) -> list[dict]:
    """Discrete incompatible-Korn constants ``c_h = 1 / lambda_min``."""
    rows = []
    for n in levels:
        mesh = build_cube_mesh(n)
        K, M = korn_matrices(mesh)
        res = smallest_generalized_eigenvalue(K, M, tol=tol)
        rows.append({"n": n, "h": mesh.h, "dofs_P": K.shape[0], "lambda_min": res.value,
                     "korn_constant": 1.0 / res.value, "iterations": res.iterations})
    return rows


def dense_korn_constant(mesh: TetMesh) -> float:
    K, M = korn_matrices(mesh)
    return 1.0 / float(scipy.linalg.eigh(K.toarray(), M.toarray(), eigvals_only=True)[0])


# --------------------------------------------------------------------------
# decomposed weak form


def decomposed_residual_check(sol: MicromorphicSolution, q_perturbation: np.ndarray | None = None) -> dict:
    """Residuals of the weak form rewritten with P = grad q + Q.

    ``defect``: the full decomposed form (elastic part on grad q + Q, curl
    part on Q only) tested against all discrete (v, W).
    ``aux_defect``: the auxiliary problem for (u, q) tested against (v, grad w)
    with the Q-dependent terms moved to the right-hand side.
    Both are relative to the corresponding right-hand-side norms.
    """
    if sol.space_P.kind != "nedelec0_tensor3":
        raise ValueError("decomposition requires the Nedelec arm")
    parts = sol.system.parts
    if not parts:
        full = assemble_micromorphic(sol.mesh, sol.space_u, sol.space_P, sol.material, keep_parts=True)
        parts = full.parts
    KA, KC = parts["A"], parts["curl"]
    ops = HelmholtzOperators(sol.space_P)
    dec = decompose(sol.P, ops=ops)
    q = dec.q if q_perturbation is None else dec.q + q_perturbation
    n_u = sol.space_u.dof_count
    zeros_u = np.zeros(n_u)
    xa = np.concatenate([sol.u, ops.G @ q + dec.Q])
    xc = np.concatenate([zeros_u, dec.Q])
    r = KA @ xa + KC @ xc - sol.load
    free = sol.system.free
    bnorm = np.linalg.norm(sol.load[free])
    defect = float(np.linalg.norm(r[free]) / bnorm) if bnorm else float(np.linalg.norm(r[free]))

    # auxiliary problem: test functions (v, G w), v and w vanishing on the boundary
    free_u = sol.space_u.free_dofs
    rhs_aux = sol.load - KA @ np.concatenate([zeros_u, dec.Q])
    lhs_aux = KA @ np.concatenate([sol.u, ops.G @ q])
    res_aux = lhs_aux - rhs_aux
    aux_r = np.concatenate([res_aux[:n_u][free_u], (ops.G.T @ res_aux[n_u:])[ops.free]])
    aux_b = np.concatenate([rhs_aux[:n_u][free_u], (ops.G.T @ rhs_aux[n_u:])[ops.free]])
    nb = np.linalg.norm(aux_b)
    aux = float(np.linalg.norm(aux_r) / nb) if nb else float(np.linalg.norm(aux_r))
    return {"defect": defect, "aux_defect": aux, "pythagoras_defect": dec.pythagoras_defect,
            "divergence_defect": dec.divergence_defect}


# --------------------------------------------------------------------------
# gauge model study

GAUGE_ERRORS = ("e_L2_e", "e_curl_e")
GAUGE_COLUMNS = ("n", "h", "dofs_e") + GAUGE_ERRORS + tuple(f"rate_{k}" for k in GAUGE_ERRORS) + (
    "cg_iters", "residual", "balance_defect", "decomposed_defect", "aux_q_agreement", "status")


def gauge_study(levels=(4, 8, 16), mu_c: float = 1.0, e_star: AnalyticField | None = None,
                material: MaterialModel | None = None, rel_tol: float = 1e-10,
                max_iter: int | None = None) -> tuple[RateTable, dict]:
    """Manufactured convergence of the gauge model plus the invariance report."""
    if material is None:
        material = default_material(mu_c)
    e_star = e_star or default_gauge_field()
    M = gauge_rhs(e_star, material)
    rows = []
    for n in levels:
        mesh = build_cube_mesh(n)
        row = {"n": n, "h": mesh.h}
        try:
            sol = solve_gauge(GaugeProblem.on_mesh(mesh, material, M), rel_tol=rel_tol, max_iter=max_iter)
        except SolverError as exc:
            row.update({k: math.nan for k in GAUGE_ERRORS}, status=f"solver_failure: {exc}")
            rows.append(row)
            continue
        eL, eC = tensor_errors(sol.problem.space_e, sol.e, e_star)
        row.update(dofs_e=sol.problem.space_e.dof_count, e_L2_e=eL, e_curl_e=eC, cg_iters=sol.cg.iterations,
                   residual=sol.cg.residual, status="ok")
        row.update({k: sol.diagnostics[k] for k in ("balance_defect", "decomposed_defect", "aux_q_agreement")})
        rows.append(row)
    table = RateTable(rows, GAUGE_ERRORS, GAUGE_COLUMNS,
                      notes=["rate targets are approximation-theory expectations"])
    report = invariance_report(build_cube_mesh(min(levels)), material)
    return table, report
