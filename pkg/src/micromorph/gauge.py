"""Gauge-invariant incompatible elasticity model for the elastic distortion e.

Strong form: ``Curl(Lc Curl e) + Ce sym e + 2 mu_c skew e = M`` with
tangential boundary condition ``e_i x n = 0`` on every row.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import fem
from .assembly import SystemMatrices, assemble_gauge, assemble_load
from .fem import FeSpace
from .fields import LEVI_CIVITA, CallableField, curl_rows_grad
from .helmholtz import Decomposition, HelmholtzOperators, decompose
from .linalg import CGResult, cg_solve, dot
from .material import MaterialError, MaterialModel, apply_lc, from_mandel, mandel, skew
from .mesh import TetMesh

DEFAULT_K = np.array([[1.0, 0.5, 0.0], [-0.3, 1.0, 0.2], [0.1, -0.4, 1.0]])


@dataclass
class GaugeProblem:
    mesh: TetMesh
    space_e: FeSpace
    material: MaterialModel
    M: object  # field with .value(x) -> (n, 3, 3), or None for zero data

    def __post_init__(self):
        if self.material.mu_c < 0:
            raise MaterialError(f"mu_c must be >= 0, got {self.material.mu_c}")
        if self.space_e.kind != "nedelec0_tensor3" or self.space_e.mesh is not self.mesh:
            raise ValueError("space_e must be a nedelec0_tensor3 space on the problem mesh")

    @classmethod
    def on_mesh(cls, mesh: TetMesh, material: MaterialModel, M=None) -> "GaugeProblem":
        return cls(mesh, fem.build_space(mesh, "nedelec0_tensor3"), material, M)


def gauge_rhs(e_star, material: MaterialModel) -> CallableField:
    """Body moment ``M = Curl(Lc Curl e*) + Ce sym e* + 2 mu_c skew e*``."""
    if not material.is_constant:
        raise MaterialError("manufactured data needs constant coefficients")
    ce, _, lc = material.constants()

    def fn(x):
        e = e_star.value(x)
        he = e_star.hessian(x)
        dcurl = curl_rows_grad(he)  # (n, 3, 3, k)
        dm = np.moveaxis(apply_lc(lc, np.moveaxis(dcurl, -1, 1)), 1, -1)
        curl_m = np.einsum("akl,...ilk->...ia", LEVI_CIVITA, dm)
        sym_part = from_mandel(np.einsum("ab,nb->na", ce, mandel(e)))
        return curl_m + sym_part + 2.0 * material.mu_c * skew(e)

    return CallableField((3, 3), fn)


@dataclass
class GaugeSolution:
    problem: GaugeProblem
    e: np.ndarray
    cg: CGResult
    system: SystemMatrices
    load: np.ndarray
    decomposition: Decomposition | None = None
    diagnostics: dict = field(default_factory=dict)


def solve_gauge(p: GaugeProblem, rel_tol: float = 1e-10, max_iter: int | None = None,
                diagnostics: bool = True) -> GaugeSolution:
    """Solve the gauge model and check its decomposed form.

    Diagnostics: the energy identity ``e^T K e = b^T e``; the weak balance
    of linear momentum (residual tested against discrete gradients, curl
    term excluded); the residual of the gradient-tested decomposed problem
    for q; and the agreement of q with an independent elasticity solve of
    that auxiliary problem.
    """
    load = assemble_load(None, p.space_e, None, p.M) if p.M is not None else np.zeros(p.space_e.dof_count)
    system = assemble_gauge(p.mesh, p.space_e, p.material, rhs=load, keep_parts=diagnostics)
    cg = cg_solve(system.K, system.rhs, rel_tol=rel_tol, max_iter=max_iter)
    sol = GaugeSolution(p, cg.x, cg, system, load)
    if not diagnostics:
        return sol

    e = cg.x
    be = dot(system.rhs, e)
    sol.diagnostics["energy_identity"] = abs(dot(e, system.K @ e) - be) / abs(be) if be else abs(dot(e, system.K @ e))

    ops = HelmholtzOperators(p.space_e)
    KA, KC = system.parts["A"], system.parts["curl"]
    f = ops.free
    GtB = (ops.G.T @ load)[f]
    balance = (ops.G.T @ (KA @ e))[f] - GtB
    nb = np.linalg.norm(GtB)
    sol.diagnostics["balance_defect"] = float(np.linalg.norm(balance) / nb) if nb else float(np.linalg.norm(balance))

    dec = decompose(e, ops=ops)
    sol.decomposition = dec
    aux = (ops.G.T @ KA @ ops.G).tocsr()[f][:, f]
    rhs = GtB - (ops.G.T @ (KA @ dec.Q))[f]
    lhs = aux @ dec.q[f]
    nr = np.linalg.norm(rhs)
    sol.diagnostics["decomposed_defect"] = float(np.linalg.norm(lhs - rhs) / nr) if nr else float(np.linalg.norm(lhs))
    if nr:
        q_hat = cg_solve(aux, rhs, rel_tol=1e-12).x
        sol.diagnostics["aux_q_agreement"] = float(np.linalg.norm(q_hat - dec.q[f]) / max(np.linalg.norm(dec.q[f]), 1e-300))
    else:
        sol.diagnostics["aux_q_agreement"] = 0.0
    sol.diagnostics["pythagoras_defect"] = dec.pythagoras_defect
    sol.diagnostics["divergence_defect"] = dec.divergence_defect
    return sol


def invariance_report(mesh: TetMesh, material: MaterialModel, samples: int = 5, seed: int = 0) -> dict:
    """Operator-level gauge check on discrete gradients ``G tau``.

    Reports the largest ratio ``curl-energy(G tau) / |G tau|^2`` (zero by the
    discrete complex) and the smallest ratio ``full-energy(G tau) / |G tau|^2``
    (positive: the full gauge form is not degenerate on gradients).
    """
    space = fem.build_space(mesh, "nedelec0_tensor3")
    system = assemble_gauge(mesh, space, material, keep_parts=True)
    ops = HelmholtzOperators(space)
    rng = np.random.default_rng(seed)
    curl_ratio, full_ratio = 0.0, np.inf
    KC, K = system.parts["curl"], system.parts["A"] + system.parts["curl"]
    for _ in range(samples):
        tau = np.zeros(ops.laplacian.shape[0])
        tau[ops.free] = rng.standard_normal(len(ops.free))
        g = ops.G @ tau
        nrm = dot(g, ops.mass @ g)
        if nrm == 0:
            continue
        curl_ratio = max(curl_ratio, abs(dot(g, KC @ g)) / nrm)
        full_ratio = min(full_ratio, dot(g, K @ g) / nrm)
    return {"curl_energy_of_gradients": curl_ratio, "min_energy_on_gradients": full_ratio}

