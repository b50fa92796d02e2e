"""Incremental-iterative elastoplastic solver for plane stress.

Von Mises yield with linear isotropic hardening, integrated by a backward
Euler return mapping solved directly in the three-component stress space by
a local Newton iteration. Global equilibrium per load increment uses full
Newton-Raphson with the algorithmically consistent tangent, so convergence
is quadratic. The per-Gauss-point kernels are batched over all points of
the mesh.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, SampleFailure
from .fem_elastic import band_plan, constitutive_plane_stress
from .mesh import MeshLevel, distribute_midspan_load, element_quadrature

#: Deviatoric projector in Voigt order (xx, yy, xy) for plane stress.
P_DEV = np.array([
    [2.0, -1.0, 0.0],
    [-1.0, 2.0, 0.0],
    [0.0, 0.0, 6.0],
]) / 3.0

LOCAL_TOL = 1e-10
LOCAL_MAX_ITER = 50
EQUILIBRIUM_RTOL = 1e-4
NEWTON_MAX_ITER = 30


@dataclass
class PlasticMaterial:
    """Per-element modulus, yield stress and linear hardening modulus."""

    E_per_element: np.ndarray
    nu: float
    sigma_y: float
    H: float

    def __post_init__(self):
        self.E_per_element = np.atleast_1d(np.asarray(self.E_per_element, dtype=float))
        if np.any(self.E_per_element <= 0.0):
            raise ValueError("Young's modulus must be positive elementwise")
        if self.sigma_y <= 0.0:
            raise ValueError("yield stress must be positive")
        if self.H < 0.0:
            raise ValueError("hardening modulus must be non-negative")


@dataclass
class GaussPointState:
    """History variables of one quadrature point."""

    stress: np.ndarray = field(default_factory=lambda: np.zeros(3))
    plastic_strain: np.ndarray = field(default_factory=lambda: np.zeros(3))
    kappa: float = 0.0


@dataclass(frozen=True)
class LoadSchedule:
    """Monotone load staircase: start to end in equal increments (N)."""

    start: float
    end: float
    increment: float

    def __post_init__(self):
        if self.increment <= 0.0:
            raise ValueError("increment must be positive")
        n = (self.end - self.start) / self.increment
        if n < 1.0 - 1e-9 or abs(n - round(n)) > 1e-9:
            raise ValueError("(end - start) must be a positive multiple of increment")

    @property
    def n_increments(self) -> int:
        return int(round((self.end - self.start) / self.increment))

    def values(self) -> np.ndarray:
        return self.start + self.increment * np.arange(1, self.n_increments + 1)


def equivalent_stress(stress: np.ndarray) -> np.ndarray:
    """Von Mises equivalent stress, batched over the leading axis."""
    s = np.atleast_2d(stress)
    q = np.einsum("ni,ij,nj->n", s, P_DEV, s)
    out = np.sqrt(np.maximum(1.5 * q, 0.0))
    return out if stress.ndim > 1 else float(out[0])


def yield_function(stress: np.ndarray, kappa, sigma_y: float, hardening: float):
    return equivalent_stress(stress) - (sigma_y + hardening * np.asarray(kappa))


def _return_map_batch(d_strain, stress_n, kappa_n, d_el, sigma_y, hardening):
    """Backward Euler update for a batch of Gauss points.

    Parameters are (n, 3), (n, 3), (n,), (n, 3, 3) plus the scalar yield
    parameters. Returns updated stress, kappa, plastic strain increment and
    the consistent tangent (n, 3, 3).
    """
    stress_tr = stress_n + np.einsum("nij,nj->ni", d_el, d_strain)
    f_tr = yield_function(stress_tr, kappa_n, sigma_y, hardening)
    plastic = f_tr > 0.0

    stress_out = stress_tr.copy()
    kappa_out = kappa_n.copy()
    d_eps_p = np.zeros_like(stress_tr)
    tangent = d_el.copy()
    if not np.any(plastic):
        return stress_out, kappa_out, d_eps_p, tangent, plastic

    idx = np.nonzero(plastic)[0]
    sig = stress_tr[idx].copy()
    sig_tr = stress_tr[idx]
    kap_n = kappa_n[idx]
    d_sub = d_el[idx]
    n_pl = idx.size
    dlam = np.zeros(n_pl)
    eye = np.broadcast_to(np.eye(3), (n_pl, 3, 3))

    converged = np.zeros(n_pl, dtype=bool)
    for _ in range(LOCAL_MAX_ITER):
        seq = equivalent_stress(sig)
        flow = 1.5 * (sig @ P_DEV.T) / seq[:, None]
        r_sig = sig - sig_tr + dlam[:, None] * np.einsum("nij,nj->ni", d_sub, flow)
        r_f = seq - (sigma_y + hardening * (kap_n + dlam))
        converged = (np.abs(r_f) <= LOCAL_TOL * sigma_y) & (
            np.linalg.norm(r_sig, axis=1) <= LOCAL_TOL * sigma_y
        )
        if np.all(converged):
            break
        dflow = (1.5 * P_DEV[None, :, :] - np.einsum("ni,nj->nij", flow, flow)) / seq[:, None, None]
        jac = np.empty((n_pl, 4, 4))
        jac[:, :3, :3] = eye + dlam[:, None, None] * np.einsum("nij,njk->nik", d_sub, dflow)
        jac[:, :3, 3] = np.einsum("nij,nj->ni", d_sub, flow)
        jac[:, 3, :3] = flow
        jac[:, 3, 3] = -hardening
        rhs = np.concatenate([r_sig, r_f[:, None]], axis=1)
        step = np.linalg.solve(jac, rhs[:, :, None])[:, :, 0]
        active = ~converged
        sig[active] -= step[active, :3]
        dlam[active] -= step[active, 3]
    if not np.all(converged):
        raise SampleFailure(
            f"plane-stress return mapping stalled on {int(np.sum(~converged))} points"
        )

    # Consistent tangent: differentiate the converged system wrt total strain.
    seq = equivalent_stress(sig)
    flow = 1.5 * (sig @ P_DEV.T) / seq[:, None]
    dflow = (1.5 * P_DEV[None, :, :] - np.einsum("ni,nj->nij", flow, flow)) / seq[:, None, None]
    jac = np.empty((n_pl, 4, 4))
    jac[:, :3, :3] = eye + dlam[:, None, None] * np.einsum("nij,njk->nik", d_sub, dflow)
    jac[:, :3, 3] = np.einsum("nij,nj->ni", d_sub, flow)
    jac[:, 3, :3] = flow
    jac[:, 3, 3] = -hardening
    rhs = np.zeros((n_pl, 4, 3))
    rhs[:, :3, :] = d_sub
    tangent[idx] = np.linalg.solve(jac, rhs)[:, :3, :]

    stress_out[idx] = sig
    kappa_out[idx] = kap_n + dlam
    d_eps_p[idx] = dlam[:, None] * flow
    return stress_out, kappa_out, d_eps_p, tangent, plastic


def return_mapping(strain_increment: np.ndarray, state: GaussPointState,
                   mat: PlasticMaterial, element: int = 0):
    """Single-point stress update: returns (new state, consistent tangent)."""
    d_el = constitutive_plane_stress(mat.E_per_element[element], mat.nu)
    stress, kappa, deps_p, tangent, _ = _return_map_batch(
        np.asarray(strain_increment, dtype=float)[None, :],
        state.stress[None, :],
        np.array([state.kappa]),
        d_el[None, :, :],
        mat.sigma_y, mat.H,
    )
    new_state = GaussPointState(
        stress=stress[0],
        plastic_strain=state.plastic_strain + deps_p[0],
        kappa=float(kappa[0]),
    )
    return new_state, tangent[0]


def internal_forces(mesh: MeshLevel, stress_gp: np.ndarray,
                    thickness: float | None = None) -> np.ndarray:
    """Assemble q = integral of B^T sigma from per-Gauss-point stresses
    (n_elem, 4, 3) into the full DOF vector."""
    b_gp, det_j = element_quadrature(mesh.h)
    t = mesh.geometry.width if thickness is None else thickness
    qe = np.einsum("gki,egk->ei", b_gp, stress_gp) * det_j * t
    q = np.zeros(mesh.n_dofs)
    np.add.at(q, mesh.elem_dofs, qe)
    return q


def tangent_element_matrices(mesh: MeshLevel, tangent_gp: np.ndarray,
                             thickness: float) -> np.ndarray:
    """Element tangent stiffnesses (n_elem, 8, 8) from per-point moduli."""
    b_gp, det_j = element_quadrature(mesh.h)
    return np.einsum("gki,egkl,glj->eij", b_gp, tangent_gp, b_gp) * det_j * thickness


@dataclass
class PlasticSolution:
    """Per-increment results of one elastoplastic analysis."""

    load_values: np.ndarray          # (n_inc,) applied total force
    u_history: np.ndarray            # (n_inc, n_dofs)
    residual_norms: np.ndarray       # (n_inc,) converged ||f_ext - q||
    increment_norms: np.ndarray      # (n_inc,) ||delta f|| per increment
    newton_iters: np.ndarray         # (n_inc,)
    yield_max: np.ndarray            # (n_inc,) max f over Gauss points
    kappa_min_delta: np.ndarray      # (n_inc,) min Gauss-point kappa change
    kappa: np.ndarray                # (n_elem, 4) final accumulated plastic strain
    stress: np.ndarray               # (n_elem, 4, 3) final stresses


def solve_elastoplastic(mesh: MeshLevel, mat: PlasticMaterial,
                        schedule: LoadSchedule,
                        load_pattern: np.ndarray | None = None) -> PlasticSolution:
    """March the load schedule with Newton-Raphson equilibrium iterations.

    `load_pattern` is the nodal distribution of one Newton of total force
    (default: downward midspan column load). Residual tolerance per
    increment is EQUILIBRIUM_RTOL times the load-increment norm.
    """
    if mat.E_per_element.size != mesh.n_elems:
        raise ValueError("E field size does not match the element count")
    if load_pattern is None:
        load_pattern = distribute_midspan_load(mesh, -1.0)
    t = mesh.geometry.width
    b_gp, _ = element_quadrature(mesh.h)
    plan = band_plan(mesh)
    free = mesh.free

    d_el = np.array([constitutive_plane_stress(e, mat.nu) for e in mat.E_per_element])
    d_el_gp = np.repeat(d_el[:, None, :, :], 4, axis=1)
    d_el_flat = d_el_gp.reshape(-1, 3, 3)

    n_gp = mesh.n_elems * 4
    stress = np.zeros((n_gp, 3))
    kappa = np.zeros(n_gp)
    tangent_gp = d_el_gp.copy()

    u = np.zeros(mesh.n_dofs)
    forces = schedule.values()
    n_inc = forces.size
    u_hist = np.zeros((n_inc, mesh.n_dofs))
    res_hist = np.zeros(n_inc)
    dinc_hist = np.zeros(n_inc)
    iters_hist = np.zeros(n_inc, dtype=int)
    yield_hist = np.zeros(n_inc)
    dkappa_hist = np.zeros(n_inc)

    prev_force = schedule.start
    for k, force in enumerate(forces):
        f_target = load_pattern * force
        df_norm = np.linalg.norm(load_pattern[free] * (force - prev_force))
        tol = EQUILIBRIUM_RTOL * df_norm

        u_trial = u.copy()
        stress_trial = stress
        kappa_trial = kappa
        converged = False
        for it in range(1, NEWTON_MAX_ITER + 1):
            q = internal_forces(mesh, stress_trial.reshape(mesh.n_elems, 4, 3), t)
            r = f_target - q
            res = np.linalg.norm(r[free])
            if it > 1 and res <= tol:
                converged = True
                iters_hist[k] = it - 1
                res_hist[k] = res
                break
            ab = plan.assemble(tangent_element_matrices(mesh, tangent_gp, t))
            try:
                du_full = plan.solve(ab, r)
            except NumericError as exc:
                raise SampleFailure(f"tangent factorization failed: {exc}") from exc
            u_trial = u_trial + du_full
            d_u = u_trial - u
            d_strain = np.einsum("gkj,ej->egk", b_gp, d_u[mesh.elem_dofs]).reshape(-1, 3)
            stress_trial, kappa_trial, _, tangent_flat, _ = _return_map_batch(
                d_strain, stress, kappa, d_el_flat, mat.sigma_y, mat.H,
            )
            tangent_gp = tangent_flat.reshape(mesh.n_elems, 4, 3, 3)
        if not converged:
            raise SampleFailure(
                f"equilibrium iteration stalled at increment {k + 1} "
                f"(residual {res:.3e}, tolerance {tol:.3e})"
            )

        u = u_trial
        stress = stress_trial
        dkappa_hist[k] = float(np.min(kappa_trial - kappa))
        kappa = kappa_trial
        u_hist[k] = u
        yield_hist[k] = float(np.max(yield_function(stress, kappa, mat.sigma_y, mat.H)))
        dinc_hist[k] = df_norm
        prev_force = force

    return PlasticSolution(
        load_values=forces,
        u_history=u_hist,
        residual_norms=res_hist,
        increment_norms=dinc_hist,
        newton_iters=iters_hist,
        yield_max=yield_hist,
        kappa_min_delta=dkappa_hist,
        kappa=kappa.reshape(mesh.n_elems, 4),
        stress=stress.reshape(mesh.n_elems, 4, 3),
    )
