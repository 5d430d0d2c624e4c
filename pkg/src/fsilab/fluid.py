"""Lagrangian incompressible fluid: variable-coefficient Stokes blocks,
flow-map evolution and the initial pressure problem.

All integrals live on the initial (reference) fluid annulus; the moving
geometry enters only through the inverse flow-map Jacobian a = (grad
eta)^-1 sampled at quadrature points.  a is recomputed from eta rather
than integrated in time, which keeps a * grad(eta) = I exact discretely;
the ODE form is retained as a cross-check in the tests.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DegenerateCoefficient, MapDegenerate, SolverFailure
from .fem import Discretization


@dataclass
class FluidState:
    """Velocity, pressure and flow-map data at one time level.

    v    (2, nv) P2 velocity coefficients (zero on the outer wall)
    q    (np,)   P1 pressure coefficients
    eta  (2, nv) flow-map coefficients, initialized to the identity map
    a    (Cf, Q, 2, 2) inverse Jacobian at quadrature points
    """

    v: np.ndarray
    q: np.ndarray
    eta: np.ndarray
    a: np.ndarray

    def check(self):
        for arr in (self.v, self.q, self.eta, self.a):
            if not np.all(np.isfinite(arr)):
                raise SolverFailure("non-finite fluid state")


@dataclass
class FluidOperators:
    """Assembled fluid blocks for a given coefficient field a."""

    M: sp.csr_matrix        # scalar P2 mass
    A: sp.csr_matrix        # scalar viscous block, coeff a a^T
    B: tuple                # (B0, B1) pressure x velocity-component blocks
    min_ellipticity: float


def identity_a_field(disc: Discretization):
    cf, q = disc.vel_t.wdet.shape
    return np.broadcast_to(np.eye(2), (cf, q, 2, 2)).copy()


def identity_flow_map(disc: Discretization):
    return np.ascontiguousarray(disc.vel.dof_coords.T.copy())


def min_eig_sym2x2(m):
    """Smallest eigenvalue of symmetric 2x2 matrices (batch)."""
    half_tr = 0.5 * (m[..., 0, 0] + m[..., 1, 1])
    det = m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]
    disc_ = np.sqrt(np.maximum(half_tr * half_tr - det, 0.0))
    return half_tr - disc_


def viscous_coefficient(a_field):
    """M_jk = a^{jl} a^{kl} (the coefficient of the viscous form)."""
    return np.einsum("cqjl,cqkl->cqjk", a_field, a_field)


def assemble_variable_stokes(disc: Discretization, a_field, ellipticity_floor=0.0):
    """Viscous and pressure blocks for the Lagrangian momentum equation.

    Raises DegenerateCoefficient when the quadratic form a a^T dips
    below the ellipticity floor at any quadrature point.
    """
    if not np.all(np.isfinite(a_field)):
        raise DegenerateCoefficient("non-finite coefficient field")
    coeff = np.ascontiguousarray(viscous_coefficient(a_field))
    min_eig = float(min_eig_sym2x2(coeff).min())
    if ellipticity_floor > 0.0 and min_eig < ellipticity_floor:
        raise DegenerateCoefficient(
            f"ellipticity {min_eig:.3e} below floor {ellipticity_floor}"
        )
    a_mat = disc.stiffness_matrix("vel", coeff)
    b_blocks = tuple(
        disc.div_matrix(np.ascontiguousarray(a_field[..., :, i])) for i in range(2)
    )
    return FluidOperators(
        M=disc.mass_matrix("vel"), A=a_mat, B=b_blocks, min_ellipticity=min_eig
    )


def flow_map_jacobian(disc: Discretization, eta):
    """grad(eta) at quadrature points, via the displacement from identity.

    Computing I + grad(eta - x) keeps the v = 0 trajectory exactly at
    a = I in floating point.
    """
    disp = eta - disc.vel.dof_coords.T
    j = np.empty((disc.vel_t.wdet.shape[0], disc.vel_t.wdet.shape[1], 2, 2))
    for i in range(2):
        j[..., i, :] = disc.grad_at_qp("vel", disp[i])
    j[..., 0, 0] += 1.0
    j[..., 1, 1] += 1.0
    return j


def invert_jacobian(j):
    """a = (grad eta)^-1 and det(grad eta) per quadrature point."""
    det = j[..., 0, 0] * j[..., 1, 1] - j[..., 0, 1] * j[..., 1, 0]
    a = np.empty_like(j)
    a[..., 0, 0] = j[..., 1, 1]
    a[..., 0, 1] = -j[..., 0, 1]
    a[..., 1, 0] = -j[..., 1, 0]
    a[..., 1, 1] = j[..., 0, 0]
    a /= det[..., None, None]
    return a, det


def update_flow_map(disc: Discretization, eta, v_old, v_new, dt,
                    det_floor=0.5, ellipticity_floor=0.5):
    """Advance eta by the trapezoidal rule and recompute a = (grad eta)^-1.

    Returns (eta_new, a, det, min_eig) or raises MapDegenerate when the
    Jacobian determinant or the ellipticity of a a^T falls below its
    floor, signalling departure from the small-data regime.
    """
    eta_new = eta + (dt / 2.0) * (v_old + v_new)
    j = flow_map_jacobian(disc, eta_new)
    a, det = invert_jacobian(j)
    if det.min() < det_floor:
        raise MapDegenerate(
            f"det(grad eta) = {det.min():.3e} below floor {det_floor}"
        )
    min_eig = min_eig_sym2x2(viscous_coefficient(a))
    if min_eig.min() < ellipticity_floor:
        raise MapDegenerate(
            f"ellipticity {min_eig.min():.3e} below floor {ellipticity_floor}"
        )
    return eta_new, np.ascontiguousarray(a), det, min_eig


def divergence_residual(disc: Discretization, v, a_field):
    """L2 norm over the fluid of tr(a : grad v) = a^{ki} d_k v^i."""
    val = np.zeros(disc.vel_t.wdet.shape)
    for i in range(2):
        grad = disc.grad_at_qp("vel", v[i])
        val += np.einsum("cqk,cqk->cq", a_field[..., :, i], grad)
    return float(np.sqrt(np.sum(disc.vel_t.wdet * val * val)))


def weak_divergence_residual(disc: Discretization, v, b_blocks):
    """Euclidean norm of the discrete constraint vector B v."""
    r = b_blocks[0] @ v[0] + b_blocks[1] @ v[1]
    return float(np.linalg.norm(r))


def leray_project(disc: Discretization, v_raw):
    """M-orthogonal projection onto discretely divergence-free fields.

    Keeps the outer-wall non-slip values (assumed zero) and returns the
    projected (2, nv) velocity.
    """
    ops = assemble_variable_stokes(disc, identity_a_field(disc))
    free = disc.free_vel
    nfree = free.size
    m_ff = ops.M[np.ix_(free, free)]
    b_f = [b[:, free] for b in ops.B]
    npre = disc.pre.ndof
    sys = sp.bmat(
        [
            [m_ff, None, b_f[0].T],
            [None, m_ff, b_f[1].T],
            [b_f[0], b_f[1], None],
        ],
        format="csc",
    )
    rhs = np.concatenate([m_ff @ v_raw[0][free], m_ff @ v_raw[1][free], np.zeros(npre)])
    try:
        sol = spla.splu(sys).solve(rhs)
    except RuntimeError as exc:
        raise SolverFailure(str(exc)) from exc
    v = np.zeros_like(v_raw)
    v[0][free] = sol[:nfree]
    v[1][free] = sol[nfree : 2 * nfree]
    return v


def solve_initial_pressure(disc: Discretization, v0_grad, v0_laplacian, w0_conormal_dot_nu):
    """Initial pressure from the mixed Poisson problem.

    -laplace q0 = d_i v0^k d_k v0^i in the fluid (sign folded into the
    weak form), Neumann data laplace(v0) . nu on the outer wall and
    Dirichlet data nu^T grad(v0) nu - (w0 conormal) . nu on the
    interface.  All data are supplied as callables of point arrays;
    interface normals are taken as the analytic radial direction.
    """
    space = disc.vel
    k_p = disc.stiffness_matrix("vel", identity_a_field(disc))

    qp = disc.vel_t.qpoints
    gv = v0_grad(qp.reshape(-1, 2)).reshape(qp.shape[0], qp.shape[1], 2, 2)
    # laplace q0 = -d_i v^k d_k v^i; integrating by parts flips the sign,
    # so the weak load carries +d_i v^k d_k v^i (gv[i, j] = d_j v^i).
    source = np.einsum("cqki,cqik->cq", gv, gv)
    load = np.zeros(space.ndof)
    local = np.einsum("cq,cq,qa->ca", disc.vel_t.wdet, source, disc.vel_t.phi)
    np.add.at(load, space.cell_dofs, local)

    bt = disc.outer
    nrm = np.broadcast_to(bt.normals[:, None, :], bt.qpoints.shape)
    lap = v0_laplacian(bt.qpoints.reshape(-1, 2)).reshape(-1, 2)
    neu = np.einsum("nd,nd->n", lap, nrm.reshape(-1, 2)).reshape(bt.qpoints.shape[:2])
    local_b = np.einsum("eq,eq,qa->ea", bt.wlen, neu, bt.trace_phi)
    np.add.at(load, bt.trace_dofs["vel"], local_b)

    dir_dofs = disc.iface.dof_indices["vel"]
    coords = space.dof_coords[dir_dofs]
    nu = coords / np.linalg.norm(coords, axis=1)[:, None]
    gv_d = v0_grad(coords)
    dir_vals = np.einsum("nij,nj,ni->n", gv_d, nu, nu) - w0_conormal_dot_nu(coords)

    free = np.setdiff1d(np.arange(space.ndof), dir_dofs)
    rhs = load[free] - k_p[np.ix_(free, dir_dofs)] @ dir_vals
    try:
        sol = spla.splu(k_p[np.ix_(free, free)].tocsc()).solve(rhs)
    except RuntimeError as exc:
        raise SolverFailure(str(exc)) from exc
    q0 = np.zeros(space.ndof)
    q0[dir_dofs] = dir_vals
    q0[free] = sol
    return q0
