"""Variable-coefficient elastic wave equation on the disc.

Each displacement component solves w_tt - div(G(x) grad w) + beta w = 0,
so assembly is done once for a scalar field and applied per component.
The conormal trace nu^T G grad(w) is the natural boundary quantity on
the interface circle.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NotPositiveDefinite, SolverFailure
from .fem import Discretization
from .metric import MetricField


@dataclass
class WaveState:
    """Displacement and velocity coefficients, one row per component."""

    w: np.ndarray
    wt: np.ndarray

    def check(self):
        if not (np.all(np.isfinite(self.w)) and np.all(np.isfinite(self.wt))):
            raise SolverFailure("non-finite wave state")


@dataclass
class WaveOperators:
    """Mass, stiffness (including the beta mass term) and its gradient part."""

    M: sp.csr_matrix
    K: sp.csr_matrix
    K_grad: sp.csr_matrix
    beta: float


def metric_at_qp(disc: Discretization, metric: MetricField, which="dis"):
    """G evaluated at quadrature points, with a positivity check."""
    tables = disc._pair(which)[1]
    qp = tables.qpoints
    g = metric(qp.reshape(-1, 2)).reshape(qp.shape[0], qp.shape[1], 2, 2)
    asym = np.abs(g - g.transpose(0, 1, 3, 2)).max()
    if asym > 1e-12:
        raise NotPositiveDefinite(f"coefficient matrix asymmetry {asym:.3e}")
    w = np.linalg.eigvalsh(g)
    if w[..., 0].min() <= 1e-12:
        raise NotPositiveDefinite(
            f"coefficient field not positive definite (min eig {w[..., 0].min():.3e})"
        )
    return np.ascontiguousarray(g)


def metric_at_boundary(disc: Discretization, metric: MetricField, boundary):
    qp = boundary.qpoints
    return metric(qp.reshape(-1, 2)).reshape(qp.shape[0], qp.shape[1], 2, 2)


def assemble_wave_operators(disc: Discretization, metric: MetricField, beta: float):
    """Scalar mass and stiffness for one displacement component."""
    g_qp = metric_at_qp(disc, metric)
    m = disc.mass_matrix("dis")
    k_grad = disc.stiffness_matrix("dis", g_qp)
    k = (k_grad + beta * m).tocsr()
    return WaveOperators(M=m, K=k, K_grad=k_grad, beta=beta)


def conormal_trace(disc: Discretization, metric: MetricField, w):
    """nu^T G grad(w^i) at interface quadrature points -> (E, Qe, ncomp).

    w is (ncomp, ndof) elastic coefficients; the gradient is taken from
    the adjacent elastic cell, the normal is outward w.r.t. the disc.
    """
    w = np.atleast_2d(w)
    g_b = metric_at_boundary(disc, metric, disc.iface)
    nu = disc.iface.normals
    cotangent = np.einsum("ej,eqjk->eqk", nu, g_b)
    out = np.empty((g_b.shape[0], g_b.shape[1], w.shape[0]))
    for i in range(w.shape[0]):
        grad = disc.trace_gradient(disc.iface, "dis", w[i])
        out[..., i] = np.einsum("eqk,eqk->eq", cotangent, grad)
    return out


class StandaloneWaveSolver:
    """Midpoint (Crank-Nicolson) integrator for one scalar wave field.

    Natural (Neumann) data on the interface circle and an interior
    source are sampled at the half step, which keeps the scheme second
    order; with zero data the discrete energy is conserved exactly.
    """

    def __init__(self, disc: Discretization, metric: MetricField, beta: float, dt: float):
        self.disc = disc
        self.ops = assemble_wave_operators(disc, metric, beta)
        self.dt = dt
        lhs = (self.ops.M + (dt * dt / 4.0) * self.ops.K).tocsc()
        self._lu = spla.splu(lhs)

    def load_vector(self, t, source=None, neumann=None):
        disc = self.disc
        space = disc.dis
        load = np.zeros(space.ndof)
        if source is not None:
            qp = disc.dis_t.qpoints
            vals = source(qp.reshape(-1, 2), t).reshape(qp.shape[:2])
            local = np.einsum("cq,cq,qa->ca", disc.dis_t.wdet, vals, disc.dis_t.phi)
            np.add.at(load, space.cell_dofs, local)
        if neumann is not None:
            bt = disc.iface
            nrm = np.broadcast_to(bt.normals[:, None, :], bt.qpoints.shape)
            vals = neumann(bt.qpoints.reshape(-1, 2), nrm.reshape(-1, 2), t)
            vals = vals.reshape(bt.qpoints.shape[:2])
            local = np.einsum("eq,eq,qa->ea", bt.wlen, vals, bt.trace_phi)
            np.add.at(load, bt.trace_dofs["dis"], local)
        return load

    def step(self, w, z, t, source=None, neumann=None):
        dt = self.dt
        load = self.load_vector(t + dt / 2.0, source, neumann)
        rhs = self.ops.M @ z - dt * (self.ops.K @ (w + (dt / 4.0) * z)) + dt * load
        z_new = self._lu.solve(rhs)
        w_new = w + (dt / 2.0) * (z + z_new)
        return w_new, z_new

    def energy(self, w, z):
        return 0.5 * float(z @ (self.ops.M @ z) + w @ (self.ops.K @ w))

    def run(self, w0, z0, t_end, source=None, neumann=None):
        w, z = w0.copy(), z0.copy()
        t = 0.0
        nsteps = int(round(t_end / self.dt))
        for _ in range(nsteps):
            w, z = self.step(w, z, t, source, neumann)
            t += self.dt
        return w, z, t
