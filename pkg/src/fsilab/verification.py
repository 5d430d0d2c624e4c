"""Manufactured-solution convergence suites and time-order checks.

The standalone wave and Stokes solvers are verified against exact
fields with sympy-derived forcing; the coupled scheme's temporal order
is measured by Richardson self-convergence on a smooth preset.
"""

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
import sympy

from .config import SimulationConfig, config_from_dict
from .diagnostics import DiagnosticsEngine
from .fem import Discretization
from .fluid import assemble_variable_stokes, identity_a_field
from .meshing import build_disc_annulus
from .metric import MetricField, poly_from_spec
from .stepper import (
    CoupledStepper,
    ElasticInitSmoother,
    build_initial_data,
    initial_coupled_state,
)
from .wave import StandaloneWaveSolver

_X, _Y, _T = sympy.symbols("x y t")


def _wave_problem():
    """Manufactured wave field, its forcing and conormal data."""
    phi = poly_from_spec(2, [{"coeff": 0.2, "powers": [1, 0]}])
    metric = MetricField.conformal(phi)
    g_sym = sympy.exp(sympy.Float(0.4) * _X) * sympy.eye(2)
    w = sympy.cos(sympy.Float(1.3) * _T) * sympy.sin(sympy.Float(1.5) * _X) * sympy.cos(
        sympy.Float(1.2) * _Y
    )
    beta = 1.0
    grad = sympy.Matrix([sympy.diff(w, _X), sympy.diff(w, _Y)])
    flux = g_sym * grad
    div_flux = sympy.diff(flux[0], _X) + sympy.diff(flux[1], _Y)
    forcing = sympy.diff(w, _T, 2) - div_flux + beta * w
    w_fun = sympy.lambdify((_X, _Y, _T), w, "numpy")
    wt_fun = sympy.lambdify((_X, _Y, _T), sympy.diff(w, _T), "numpy")
    f_fun = sympy.lambdify((_X, _Y, _T), forcing, "numpy")
    flux_fun = sympy.lambdify((_X, _Y, _T), flux, "numpy")

    def source(pts, t):
        return f_fun(pts[:, 0], pts[:, 1], t)

    def neumann(pts, normals, t):
        fx = np.asarray(flux_fun(pts[:, 0], pts[:, 1], t), dtype=float)
        vec = np.stack([fx[0].ravel(), fx[1].ravel()], axis=1)
        return np.einsum("ni,ni->n", vec, normals)

    return metric, beta, w_fun, wt_fun, source, neumann


def wave_mms(levels=3, h0=0.25, dt=2e-3, t_end=0.3, r0=1.0, r1=2.0):
    """Spatial L2 convergence of the standalone wave solver (P2)."""
    metric, beta, w_fun, wt_fun, source, neumann = _wave_problem()
    hs, errors = [], []
    for lev in range(levels):
        h = h0 / 2**lev
        mesh = build_disc_annulus(r0, r1, h)
        disc = Discretization(mesh)
        solver = StandaloneWaveSolver(disc, metric, beta, dt)
        w0 = disc.dis.interpolate(lambda p: w_fun(p[:, 0], p[:, 1], 0.0))
        z0 = disc.dis.interpolate(lambda p: wt_fun(p[:, 0], p[:, 1], 0.0))
        w_h, _, t = solver.run(w0, z0, t_end, source=source, neumann=neumann)
        qp = disc.dis_t.qpoints
        diff = disc.value_at_qp("dis", w_h) - w_fun(qp[..., 0], qp[..., 1], t)
        err = float(np.sqrt(np.sum(disc.dis_t.wdet * diff * diff)))
        hs.append(h)
        errors.append(err)
    orders = [float(np.log2(errors[k] / errors[k + 1])) for k in range(levels - 1)]
    return {"hs": hs, "errors": errors, "orders": orders, "min_order": min(orders)}


def _stokes_problem(r1, viscosity=1.0):
    psi = sympy.sin(sympy.Float(1.1) * _X) * sympy.sin(sympy.Float(0.9) * _Y)
    u = sympy.Matrix([sympy.diff(psi, _Y), -sympy.diff(psi, _X)])
    p = sympy.cos(_X) + sympy.sin(sympy.Float(1.3) * _Y)
    lap = sympy.Matrix(
        [sympy.diff(u[i], _X, 2) + sympy.diff(u[i], _Y, 2) for i in range(2)]
    )
    grad_p = sympy.Matrix([sympy.diff(p, _X), sympy.diff(p, _Y)])
    f = -viscosity * lap + grad_p
    grad_u = sympy.Matrix(2, 2, lambda i, j: sympy.diff(u[i], [_X, _Y][j]))
    u_fun = sympy.lambdify((_X, _Y), u, "numpy")
    p_fun = sympy.lambdify((_X, _Y), p, "numpy")
    f_fun = sympy.lambdify((_X, _Y), f, "numpy")
    gu_fun = sympy.lambdify((_X, _Y), grad_u, "numpy")
    return u_fun, p_fun, f_fun, gu_fun


def solve_stokes_mms(disc: Discretization, u_fun, p_fun, f_fun, gu_fun, viscosity=1.0):
    """Steady Stokes with Dirichlet data on the outer wall and the exact
    pseudo-traction as natural data on the interface circle."""
    ops = assemble_variable_stokes(disc, identity_a_field(disc))
    free = disc.free_vel
    dir_dofs = disc.dirichlet_vel
    a_mat = viscosity * ops.A
    coords = disc.vel.dof_coords

    load = [np.zeros(disc.vel.ndof) for _ in range(2)]
    qp = disc.vel_t.qpoints
    fv = np.asarray(f_fun(qp[..., 0].ravel(), qp[..., 1].ravel()), dtype=float)
    fv = fv.reshape(2, qp.shape[0], qp.shape[1])
    for i in range(2):
        local = np.einsum("cq,cq,qa->ca", disc.vel_t.wdet, fv[i], disc.vel_t.phi)
        np.add.at(load[i], disc.vel.cell_dofs, local)

    bt = disc.iface
    nu_f = -bt.normals  # outward w.r.t. the fluid on its inner boundary
    bq = bt.qpoints
    gu = np.asarray(gu_fun(bq[..., 0].ravel(), bq[..., 1].ravel()), dtype=float)
    gu = gu.reshape(2, 2, bq.shape[0], bq.shape[1])
    pv = np.asarray(p_fun(bq[..., 0].ravel(), bq[..., 1].ravel()), dtype=float)
    pv = pv.reshape(bq.shape[0], bq.shape[1])
    for i in range(2):
        traction = (
            viscosity
            * np.einsum("jeq,ej->eq", gu[i], nu_f)
            - pv * nu_f[:, None][:, :, i]
        )
        local = np.einsum("eq,eq,qa->ea", bt.wlen, traction, bt.trace_phi)
        np.add.at(load[i], bt.trace_dofs["vel"], local)

    u_d = np.zeros((2, disc.vel.ndof))
    uex_d = np.asarray(u_fun(coords[dir_dofs, 0], coords[dir_dofs, 1]), dtype=float)
    for i in range(2):
        u_d[i][dir_dofs] = uex_d[i].ravel()

    a_ff = a_mat[np.ix_(free, free)]
    b_free = [b[:, free] for b in ops.B]
    npre = disc.pre.ndof
    sys = sp.bmat(
        [
            [a_ff, None, -b_free[0].T],
            [None, a_ff, -b_free[1].T],
            [-b_free[0], -b_free[1], None],
        ],
        format="csc",
    )
    rhs = np.concatenate(
        [
            load[0][free] - (a_mat @ u_d[0])[free],
            load[1][free] - (a_mat @ u_d[1])[free],
            ops.B[0] @ u_d[0] + ops.B[1] @ u_d[1],
        ]
    )
    sol = spla.splu(sys).solve(rhs)
    nf = free.size
    v = u_d.copy()
    v[0][free] = sol[:nf]
    v[1][free] = sol[nf : 2 * nf]
    q = sol[2 * nf : 2 * nf + npre]
    return v, q


def stokes_mms(levels=3, h0=0.4, r0=1.0, r1=2.0):
    """Velocity / pressure L2 convergence of the Taylor-Hood solver."""
    u_fun, p_fun, f_fun, gu_fun = _stokes_problem(r1)
    hs, v_errors, p_errors = [], [], []
    for lev in range(levels):
        h = h0 / 2**lev
        mesh = build_disc_annulus(r0, r1, h)
        disc = Discretization(mesh)
        v, q = solve_stokes_mms(disc, u_fun, p_fun, f_fun, gu_fun)
        qp = disc.vel_t.qpoints
        uex = np.asarray(u_fun(qp[..., 0].ravel(), qp[..., 1].ravel()), dtype=float)
        uex = uex.reshape(2, qp.shape[0], qp.shape[1])
        verr2 = 0.0
        for i in range(2):
            diff = disc.value_at_qp("vel", v[i]) - uex[i]
            verr2 += float(np.sum(disc.vel_t.wdet * diff * diff))
        qpp = disc.pre_t.qpoints
        pex = np.asarray(p_fun(qpp[..., 0].ravel(), qpp[..., 1].ravel()), dtype=float)
        diff = disc.value_at_qp("pre", q) - pex.reshape(qpp.shape[:2])
        perr = float(np.sqrt(np.sum(disc.pre_t.wdet * diff * diff)))
        hs.append(h)
        v_errors.append(np.sqrt(verr2))
        p_errors.append(perr)
    v_orders = [float(np.log2(v_errors[k] / v_errors[k + 1])) for k in range(levels - 1)]
    p_orders = [float(np.log2(p_errors[k] / p_errors[k + 1])) for k in range(levels - 1)]
    return {
        "hs": hs,
        "v_errors": v_errors,
        "p_errors": p_errors,
        "v_orders": v_orders,
        "p_orders": p_orders,
        "min_v_order": min(v_orders),
        "min_p_order": min(p_orders),
    }


def _frozen_final_state(cfg: SimulationConfig, disc, metric, engine, init, smoother):
    state = initial_coupled_state(disc, init, smoother)
    stepper = CoupledStepper(disc, metric, cfg, engine)
    nsteps = int(round(cfg.time.t_end / cfg.time.dt))
    for _ in range(nsteps):
        state, _ = stepper.monolithic_step(state)
    return state


def coupled_time_orders(dts=(0.02, 0.01, 0.005), h=0.2, t_end=1.0):
    """Richardson self-convergence of the coupled midpoint scheme."""
    base = {
        "geometry": {"r0": 1.0, "r1": 2.0, "h": h},
        "time": {"dt": dts[0], "t_end": t_end},
        "initial_data": {"preset": "elastic-pulse", "amplitude": 0.01},
    }
    mesh = build_disc_annulus(1.0, 2.0, h)
    disc = Discretization(mesh)
    cfg0 = config_from_dict(base)
    metric = cfg0.metric_field()
    engine = DiagnosticsEngine(disc, metric, beta=1.0, gamma=1.0)
    init = build_initial_data("elastic-pulse", 0.01, 1.0, 2.0)
    smoother = ElasticInitSmoother(engine.Me, engine.Kgrad, h)

    finals = []
    for dt in dts:
        base["time"]["dt"] = dt
        cfg = config_from_dict(base)
        finals.append(_frozen_final_state(cfg, disc, metric, engine, init, smoother))

    def dist(s1, s2):
        total = 0.0
        for i in range(2):
            dv = s1.fluid.v[i] - s2.fluid.v[i]
            dz = s1.wave.wt[i] - s2.wave.wt[i]
            dw = s1.wave.w[i] - s2.wave.w[i]
            total += dv @ (engine.Mf @ dv) + dz @ (engine.Me @ dz)
            total += dw @ ((engine.Kgrad + engine.Me) @ dw)
        return np.sqrt(total)

    errors = [dist(finals[k], finals[k + 1]) for k in range(len(finals) - 1)]
    orders = [float(np.log2(errors[k] / errors[k + 1])) for k in range(len(errors) - 1)]
    return {"dts": list(dts), "errors": errors, "orders": orders, "min_order": min(orders)}


def run_mms_suite(levels=3):
    """Full convergence report for the mms command and acceptance suite."""
    wave = wave_mms(levels=levels)
    stokes = stokes_mms(levels=levels)
    temporal = coupled_time_orders()
    passed = (
        wave["min_order"] >= 2.7
        and stokes["min_v_order"] >= 2.7
        and stokes["min_p_order"] >= 1.8
        and temporal["min_order"] >= 1.8
    )
    return {"wave": wave, "stokes": stokes, "temporal": temporal, "passed": passed}
