"""Pointwise verification of the two geometric multiplier identities.

For a scalar field u solving u_tt = div(G grad u) + f, with a vector
field H and a scalar multiplier p, the identities verified here are

  div{2 H(u) G grad u - (|grad_g u|_g^2 - u_t^2) H} + 2 f H(u)
    = 2 [u_t H(u)]_t + 2 DH(grad_g u, grad_g u)
      + (u_t^2 - |grad_g u|_g^2) div H

and

  div[2 p u G grad u - u^2 G grad p] + 2 f p u
    = 2 p (u u_t)_t + 2 p (|grad_g u|_g^2 - u_t^2) - u^2 div[G grad p]

where grad_g u = G grad u, |grad_g u|_g^2 = <G grad u, grad u>, H(u) =
<H, grad u>, and DH is the covariant differential in the metric
g = G^-1.  The exact path builds both sides symbolically (f is derived
from u, so the residual is pure roundoff); the finite-difference path
reevaluates everything with nested central differences and must
converge at second order.
"""

from dataclasses import dataclass

import numpy as np
import sympy as sp

from .metric import MetricField, VectorFieldH, covariant_differential

_X, _Y, _T = sp.symbols("x y t")


def sympy_metric(metric: MetricField):
    """Symbolic 2x2 coefficient matrix for a builtin metric descriptor."""
    if metric.kind == "identity":
        return sp.eye(2)
    if metric.kind == "diagonal":
        return sp.diag(*[sp.Float(e) for e in metric.params["entries"]])
    if metric.kind == "conformal":
        phi = _sympy_poly(metric.params["phi"])
        return sp.exp(2 * phi) * sp.eye(2)
    if metric.kind == "polynomial-perturbation":
        g = sp.eye(2)
        for c, powers, i, j in metric.params["terms"]:
            mono = sp.Float(c) * _X ** powers[0] * _Y ** powers[1]
            g[i, j] = g[i, j] + mono
            if i != j:
                g[j, i] = g[j, i] + mono
        return g
    raise ValueError(f"metric kind {metric.kind!r} has no symbolic form")


def _sympy_poly(poly):
    out = sp.Integer(0)
    for c, powers in poly.terms:
        out += sp.Float(c) * _X ** powers[0] * _Y ** powers[1]
    return out


def sympy_vector(field: VectorFieldH):
    if field.kind == "radial":
        cx, cy = field.params["center"]
        return sp.Matrix([_X - cx, _Y - cy])
    if field.kind == "scaled-radial":
        a = field.params["alpha"]
        cx, cy = field.params["center"]
        return sp.Matrix([a * (_X - cx), a * (_Y - cy)])
    if field.kind == "polynomial":
        return sp.Matrix([_sympy_poly(c) for c in field.params["components"]])
    raise ValueError(f"vector field kind {field.kind!r} has no symbolic form")


@dataclass(frozen=True)
class ResidualStats:
    max_abs: float
    rms: float
    samples: int


def _spatial_div(vec):
    return sp.diff(vec[0], _X) + sp.diff(vec[1], _Y)


def _symbolic_pieces(g_mat, u):
    grad_u = sp.Matrix([sp.diff(u, _X), sp.diff(u, _Y)])
    gg = g_mat * grad_u
    norm_g = (gg.T * grad_u)[0, 0]
    u_t = sp.diff(u, _T)
    f = sp.diff(u, _T, 2) - _spatial_div(gg)
    return grad_u, gg, norm_g, u_t, f


def _symbolic_covariant(g_mat, h_vec):
    """DH quadratic-form matrix S for the metric g = G^-1, symbolically."""
    met = g_mat.inv()
    xs = (_X, _Y)
    gamma = [
        [
            [
                sum(
                    g_mat[k, l]
                    * (
                        sp.diff(met[j, l], xs[i])
                        + sp.diff(met[i, l], xs[j])
                        - sp.diff(met[i, j], xs[l])
                    )
                    for l in range(2)
                )
                / 2
                for j in range(2)
            ]
            for i in range(2)
        ]
        for k in range(2)
    ]
    cov = [
        [
            sp.diff(h_vec[k], xs[j]) + sum(gamma[k][i][j] * h_vec[i] for i in range(2))
            for j in range(2)
        ]
        for k in range(2)
    ]
    low = [[sum(met[m, k] * cov[k][j] for k in range(2)) for m in range(2)] for j in range(2)]
    return sp.Matrix(2, 2, lambda j, m: (low[j][m] + low[m][j]) / 2)


def residual_A_exact(metric: MetricField, H: VectorFieldH, u_expr):
    """Symbolic LHS - RHS of the first identity, as a numeric callable."""
    g_mat = sympy_metric(metric)
    h_vec = sympy_vector(H)
    grad_u, gg, norm_g, u_t, f = _symbolic_pieces(g_mat, u_expr)
    hu = (h_vec.T * grad_u)[0, 0]
    vec = 2 * hu * gg - (norm_g - u_t**2) * h_vec
    lhs = _spatial_div(vec) + 2 * f * hu
    s_mat = _symbolic_covariant(g_mat, h_vec)
    dh_quad = (gg.T * s_mat * gg)[0, 0]
    rhs = 2 * sp.diff(u_t * hu, _T) + 2 * dh_quad + (u_t**2 - norm_g) * _spatial_div(h_vec)
    return sp.lambdify((_X, _Y, _T), lhs - rhs, "numpy")


def residual_B_exact(metric: MetricField, p_expr, u_expr):
    """Symbolic LHS - RHS of the second identity, as a numeric callable."""
    g_mat = sympy_metric(metric)
    _, gg, norm_g, u_t, f = _symbolic_pieces(g_mat, u_expr)
    grad_p = sp.Matrix([sp.diff(p_expr, _X), sp.diff(p_expr, _Y)])
    vec = 2 * p_expr * u_expr * gg - u_expr**2 * (g_mat * grad_p)
    lhs = _spatial_div(vec) + 2 * f * p_expr * u_expr
    rhs = (
        2 * p_expr * sp.diff(u_expr * u_t, _T)
        + 2 * p_expr * (norm_g - u_t**2)
        - u_expr**2 * _spatial_div(g_mat * grad_p)
    )
    return sp.lambdify((_X, _Y, _T), lhs - rhs, "numpy")


def _eval_stats(fun, pts, times):
    vals = []
    for t in times:
        v = np.asarray(fun(pts[:, 0], pts[:, 1], t), dtype=float)
        vals.append(np.broadcast_to(v, (pts.shape[0],)))
    vals = np.concatenate(vals)
    return ResidualStats(
        max_abs=float(np.abs(vals).max()),
        rms=float(np.sqrt(np.mean(vals * vals))),
        samples=vals.size,
    )


class _NumericField:
    """Nested central-difference evaluators for the FD verification path."""

    def __init__(self, metric, u_fun, h):
        self.metric = metric
        self.u = u_fun
        self.h = h

    def grad_u(self, pts, t):
        h = self.h
        out = np.empty((pts.shape[0], 2))
        for i in range(2):
            e = np.zeros(2)
            e[i] = h
            out[:, i] = (self.u(pts[:, 0] + e[0], pts[:, 1] + e[1], t)
                         - self.u(pts[:, 0] - e[0], pts[:, 1] - e[1], t)) / (2 * h)
        return out

    def u_t(self, pts, t):
        h = self.h
        return (self.u(pts[:, 0], pts[:, 1], t + h)
                - self.u(pts[:, 0], pts[:, 1], t - h)) / (2 * h)

    def u_tt(self, pts, t):
        h = self.h
        return (self.u(pts[:, 0], pts[:, 1], t + h)
                - 2.0 * self.u(pts[:, 0], pts[:, 1], t)
                + self.u(pts[:, 0], pts[:, 1], t - h)) / (h * h)

    def flux(self, pts, t):
        """G grad u at points."""
        return np.einsum("nij,nj->ni", self.metric(pts), self.grad_u(pts, t))

    def div_of(self, vec_fun, pts, t):
        h = self.h
        out = np.zeros(pts.shape[0])
        for i in range(2):
            e = np.zeros(2)
            e[i] = h
            out += (vec_fun(pts + e, t)[:, i] - vec_fun(pts - e, t)[:, i]) / (2 * h)
        return out

    def forcing(self, pts, t):
        return self.u_tt(pts, t) - self.div_of(self.flux, pts, t)


def residual_A_fd(metric: MetricField, H: VectorFieldH, u_fun, pts, times, h):
    """First identity evaluated with nested central differences."""
    nf = _NumericField(metric, u_fun, h)

    def hu(ps, t):
        return np.einsum("ni,ni->n", H(ps), nf.grad_u(ps, t))

    def vec_a(ps, t):
        gg = nf.flux(ps, t)
        norm_g = np.einsum("ni,ni->n", gg, nf.grad_u(ps, t))
        ut = nf.u_t(ps, t)
        return 2.0 * hu(ps, t)[:, None] * gg - (norm_g - ut * ut)[:, None] * H(ps)

    def div_h(ps):
        out = np.zeros(ps.shape[0])
        for i in range(2):
            e = np.zeros(2)
            e[i] = h
            out += (H(ps + e)[:, i] - H(ps - e)[:, i]) / (2 * h)
        return out

    vals = []
    for t in times:
        gg = nf.flux(pts, t)
        norm_g = np.einsum("ni,ni->n", gg, nf.grad_u(pts, t))
        ut = nf.u_t(pts, t)
        lhs = nf.div_of(vec_a, pts, t) + 2.0 * nf.forcing(pts, t) * hu(pts, t)
        ddt = (nf.u_t(pts, t + h) * hu(pts, t + h)
               - nf.u_t(pts, t - h) * hu(pts, t - h)) / (2 * h)
        s_mat = covariant_differential(metric, H, pts, h=h)
        dh_quad = np.einsum("ni,nij,nj->n", gg, s_mat, gg)
        rhs = 2.0 * ddt + 2.0 * dh_quad + (ut * ut - norm_g) * div_h(pts)
        vals.append(lhs - rhs)
    vals = np.concatenate(vals)
    return ResidualStats(
        max_abs=float(np.abs(vals).max()),
        rms=float(np.sqrt(np.mean(vals * vals))),
        samples=vals.size,
    )


def residual_B_fd(metric: MetricField, p_fun, u_fun, pts, times, h):
    """Second identity evaluated with nested central differences."""
    nf = _NumericField(metric, u_fun, h)

    def grad_p(ps):
        out = np.empty((ps.shape[0], 2))
        for i in range(2):
            e = np.zeros(2)
            e[i] = h
            out[:, i] = (p_fun(ps[:, 0] + e[0], ps[:, 1] + e[1])
                         - p_fun(ps[:, 0] - e[0], ps[:, 1] - e[1])) / (2 * h)
        return out

    def g_grad_p(ps, t):
        return np.einsum("nij,nj->ni", metric(ps), grad_p(ps))

    def vec_b(ps, t):
        u = u_fun(ps[:, 0], ps[:, 1], t)
        p = p_fun(ps[:, 0], ps[:, 1])
        return (2.0 * p * u)[:, None] * nf.flux(ps, t) - (u * u)[:, None] * g_grad_p(ps, t)

    vals = []
    for t in times:
        u = np.broadcast_to(u_fun(pts[:, 0], pts[:, 1], t), (pts.shape[0],))
        p = np.broadcast_to(p_fun(pts[:, 0], pts[:, 1]), (pts.shape[0],))
        ut = nf.u_t(pts, t)
        gg = nf.flux(pts, t)
        norm_g = np.einsum("ni,ni->n", gg, nf.grad_u(pts, t))
        lhs = nf.div_of(vec_b, pts, t) + 2.0 * nf.forcing(pts, t) * p * u
        ddt = (u_fun(pts[:, 0], pts[:, 1], t + h) * nf.u_t(pts, t + h)
               - u_fun(pts[:, 0], pts[:, 1], t - h) * nf.u_t(pts, t - h)) / (2 * h)
        rhs = 2.0 * p * ddt + 2.0 * p * (norm_g - ut * ut) - u * u * nf.div_of(g_grad_p, pts, t)
        vals.append(lhs - rhs)
    vals = np.concatenate(vals)
    return ResidualStats(
        max_abs=float(np.abs(vals).max()),
        rms=float(np.sqrt(np.mean(vals * vals))),
        samples=vals.size,
    )


def builtin_test_fields():
    """Space-time polynomial fields of total degree <= 3."""
    return (
        _X**2 + _T**2,
        _X * _Y * _T,
        _X**3 - 3 * _X * _Y**2 + _T**3,
        1 + _X + _Y + _T + _X * _T,
    )


def builtin_multipliers():
    return (sp.Integer(1), sp.Rational(3, 2), _X)


def sample_grid(radius=0.9, n=7):
    """Deterministic interior sample points for the identity suites."""
    xs = np.linspace(-radius, radius, n)
    gx, gy = np.meshgrid(xs, xs, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    return pts[np.linalg.norm(pts, axis=1) < radius]


def run_identity_suite(metric: MetricField, H: VectorFieldH, fd_steps=(2e-3, 1e-3, 5e-4),
                       exact_tol=1e-8, order_tol=1.8):
    """Exact-path residuals plus FD-path convergence for both identities.

    Returns a report dict; 'passed' requires every exact residual below
    exact_tol and every FD sequence to converge with observed order at
    least order_tol over the given halvings.
    """
    pts = sample_grid()
    times = (0.3, 0.7)
    report = {"exact": [], "fd_orders": [], "passed": True}
    for u in builtin_test_fields():
        fun = residual_A_exact(metric, H, u)
        stats = _eval_stats(fun, pts, times)
        report["exact"].append(("A", str(u), stats.max_abs))
        for p in builtin_multipliers():
            fun = residual_B_exact(metric, p, u)
            stats = _eval_stats(fun, pts, times)
            report["exact"].append(("B", f"{u} | p={p}", stats.max_abs))

    u = builtin_test_fields()[0]
    u_fun = sp.lambdify((_X, _Y, _T), u, "numpy")
    p_expr = builtin_multipliers()[2]
    p_fun = sp.lambdify((_X, _Y), p_expr, "numpy")
    errs_a = [residual_A_fd(metric, H, u_fun, pts, times, h).max_abs for h in fd_steps]
    errs_b = [residual_B_fd(metric, p_fun, u_fun, pts, times, h).max_abs for h in fd_steps]
    for name, errs in (("A", errs_a), ("B", errs_b)):
        orders = [
            np.log2(errs[k] / errs[k + 1]) for k in range(len(errs) - 1) if errs[k + 1] > 0
        ]
        order = min(orders) if orders else float("inf")
        report["fd_orders"].append((name, errs, order))
        if order < order_tol:
            report["passed"] = False
    if any(m > exact_tol for _, _, m in report["exact"]):
        report["passed"] = False
    return report
