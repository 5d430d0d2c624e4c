"""Energy functionals, dissipation, perturbation terms, inequality
checks and decay-rate fits.

Time derivatives of the trajectory (v_t, w_tt, ...) are taken by
second-order finite differences of stored states rather than by solving
time-differentiated systems; interior records use centered stencils and
the first/last records fall back to one-sided stencils of the same
order.
"""

import math
from dataclasses import dataclass, fields

import numpy as np

from .errors import InsufficientData, InsufficientHistory
from .fem import Discretization
from .fluid import identity_a_field, viscous_coefficient
from .metric import MetricField
from .wave import conormal_trace, metric_at_boundary, metric_at_qp

CSV_HEADER = "t,E,D,E1,D1,E2,D2,X,R1,R2,iface_res,det_dev,ellip_min"


@dataclass
class EnergyRecord:
    """One row of the diagnostics time series.

    D carries the midpoint dissipation of the step(s) ending at t (the
    quantity entering the discrete energy identity); the t = 0 row
    stores the instantaneous dissipation instead.
    """

    t: float
    E: float
    D: float
    E1: float
    D1: float
    E2: float
    D2: float
    X: float
    R1: float
    R2: float
    iface_res: float
    det_dev: float
    ellip_min: float

    def csv_row(self):
        vals = [getattr(self, f.name) for f in fields(self)]
        return ",".join(f"{v:.17g}" for v in vals)


@dataclass(frozen=True)
class DecayFit:
    rate: float
    amplitude: float
    r_squared: float
    window: tuple

    def to_dict(self):
        return {
            "rate": self.rate,
            "amplitude": self.amplitude,
            "r_squared": self.r_squared,
            "window": list(self.window),
        }


def fd_weights(offsets, order):
    """Finite-difference weights for the order-th derivative at 0.

    offsets are integer multiples of the step; weights come back scaled
    for unit step (divide by dt**order at use sites).
    """
    offsets = np.asarray(offsets, dtype=float)
    n = offsets.size
    if n <= order:
        raise InsufficientHistory(
            f"{n} states cannot resolve a derivative of order {order}"
        )
    van = np.vander(offsets, n, increasing=True).T
    rhs = np.zeros(n)
    rhs[order] = math.factorial(order)
    return np.linalg.solve(van, rhs)


def _stencil(i, n, width):
    """Window of `width` indices around i, clamped to [0, n)."""
    lo = min(max(i - width // 2, 0), max(n - width, 0))
    hi = min(lo + width, n)
    return list(range(lo, hi))


# Five-point centered least-squares differentiators (second order).  The
# first two suppress near-Nyquist sawtooth content of the sampled
# trajectory by roughly an order of magnitude relative to the minimal
# stencils; the third-derivative stencil is the standard centered one.
_LSQ5 = {
    1: np.array([-2.0, -1.0, 0.0, 1.0, 2.0]) / 10.0,
    2: np.array([2.0, -1.0, -2.0, -1.0, 2.0]) / 7.0,
    3: np.array([-0.5, 1.0, 0.0, -1.0, 0.5]),
}


def _derivative(series, i, dt, order, width=5):
    n = len(series)
    if all(s is series[0] for s in series):
        # Constant series (frozen-mode coefficient history shares one
        # array): the derivative is exactly zero, not a roundoff sum.
        return np.zeros_like(series[0])
    if n >= 5 and 2 <= i <= n - 3:
        idx = range(i - 2, i + 3)
        w = _LSQ5[order]
    else:
        idx = _stencil(i, n, width)
        w = fd_weights([j - i for j in idx], order)
    out = None
    for c, j in zip(w, idx):
        term = c * series[j]
        out = term if out is None else out + term
    return out / dt**order


class DiagnosticsEngine:
    """Quadratic-form evaluators bound to one discretization and metric."""

    def __init__(self, disc: Discretization, metric: MetricField, beta, gamma,
                 viscosity=1.0, eps_hat1=0.01):
        self.disc = disc
        self.metric = metric
        self.beta = beta
        self.gamma = gamma
        self.viscosity = viscosity
        self.eps_hat1 = eps_hat1

        self.Mf = disc.mass_matrix("vel")
        self.Me = disc.mass_matrix("dis")
        self.Kgrad = disc.stiffness_matrix("dis", metric_at_qp(disc, metric))
        self.Klap = disc.stiffness_matrix("vel", identity_a_field(disc))
        self.Cff = disc.boundary_mass(disc.iface, "vel", "vel")
        self.Cfe = disc.boundary_mass(disc.iface, "vel", "dis")
        self.Cee = disc.boundary_mass(disc.iface, "dis", "dis")
        self._gb = metric_at_boundary(disc, metric, disc.iface)

    # -- pointwise-in-time quantities ----------------------------------

    def energy_E(self, v, w, z):
        """First-level energy 0.5 (|v|^2 + |w_t|^2 + beta |w|^2 + <G grad w, grad w>)."""
        total = 0.0
        for i in range(2):
            total += v[i] @ (self.Mf @ v[i])
            total += z[i] @ (self.Me @ z[i])
            total += self.beta * (w[i] @ (self.Me @ w[i]))
            total += w[i] @ (self.Kgrad @ w[i])
        return 0.5 * total

    def viscous_form(self, u, aat):
        """Coefficient-form viscous energy integral of a velocity field."""
        out = 0.0
        for i in range(2):
            g = self.disc.grad_at_qp("vel", u[i])
            out += float(
                np.sum(self.disc.vel_t.wdet * np.einsum("cqj,cqjk,cqk->cq", g, aat, g))
            )
        return out

    def conormal_sq(self, field):
        """gamma-free squared L2(interface) norm of the conormal trace."""
        tr = conormal_trace(self.disc, self.metric, field)
        return float(np.sum(self.disc.iface.wlen * np.sum(tr * tr, axis=2)))

    def dissipation_D(self, v, w, aat=None):
        """Instantaneous dissipation: viscous coefficient form + interface term."""
        if aat is None:
            aat = viscous_coefficient(identity_a_field(self.disc))
        return self.viscosity * self.viscous_form(v, aat) + self.gamma * self.conormal_sq(w)

    def grad_norm_sq_f(self, v):
        return float(sum(v[i] @ (self.Klap @ v[i]) for i in range(2)))

    def interface_residual(self, v, w, z):
        """L2(interface) norm of w_t - v + gamma * conormal(w)."""
        cono = conormal_trace(self.disc, self.metric, w)
        total = 0.0
        for i in range(2):
            zv = self.disc.trace_values(self.disc.iface, "dis", z[i])
            vv = self.disc.trace_values(self.disc.iface, "vel", v[i])
            r = zv - vv + self.gamma * cono[..., i]
            total += float(np.sum(self.disc.iface.wlen * r * r))
        return math.sqrt(total)

    # -- window-based higher diagnostics --------------------------------

    def energy_E1(self, snaps, i, dt):
        """Second-level energy from finite differences of stored states."""
        if len(snaps) < 3:
            raise InsufficientHistory("E1 needs at least 3 stored states")
        vt = _derivative([s.v for s in snaps], i, dt, 1, 3)
        zt = _derivative([s.z for s in snaps], i, dt, 1, 3)
        z = snaps[i].z
        total = 0.0
        for c in range(2):
            total += vt[c] @ (self.Mf @ vt[c])
            total += self.beta * (z[c] @ (self.Me @ z[c]))
            total += zt[c] @ (self.Me @ zt[c])
            total += z[c] @ (self.Kgrad @ z[c])
        return 0.5 * total

    def energy_E2(self, snaps, i, dt):
        """Third-level energy from finite differences of stored states."""
        if len(snaps) < 5:
            raise InsufficientHistory("E2 needs at least 5 stored states")
        vtt = _derivative([s.v for s in snaps], i, dt, 2, 4)
        zt = _derivative([s.z for s in snaps], i, dt, 1, 3)
        ztt = _derivative([s.z for s in snaps], i, dt, 2, 4)
        total = 0.0
        for c in range(2):
            total += vtt[c] @ (self.Mf @ vtt[c])
            total += self.beta * (zt[c] @ (self.Me @ zt[c]))
            total += ztt[c] @ (self.Me @ ztt[c])
            total += zt[c] @ (self.Kgrad @ zt[c])
        return 0.5 * total

    def dissipation_D1(self, snaps, i, dt):
        vt = _derivative([s.v for s in snaps], i, dt, 1, 3)
        return self.viscosity * self.viscous_form(vt, snaps[i].aat) + (
            self.gamma * self.conormal_sq(snaps[i].z)
        )

    def dissipation_D2(self, snaps, i, dt):
        vtt = _derivative([s.v for s in snaps], i, dt, 2, 4)
        zt = _derivative([s.z for s in snaps], i, dt, 1, 3)
        return self.viscosity * self.viscous_form(vtt, snaps[i].aat) + (
            self.gamma * self.conormal_sq(zt)
        )

    def _fluid_point_data(self, snaps, i, dt):
        disc = self.disc
        grads = {}
        for name, order in (("v", 0), ("vt", 1), ("vtt", 2)):
            if order == 0:
                coefs = snaps[i].v
            else:
                width = 3 if order == 1 else 4
                coefs = _derivative([s.v for s in snaps], i, dt, order, width)
            grads[name] = [disc.grad_at_qp("vel", coefs[c]) for c in range(2)]
        qv = disc.value_at_qp("pre", snaps[i].q)
        qt = disc.value_at_qp("pre", _derivative([s.q for s in snaps], i, dt, 1, 3))
        qtt = disc.value_at_qp("pre", _derivative([s.q for s in snaps], i, dt, 2, 4))
        da = _derivative([s.a for s in snaps], i, dt, 1, 3)
        dtt_a = _derivative([s.a for s in snaps], i, dt, 2, 4)
        d_aat = _derivative([s.aat for s in snaps], i, dt, 1, 3)
        dtt_aat = _derivative([s.aat for s in snaps], i, dt, 2, 4)
        return grads, (qv, qt, qtt), (da, dtt_a, d_aat, dtt_aat)

    def perturbation_R1(self, snaps, i, dt):
        """Instantaneous (R1(t), v_t(t)) from the stored trajectory.

        Every term carries a time derivative of the coefficient field,
        so a frozen run yields exactly zero.
        """
        if len(snaps) < 3:
            raise InsufficientHistory("R1 needs at least 3 stored states")
        grads, (qv, qt, _), (da, _, d_aat, _) = self._fluid_point_data(snaps, i, dt)
        wdet = self.disc.vel_t.wdet
        out = 0.0
        for c in range(2):
            gv, gvt = grads["v"][c], grads["vt"][c]
            out -= float(np.sum(wdet * np.einsum("cqj,cqjk,cqk->cq", gvt, d_aat, gv)))
            bk = da[..., :, c]
            out += float(np.sum(wdet * qv * np.einsum("cqk,cqk->cq", bk, gvt)))
            out -= float(np.sum(wdet * qt * np.einsum("cqk,cqk->cq", bk, gv)))
        return out

    def perturbation_R2(self, snaps, i, dt):
        """Instantaneous (R2(t), v_tt(t)), reduced with the constraint so
        that every term carries d_t a or d_tt a."""
        if len(snaps) < 5:
            raise InsufficientHistory("R2 needs at least 5 stored states")
        grads, (qv, qt, qtt), (da, dtt_a, d_aat, dtt_aat) = self._fluid_point_data(
            snaps, i, dt
        )
        wdet = self.disc.vel_t.wdet
        out = 0.0
        for c in range(2):
            gv, gvt, gvtt = grads["v"][c], grads["vt"][c], grads["vtt"][c]
            out -= 2.0 * float(
                np.sum(wdet * np.einsum("cqj,cqjk,cqk->cq", gvtt, d_aat, gvt))
            )
            out -= float(
                np.sum(wdet * np.einsum("cqj,cqjk,cqk->cq", gvtt, dtt_aat, gv))
            )
            b1 = da[..., :, c]
            b2 = dtt_a[..., :, c]
            out += float(np.sum(wdet * qv * np.einsum("cqk,cqk->cq", b2, gvtt)))
            out += 2.0 * float(np.sum(wdet * qt * np.einsum("cqk,cqk->cq", b1, gvtt)))
            out -= 2.0 * float(np.sum(wdet * qtt * np.einsum("cqk,cqk->cq", b1, gvt)))
            out -= float(np.sum(wdet * qtt * np.einsum("cqk,cqk->cq", b2, gv)))
        return out

    def total_X(self, e, e1, e2, grad_v_sq, grad_vt_sq):
        return e + e1 + e2 + self.eps_hat1 * (grad_v_sq + grad_vt_sq)

    def fill_record(self, snaps, i, dt, pointwise=None):
        """Assemble the EnergyRecord for window position i.

        Derivative-based columns come from stencils centered at i; the
        pointwise columns (t, E, D, residuals) come from `pointwise`
        when given, which lets edge records reuse the nearest centered
        derivative estimates.
        """
        s = pointwise if pointwise is not None else snaps[i]
        n = len(snaps)
        if n >= 3:
            e1 = self.energy_E1(snaps, i, dt)
            d1 = self.dissipation_D1(snaps, i, dt)
            r1 = self.perturbation_R1(snaps, i, dt)
            vt = _derivative([x.v for x in snaps], i, dt, 1, 3)
            gvt = self.grad_norm_sq_f(vt)
        else:
            e1 = d1 = r1 = gvt = 0.0
        if n >= 5:
            e2 = self.energy_E2(snaps, i, dt)
            d2 = self.dissipation_D2(snaps, i, dt)
            r2 = self.perturbation_R2(snaps, i, dt)
        else:
            e2 = d2 = r2 = 0.0
        gv = self.grad_norm_sq_f(s.v)
        return EnergyRecord(
            t=s.t,
            E=s.E,
            D=s.D,
            E1=e1,
            D1=d1,
            E2=e2,
            D2=d2,
            X=self.total_X(s.E, e1, e2, gv, gvt),
            R1=r1,
            R2=r2,
            iface_res=s.iface_res,
            det_dev=s.det_dev,
            ellip_min=s.ellip_min,
        )


def check_energy_inequality(records, level=0, dt=None):
    """Worst cumulative violation of the level-k energy inequality.

    Uses E(t_n) + sum_{m<=n} dt * D_m - E(0) - sum dt * R_m (levels >= 1
    include the perturbation sum).  The D column of records from a run
    holds midpoint dissipations, so at level 0 the sum telescopes the
    discrete identity exactly.
    """
    if not records:
        raise InsufficientData("empty record series")
    get = {
        0: (lambda r: r.E, lambda r: r.D, lambda r: 0.0),
        1: (lambda r: r.E1, lambda r: r.D1, lambda r: r.R1),
        2: (lambda r: r.E2, lambda r: r.D2, lambda r: r.R2),
    }[level]
    e_fun, d_fun, r_fun = get
    if dt is None:
        dt = records[1].t - records[0].t if len(records) > 1 else 0.0
    e0 = e_fun(records[0])
    worst = 0.0
    acc = 0.0
    for rec in records[1:]:
        acc += dt * (d_fun(rec) - r_fun(rec))
        worst = max(worst, e_fun(rec) + acc - e0)
    return worst


def fit_decay_rate(records, window, floor=1e-300, min_records=10):
    """Least-squares exponential fit of X over a time window.

    Returns a DecayFit with rate = -slope of log X; raises
    InsufficientData when fewer than min_records records qualify.
    """
    ts = np.array([r.t for r in records])
    xs = np.array([r.X for r in records])
    keep = (ts >= window[0]) & (ts <= window[1]) & (xs > floor)
    ts, xs = ts[keep], xs[keep]
    if ts.size < min_records:
        raise InsufficientData(
            f"{ts.size} usable records in window {window}, need {min_records}"
        )
    logx = np.log(xs)
    slope, intercept = np.polyfit(ts, logx, 1)
    fitted = slope * ts + intercept
    ss_res = float(np.sum((logx - fitted) ** 2))
    ss_tot = float(np.sum((logx - logx.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 and ss_res == 0.0 else 1.0 - ss_res / ss_tot
    return DecayFit(
        rate=float(-slope),
        amplitude=float(np.exp(intercept)),
        r_squared=float(r2),
        window=(float(window[0]), float(window[1])),
    )
