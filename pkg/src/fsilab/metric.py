"""Variable coefficient fields, the associated Riemannian metric, and
escape-field certification.

The coefficient matrix field G(x) is symmetric positive definite; its
inverse g = G^-1 is treated as a Riemannian metric on the elastic body.
Levi-Civita Christoffel symbols of g feed the covariant differential of
a candidate escape vector field H, whose uniform positivity (plus
boundary positivity of <H, nu>) is certified by dense sampling.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import EmptySampleSet, NotPositiveDefinite

_EIG_FLOOR = 1e-12


@dataclass(frozen=True)
class Polynomial:
    """Multivariate polynomial as a tuple of (coefficient, powers) terms."""

    dim: int
    terms: tuple

    def __call__(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        out = np.zeros(pts.shape[0])
        for c, powers in self.terms:
            mono = np.ones(pts.shape[0]) * c
            for i, p in enumerate(powers):
                if p:
                    mono *= pts[:, i] ** p
            out += mono
        return out

    def grad(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        out = np.zeros((pts.shape[0], self.dim))
        for c, powers in self.terms:
            for i, p in enumerate(powers):
                if not p:
                    continue
                mono = np.full(pts.shape[0], c * p)
                for j, pj in enumerate(powers):
                    e = pj - 1 if j == i else pj
                    if e:
                        mono *= pts[:, j] ** e
                out[:, i] += mono
        return out


def poly_from_spec(dim, spec):
    """Build a Polynomial from [{'coeff': c, 'powers': [..]}, ...]."""
    terms = tuple((float(t["coeff"]), tuple(int(p) for p in t["powers"])) for t in spec)
    for _, powers in terms:
        if len(powers) != dim:
            raise ValueError("powers length must equal dim")
    return Polynomial(dim=dim, terms=terms)


class MetricField:
    """Coefficient matrix field G(x) with named builtin descriptors.

    Builtins carry exact spatial derivatives; a custom evaluator falls
    back to central differences with a caller-supplied step.
    """

    def __init__(self, dim, kind, params=None, evaluator=None):
        self.dim = dim
        self.kind = kind
        self.params = params or {}
        self._evaluator = evaluator

    @classmethod
    def identity(cls, dim=2):
        return cls(dim, "identity")

    @classmethod
    def diagonal(cls, entries):
        entries = tuple(float(e) for e in entries)
        return cls(len(entries), "diagonal", {"entries": entries})

    @classmethod
    def conformal(cls, phi: Polynomial):
        return cls(phi.dim, "conformal", {"phi": phi})

    @classmethod
    def polynomial_perturbation(cls, dim, terms):
        """G = I + sum of c * x^powers * (e_i e_j^T + e_j e_i^T)."""
        norm = tuple(
            (float(t["coeff"]), tuple(int(p) for p in t["powers"]), int(t["i"]), int(t["j"]))
            for t in terms
        )
        return cls(dim, "polynomial-perturbation", {"terms": norm})

    @classmethod
    def custom(cls, dim, evaluator):
        return cls(dim, "custom", evaluator=evaluator)

    @property
    def has_exact_derivatives(self):
        return self.kind != "custom"

    def __call__(self, pts):
        """G at points (N, dim) -> (N, dim, dim)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        n, d = pts.shape[0], self.dim
        if self.kind == "identity":
            return np.broadcast_to(np.eye(d), (n, d, d)).copy()
        if self.kind == "diagonal":
            return np.broadcast_to(np.diag(self.params["entries"]), (n, d, d)).copy()
        if self.kind == "conformal":
            f = np.exp(2.0 * self.params["phi"](pts))
            return f[:, None, None] * np.eye(d)
        if self.kind == "polynomial-perturbation":
            out = np.broadcast_to(np.eye(d), (n, d, d)).copy()
            for c, powers, i, j in self.params["terms"]:
                mono = Polynomial(d, ((c, powers),))(pts)
                out[:, i, j] += mono
                if i != j:
                    out[:, j, i] += mono
            return out
        out = np.empty((n, d, d))
        for k in range(n):
            out[k] = self._evaluator(pts[k])
        return out

    def gradient(self, pts):
        """Exact dG[l, i, j] = d G_ij / d x_l at points -> (N, d, d, d)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        n, d = pts.shape[0], self.dim
        out = np.zeros((n, d, d, d))
        if self.kind in ("identity", "diagonal"):
            return out
        if self.kind == "conformal":
            phi = self.params["phi"]
            f = np.exp(2.0 * phi(pts))
            dphi = phi.grad(pts)
            return 2.0 * (f[:, None] * dphi)[:, :, None, None] * np.eye(d)
        if self.kind == "polynomial-perturbation":
            for c, powers, i, j in self.params["terms"]:
                dm = Polynomial(d, ((c, powers),)).grad(pts)
                out[:, :, i, j] += dm
                if i != j:
                    out[:, :, j, i] += dm
            return out
        raise NotPositiveDefinite  # pragma: no cover - guarded by callers


def invert_metric(g_mat):
    """Inverse of one SPD matrix; rejects non-positive-definite input."""
    g_mat = np.asarray(g_mat, dtype=float)
    w = np.linalg.eigvalsh(g_mat)
    if w[0] <= _EIG_FLOOR:
        raise NotPositiveDefinite(f"smallest eigenvalue {w[0]:.3e} <= {_EIG_FLOOR}")
    return np.linalg.inv(g_mat)


def metric_inverse_batch(g_batch):
    """Inverse metric at many points with a positivity check."""
    w = np.linalg.eigvalsh(g_batch)
    if w[..., 0].min() <= _EIG_FLOOR:
        raise NotPositiveDefinite(
            f"smallest eigenvalue {w[..., 0].min():.3e} along batch"
        )
    return np.linalg.inv(g_batch)


class VectorFieldH:
    """Candidate escape vector field with named builtin descriptors."""

    def __init__(self, dim, kind, params=None, evaluator=None):
        self.dim = dim
        self.kind = kind
        self.params = params or {}
        self._evaluator = evaluator

    @classmethod
    def radial(cls, center):
        center = np.asarray(center, dtype=float)
        return cls(center.size, "radial", {"center": center})

    @classmethod
    def scaled_radial(cls, alpha, center):
        center = np.asarray(center, dtype=float)
        return cls(center.size, "scaled-radial", {"alpha": float(alpha), "center": center})

    @classmethod
    def polynomial(cls, components):
        comps = tuple(components)
        return cls(comps[0].dim, "polynomial", {"components": comps})

    @classmethod
    def custom(cls, dim, evaluator):
        return cls(dim, "custom", evaluator=evaluator)

    def __call__(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if self.kind == "radial":
            return pts - self.params["center"]
        if self.kind == "scaled-radial":
            return self.params["alpha"] * (pts - self.params["center"])
        if self.kind == "polynomial":
            return np.stack([c(pts) for c in self.params["components"]], axis=1)
        return np.stack([self._evaluator(p) for p in pts])

    def jacobian(self, pts, h=None):
        """dH[k, j] = d H^k / d x_j at points -> (N, d, d)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        n, d = pts.shape[0], self.dim
        if self.kind == "radial":
            return np.broadcast_to(np.eye(d), (n, d, d)).copy()
        if self.kind == "scaled-radial":
            return self.params["alpha"] * np.broadcast_to(np.eye(d), (n, d, d)).copy()
        if self.kind == "polynomial":
            grads = np.stack([c.grad(pts) for c in self.params["components"]], axis=1)
            return grads
        if h is None:
            raise ValueError("custom vector field requires a finite-difference step")
        out = np.empty((n, d, d))
        for j in range(d):
            step = np.zeros(d)
            step[j] = h
            out[:, :, j] = (self(pts + step) - self(pts - step)) / (2.0 * h)
        return out


def _metric_g_and_grad(metric: MetricField, pts, h=None):
    """g = G^-1 and its spatial gradient dg[l,i,j] at points.

    Exact path uses dg = -g dG g; the finite-difference path differences
    g itself with central steps of size h.
    """
    g = metric_inverse_batch(metric(pts))
    if h is None:
        if not metric.has_exact_derivatives:
            raise ValueError("metric without exact derivatives requires a step h")
        dG = metric.gradient(pts)
        dg = -np.einsum("nik,nlkm,nmj->nlij", g, dG, g)
        return g, dg
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    d = metric.dim
    dg = np.empty((pts.shape[0], d, d, d))
    for l in range(d):
        step = np.zeros(d)
        step[l] = h
        gp = metric_inverse_batch(metric(pts + step))
        gm = metric_inverse_batch(metric(pts - step))
        dg[:, l] = (gp - gm) / (2.0 * h)
    return g, dg


def _christoffel_batch(ginv, dg):
    """Gamma^k_ij = 0.5 g^{kl} (d_i g_jl + d_j g_il - d_l g_ij).

    dg is stored as dg[n, l, i, j] = d_l g_ij; the raised metric g^{kl}
    is G itself.
    """
    return 0.5 * (
        np.einsum("nkl,nijl->nkij", ginv, dg)
        + np.einsum("nkl,njil->nkij", ginv, dg)
        - np.einsum("nkl,nlij->nkij", ginv, dg)
    )


def christoffel_symbols(metric: MetricField, x, h=None):
    """Levi-Civita symbols of g = G^-1 at one point, indexed [k, i, j].

    h = None selects the exact-derivative path (builtin descriptors);
    a positive h forces second-order central differences of that step.
    """
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    _, dg = _metric_g_and_grad(metric, pts, h)
    gamma = _christoffel_batch(metric(pts), dg)
    return gamma[0] if np.asarray(x).ndim == 1 else gamma


def covariant_differential(metric: MetricField, H: VectorFieldH, x, h=None):
    """Symmetric matrix S with DH(X, X) = X^T S X at one point (or batch)."""
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    g, dg = _metric_g_and_grad(metric, pts, h)
    gamma = _christoffel_batch(metric(pts), dg)
    hv = H(pts)
    dh = H.jacobian(pts, h=h)
    cov = dh + np.einsum("nkjl,nl->nkj", gamma, hv)
    low = np.einsum("nmk,nkj->njm", g, cov)
    s = 0.5 * (low + low.transpose(0, 2, 1))
    return s[0] if np.asarray(x).ndim == 1 else s


@dataclass(frozen=True)
class EscapeCertificate:
    """Sampled certificate for the escape-field condition.

    Refutation is conclusive; certification means no violation was
    found at the reported sample resolution.
    """

    rho0: float
    gamma0: float
    sample_count: int
    min_interior_eigenvalue: float
    min_boundary_inner_product: float
    verdict: str

    def to_dict(self):
        return {
            "rho0": self.rho0,
            "gamma0": self.gamma0,
            "sample_count": self.sample_count,
            "min_interior_eigenvalue": self.min_interior_eigenvalue,
            "min_boundary_inner_product": self.min_boundary_inner_product,
            "verdict": self.verdict,
        }

    def to_text(self):
        return "".join(f"{k}={v}\n" for k, v in self.to_dict().items())


def certify_escape(
    metric: MetricField,
    H: VectorFieldH,
    interior_samples,
    boundary_samples,
    rho0_threshold=1e-6,
    gamma0_threshold=1e-6,
    h=None,
):
    """Sample the escape condition over interior and boundary points.

    boundary_samples is a pair (points, unit outward normals).  Returns
    an EscapeCertificate; raises EmptySampleSet on empty input and
    NotPositiveDefinite if the coefficient field fails positivity at a
    sample.
    """
    interior = np.atleast_2d(np.asarray(interior_samples, dtype=float))
    bpts, bnrm = boundary_samples
    bpts = np.atleast_2d(np.asarray(bpts, dtype=float))
    bnrm = np.atleast_2d(np.asarray(bnrm, dtype=float))
    if interior.shape[0] == 0 or bpts.shape[0] == 0:
        raise EmptySampleSet("need nonempty interior and boundary samples")
    norms = np.linalg.norm(bnrm, axis=1)
    if np.abs(norms - 1.0).max() > 1e-8:
        raise ValueError("boundary normals must be unit length")

    s = covariant_differential(metric, H, interior, h=h)
    g = metric_inverse_batch(metric(interior))
    min_eig = np.inf
    for k in range(interior.shape[0]):
        w = scipy.linalg.eigh(s[k], g[k], eigvals_only=True)
        min_eig = min(min_eig, w[0])

    hb = H(bpts)
    min_bnd = float(np.min(np.einsum("nd,nd->n", hb, bnrm)))

    certified = (min_eig >= rho0_threshold) and (min_bnd >= gamma0_threshold)
    return EscapeCertificate(
        rho0=float(min_eig),
        gamma0=min_bnd,
        sample_count=interior.shape[0] + bpts.shape[0],
        min_interior_eigenvalue=float(min_eig),
        min_boundary_inner_product=min_bnd,
        verdict="certified" if certified else "refuted",
    )


def disc_interior_grid(r0, n, center=(0.0, 0.0)):
    """Deterministic tensor grid restricted to the open disc of radius r0."""
    c = np.asarray(center, dtype=float)
    xs = np.linspace(-r0, r0, n) + c[0]
    ys = np.linspace(-r0, r0, n) + c[1]
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    keep = np.linalg.norm(pts - c, axis=1) < r0 * (1.0 - 1e-12)
    return pts[keep]


def circle_boundary_samples(r0, n, center=(0.0, 0.0)):
    """Uniform samples on the circle with exact unit normals."""
    c = np.asarray(center, dtype=float)
    ang = 2.0 * np.pi * np.arange(n) / n
    normals = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    return c + r0 * normals, normals
