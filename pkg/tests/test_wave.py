import numpy as np
import pytest

from fsilab import wave
from fsilab.errors import NotPositiveDefinite
from fsilab.fem import Discretization
from fsilab.fluid import identity_a_field
from fsilab.meshing import build_disc_annulus, integrate_boundary, integrate_domain
from fsilab.metric import MetricField, poly_from_spec

RNG = np.random.default_rng(7)


@pytest.fixture(scope="module")
def disc():
    return Discretization(build_disc_annulus(1.0, 2.0, 0.3))


class TestAssembly:
    def test_constants_in_stiffness_kernel(self, disc):
        ops = wave.assemble_wave_operators(disc, MetricField.identity(2), beta=0.0)
        c = np.ones(disc.dis.ndof)
        assert np.abs(ops.K @ c).max() <= 1e-12

    def test_beta_additivity(self, disc):
        ops = wave.assemble_wave_operators(disc, MetricField.identity(2), beta=1.0)
        x = RNG.standard_normal(disc.dis.ndof)
        lhs = x @ (ops.K @ x)
        rhs = x @ (ops.K_grad @ x) + x @ (ops.M @ x)
        assert lhs == pytest.approx(rhs, rel=1e-12)

    def test_anisotropic_energy(self, disc):
        # integral of <G grad w, grad w> for w = x1 and G = diag(2,1) is
        # 2 * (elastic area)
        ops = wave.assemble_wave_operators(disc, MetricField.diagonal([2.0, 1.0]), 0.0)
        w = disc.dis.interpolate(lambda p: p[:, 0])
        area = integrate_domain(disc.mesh, "elastic", lambda p: np.ones(len(p)))
        assert w @ (ops.K_grad @ w) == pytest.approx(2.0 * area, rel=1e-12)
        assert abs(w @ (ops.K_grad @ w) - 2.0 * np.pi) <= 2.0 * disc.mesh.h_max**2

    def test_symmetry(self, disc):
        met = MetricField.conformal(poly_from_spec(2, [{"coeff": 0.2, "powers": [1, 0]}]))
        ops = wave.assemble_wave_operators(disc, met, beta=1.0)
        assert abs(ops.K - ops.K.T).max() <= 1e-12
        assert abs(ops.M - ops.M.T).max() <= 1e-12

    def test_coercivity_with_beta(self, disc):
        ops = wave.assemble_wave_operators(disc, MetricField.identity(2), beta=1.0)
        ratios = []
        for _ in range(100):
            x = RNG.standard_normal(disc.dis.ndof)
            x -= x.mean()
            ratios.append((x @ (ops.K @ x)) / (x @ x))
        assert min(ratios) > 0.0

    def test_rejects_indefinite_coefficients(self, disc):
        bad = MetricField.polynomial_perturbation(
            2, [{"coeff": -4.0, "powers": [0, 0], "i": 0, "j": 0}]
        )
        with pytest.raises(NotPositiveDefinite):
            wave.assemble_wave_operators(disc, bad, beta=1.0)


class TestConormalTrace:
    def test_constant_field(self, disc):
        w = np.ones((2, disc.dis.ndof))
        tr = wave.conormal_trace(disc, MetricField.identity(2), w)
        assert np.abs(tr).max() <= 1e-13

    def test_linear_field_identity_metric(self, disc):
        w = np.stack([disc.dis.interpolate(lambda p: p[:, 0]), np.zeros(disc.dis.ndof)])
        tr = wave.conormal_trace(disc, MetricField.identity(2), w)
        nu1 = disc.iface.normals[:, 0]
        assert np.abs(tr[..., 0] - nu1[:, None]).max() <= 1e-12
        assert np.abs(tr[..., 1]).max() <= 1e-13

    def test_linear_field_diagonal_metric(self, disc):
        w = np.stack([disc.dis.interpolate(lambda p: p[:, 0]), np.zeros(disc.dis.ndof)])
        tr = wave.conormal_trace(disc, MetricField.diagonal([2.0, 1.0]), w)
        nu1 = disc.iface.normals[:, 0]
        assert np.abs(tr[..., 0] - 2.0 * nu1[:, None]).max() <= 1e-12


def test_green_identity(disc):
    # int <G grad w, grad phi> + int div(G grad w) phi = oint w_conormal phi
    # for w = x^2 + y, phi = x y, G = diag(2, 1); all integrands are low-order
    # polynomials on the meshed polygon, so equality holds to roundoff.
    mesh = disc.mesh
    vol1 = integrate_domain(
        mesh, "elastic", lambda p: 4.0 * p[:, 0] * p[:, 1] + p[:, 0]
    )
    vol2 = integrate_domain(mesh, "elastic", lambda p: 4.0 * p[:, 0] * p[:, 1])
    bnd = integrate_boundary(
        mesh,
        "interface",
        lambda p, n: (n[:, 0] * 4.0 * p[:, 0] + n[:, 1] * 1.0) * p[:, 0] * p[:, 1],
    )
    assert vol1 + vol2 == pytest.approx(bnd, abs=1e-12)


class TestStandaloneSolver:
    def test_energy_conservation_without_forcing(self, disc):
        # midpoint rule conserves the discrete energy exactly when no
        # boundary data or forcing act (the gamma = 0 decoupled check)
        solver = wave.StandaloneWaveSolver(disc, MetricField.identity(2), 1.0, dt=0.02)
        w0 = disc.dis.interpolate(
            lambda p: np.exp(-6.0 * (p[:, 0] ** 2 + p[:, 1] ** 2))
        )
        z0 = np.zeros(disc.dis.ndof)
        e0 = solver.energy(w0, z0)
        w, z, t = solver.run(w0, z0, t_end=2.0)
        assert abs(solver.energy(w, z) - e0) <= 1e-10 * e0 * t

    def test_mms_two_levels(self):
        # light spatial-order sanity check; the full three-level suite
        # runs in the acceptance tests
        from fsilab.verification import wave_mms

        out = wave_mms(levels=2, h0=0.25)
        assert out["orders"][0] >= 2.7
