import numpy as np
import pytest

from fsilab import kernels
from fsilab.fem import Discretization
from fsilab.fluid import identity_a_field, viscous_coefficient
from fsilab.meshing import build_disc_annulus

RNG = np.random.default_rng(17)


@pytest.fixture(scope="module")
def data():
    disc = Discretization(build_disc_annulus(1.0, 2.0, 0.3))
    a = identity_a_field(disc) + 0.05 * RNG.standard_normal(
        identity_a_field(disc).shape
    )
    coeff = np.ascontiguousarray(viscous_coefficient(a))
    bvec = np.ascontiguousarray(a[..., :, 0])
    coefs = np.ascontiguousarray(RNG.standard_normal(disc.vel.ndof)[disc.vel.cell_dofs])
    return disc, coeff, bvec, coefs


@pytest.mark.skipif(not kernels.HAVE_NATIVE, reason="compiled backend not built")
def test_backends_agree(data):
    disc, coeff, bvec, coefs = data
    t = disc.vel_t
    pairs = [
        kernels.local_stiffness(t.gradphi, t.wdet, coeff, backend=b)
        for b in ("python", "native")
    ]
    assert np.allclose(pairs[0], pairs[1], rtol=1e-13, atol=1e-15)
    pairs = [
        kernels.local_mass(t.phi, t.wdet, backend=b) for b in ("python", "native")
    ]
    assert np.allclose(pairs[0], pairs[1], rtol=1e-13, atol=1e-15)
    pairs = [
        kernels.local_div(t.gradphi, disc.pre_t.phi, t.wdet, bvec, backend=b)
        for b in ("python", "native")
    ]
    assert np.allclose(pairs[0], pairs[1], rtol=1e-13, atol=1e-15)
    pairs = [
        kernels.field_grad(t.gradphi, coefs, backend=b) for b in ("python", "native")
    ]
    assert np.allclose(pairs[0], pairs[1], rtol=1e-13, atol=1e-15)
    pairs = [
        kernels.field_value(t.phi, coefs, backend=b) for b in ("python", "native")
    ]
    assert np.allclose(pairs[0], pairs[1], rtol=1e-13, atol=1e-15)


@pytest.mark.skipif(not kernels.HAVE_NATIVE, reason="compiled backend not built")
def test_native_result_independent_of_chunking(data, monkeypatch):
    # per-cell loops make the output identical however the cell range is
    # split across threads
    disc, coeff, _, _ = data
    t = disc.vel_t
    ref = kernels.local_stiffness(t.gradphi, t.wdet, coeff, backend="native")
    monkeypatch.setenv("FSI_THREADS", "4")
    split = kernels.local_stiffness(t.gradphi, t.wdet, coeff, backend="native")
    assert np.array_equal(ref, split)


def test_python_backend_selected_by_env():
    import subprocess
    import sys

    code = (
        "import os; os.environ['FSILAB_BACKEND'] = 'python'; "
        "from fsilab import kernels; print(kernels.BACKEND)"
    )
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True)
    assert out.stdout.strip() == "python"
