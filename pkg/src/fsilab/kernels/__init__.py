"""Element kernels with a compiled core and a pure-numpy fallback.

The compiled backend (Cython, built at install time) is used when
importable; set ``FSILAB_BACKEND=python`` to force the numpy fallback
or ``FSILAB_BACKEND=native`` to require the compiled one.

``FSI_THREADS`` caps the number of threads the compiled backend uses to
split cell ranges.  Per-cell results are independent of the split, so
output is bit-identical for any thread count.
"""

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import numpy_backend

try:
    from . import _native

    HAVE_NATIVE = True
except ImportError:
    _native = None
    HAVE_NATIVE = False

_requested = os.environ.get("FSILAB_BACKEND", "auto").lower()
if _requested == "native" and not HAVE_NATIVE:
    raise ImportError("FSILAB_BACKEND=native but the compiled backend is missing")
BACKEND = "native" if (HAVE_NATIVE and _requested != "python") else "python"


def thread_count() -> int:
    raw = os.environ.get("FSI_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n <= 0:
        n = os.cpu_count() or 1
    return max(1, n)


def _run_ranges(fn, ncells, args):
    nthreads = min(thread_count(), max(1, ncells // 256))
    if nthreads <= 1:
        fn(*args, 0, ncells)
        return
    bounds = np.linspace(0, ncells, nthreads + 1).astype(int)
    with ThreadPoolExecutor(max_workers=nthreads) as pool:
        futs = [
            pool.submit(fn, *args, int(bounds[i]), int(bounds[i + 1]))
            for i in range(nthreads)
        ]
        for f in futs:
            f.result()


def _native_call(fn, out_shape, *arrays):
    out = np.empty(out_shape)
    arrays = tuple(np.ascontiguousarray(a) for a in arrays)
    _run_ranges(fn, out_shape[0], (*arrays, out))
    return out


def local_stiffness(gradphi, wdet, coeff, backend=None):
    if (backend or BACKEND) == "native":
        n = gradphi.shape[2]
        return _native_call(
            _native.local_stiffness_range,
            (gradphi.shape[0], n, n),
            gradphi,
            wdet,
            coeff,
        )
    return numpy_backend.local_stiffness(gradphi, wdet, coeff)


def local_mass(phi, wdet, backend=None):
    if (backend or BACKEND) == "native":
        n = phi.shape[1]
        return _native_call(
            _native.local_mass_range, (wdet.shape[0], n, n), phi, wdet
        )
    return numpy_backend.local_mass(phi, wdet)


def local_div(gradphi, psi, wdet, bvec, backend=None):
    if (backend or BACKEND) == "native":
        return _native_call(
            _native.local_div_range,
            (gradphi.shape[0], psi.shape[1], gradphi.shape[2]),
            gradphi,
            psi,
            wdet,
            bvec,
        )
    return numpy_backend.local_div(gradphi, psi, wdet, bvec)


def field_grad(gradphi, coefs, backend=None):
    if (backend or BACKEND) == "native":
        return _native_call(
            _native.field_grad_range,
            (gradphi.shape[0], gradphi.shape[1], 2),
            gradphi,
            coefs,
        )
    return numpy_backend.field_grad(gradphi, coefs)


def field_value(phi, coefs, backend=None):
    if (backend or BACKEND) == "native":
        return _native_call(
            _native.field_value_range,
            (coefs.shape[0], phi.shape[0]),
            phi,
            coefs,
        )
    return numpy_backend.field_value(phi, coefs)
