"""Vectorized numpy implementations of the element kernels.

These are the reference implementations; the compiled backend in
``_native`` mirrors them loop-wise.  Shapes follow the conventions of
``fem.Discretization``: gradients (C, Q, k, 2), weights*|J| (C, Q),
reference values (Q, k).
"""

import numpy as np


def local_stiffness(gradphi, wdet, coeff):
    """L[c,a,b] = sum_q wdet * grad_a . coeff . grad_b with 2x2 coeff."""
    t = np.einsum("cqad,cqde->cqae", gradphi, coeff)
    return np.einsum("cq,cqae,cqbe->cab", wdet, t, gradphi, optimize=True)


def local_mass(phi, wdet):
    """M[c,a,b] = sum_q wdet * phi_a * phi_b."""
    return np.einsum("cq,qa,qb->cab", wdet, phi, phi, optimize=True)


def local_div(gradphi, psi, wdet, bvec):
    """B[c,p,a] = sum_q wdet * psi_p * (bvec . grad_a)."""
    s = np.einsum("cqd,cqad->cqa", bvec, gradphi)
    return np.einsum("cq,qp,cqa->cpa", wdet, psi, s, optimize=True)


def field_grad(gradphi, coefs):
    """Gradient of a scalar coefficient field at quadrature points."""
    return np.einsum("cqad,ca->cqd", gradphi, coefs)


def field_value(phi, coefs):
    """Values of a scalar coefficient field at quadrature points."""
    return np.einsum("qa,ca->cq", phi, coefs)
