"""Benchmark of the hot element kernels: compiled core vs numpy fallback.

The per-step cost of ALE mode is dominated by reassembly of the
variable-coefficient viscous and pressure blocks plus quadrature-point
field evaluation, which is what these kernels implement.  Run with

    python benchmarks/bench_assembly.py [--h 0.1] [--repeats 5]

FSI_THREADS caps the thread count of the compiled backend.
"""

import argparse
import time

import numpy as np

from fsilab import kernels
from fsilab.fem import Discretization
from fsilab.fluid import identity_a_field, viscous_coefficient
from fsilab.meshing import build_disc_annulus


def time_call(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--h", type=float, default=0.1)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    mesh = build_disc_annulus(1.0, 2.0, args.h)
    disc = Discretization(mesh)
    rng = np.random.default_rng(0)
    a_field = identity_a_field(disc) + 1e-3 * rng.standard_normal(
        identity_a_field(disc).shape
    )
    coeff = np.ascontiguousarray(viscous_coefficient(a_field))
    bvec = np.ascontiguousarray(a_field[..., :, 0])
    coefs = np.ascontiguousarray(
        rng.standard_normal(disc.vel.ndof)[disc.vel.cell_dofs]
    )
    tables = disc.vel_t
    print(f"mesh h={args.h}: {mesh.num_cells} cells, "
          f"{len(disc.vel.cells)} fluid cells, {disc.vel.ndof} velocity dofs")
    print(f"compiled backend available: {kernels.HAVE_NATIVE} "
          f"(active: {kernels.BACKEND}, threads: {kernels.thread_count()})")

    cases = [
        ("local_stiffness", lambda b: kernels.local_stiffness(
            tables.gradphi, tables.wdet, coeff, backend=b)),
        ("local_div", lambda b: kernels.local_div(
            tables.gradphi, disc.pre_t.phi, tables.wdet, bvec, backend=b)),
        ("local_mass", lambda b: kernels.local_mass(
            tables.phi, tables.wdet, backend=b)),
        ("field_grad", lambda b: kernels.field_grad(tables.gradphi, coefs, backend=b)),
    ]
    backends = ["python"] + (["native"] if kernels.HAVE_NATIVE else [])

    header = f"{'kernel':<16}" + "".join(f"{b:>12}" for b in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    for name, fn in cases:
        times = [time_call(lambda b=b: fn(b), args.repeats) for b in backends]
        row = f"{name:<16}" + "".join(f"{t * 1e3:>10.2f}ms" for t in times)
        if len(times) == 2:
            row += f"{times[0] / times[1]:>9.1f}x"
        print(row)

    if kernels.HAVE_NATIVE:
        ref = kernels.local_stiffness(tables.gradphi, tables.wdet, coeff, backend="python")
        nat = kernels.local_stiffness(tables.gradphi, tables.wdet, coeff, backend="native")
        print(f"max backend disagreement (local_stiffness): "
              f"{np.abs(ref - nat).max():.3e}")


if __name__ == "__main__":
    main()
