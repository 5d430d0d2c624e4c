"""Command-line interface: run, check-escape, verify-identities, mms.

Outputs are bit-stable: the CSV uses 17-significant-digit decimal
formatting (round-trip exact for doubles) and summary.json contains
only deterministic content; wall time goes to summary.txt.
"""

import argparse
import json
import sys
import time
from pathlib import Path

from .config import parse_config
from .diagnostics import CSV_HEADER, check_energy_inequality, fit_decay_rate
from .errors import ConfigError, InsufficientData
from .identities import run_identity_suite
from .meshing import build_disc_annulus, write_mesh_text
from .metric import certify_escape, circle_boundary_samples, disc_interior_grid
from .stepper import run_simulation
from .verification import run_mms_suite

EXIT_OK = 0
EXIT_REFUTED = 1
EXIT_MAP_DEGENERATE = 2
EXIT_SOLVER_FAILURE = 3
EXIT_VALIDATION = 4
EXIT_COUPLING = 5


def _fmt(x):
    return f"{x:.17g}"


def write_energies_csv(records, path):
    with open(path, "w", newline="\n") as fh:
        fh.write(CSV_HEADER + "\n")
        for rec in records:
            fh.write(rec.csv_row() + "\n")


def _summary_payload(result):
    cfg = result.config
    records = result.records
    e0 = records[0].E if records else 0.0
    checks = {}
    if cfg.physics.mode == "frozen" and len(records) > 1 and e0 > 0.0:
        checks["per_step_energy_identity"] = bool(
            result.max_identity_violation <= 1e-8 * e0
        )
        checks["cumulative_energy_inequality"] = bool(
            check_energy_inequality(records, 0, cfg.time.dt * cfg.diagnostics.stride)
            <= 1e-7 * e0
        )
        worst_rise = max(
            (records[i + 1].E - records[i].E for i in range(len(records) - 1)),
            default=0.0,
        )
        checks["energy_monotone"] = bool(worst_rise <= 1e-10 * e0)
    checks["nonnegative_columns"] = bool(
        all(
            min(r.E, r.D, r.E1, r.D1, r.E2, r.D2, r.X) >= 0.0
            for r in records
        )
    )
    checks["jacobian_within_tol_det"] = bool(
        all(r.det_dev <= cfg.tolerances.tol_det for r in records)
    )
    checks["completed"] = bool(result.status == 0)

    fit = None
    if len(records) > 1:
        t_end = records[-1].t
        window = (0.4 * t_end, t_end)
        try:
            fit = fit_decay_rate(records, window).to_dict()
        except InsufficientData:
            fit = None

    interior = disc_interior_grid(cfg.geometry.r0, cfg.escape.grid_n)
    boundary = circle_boundary_samples(cfg.geometry.r0, cfg.escape.boundary_n)
    cert = certify_escape(
        cfg.metric_field(),
        cfg.escape_field(),
        interior,
        boundary,
        rho0_threshold=cfg.escape.rho0_threshold,
        gamma0_threshold=cfg.escape.gamma0_threshold,
    )

    return {
        "config": json.loads(cfg.canonical_json()),
        "config_hash": cfg.content_hash(),
        "status": result.status,
        "message": result.message,
        "steps_completed": result.steps_completed,
        "final_energies": {
            "E": records[-1].E if records else 0.0,
            "E1": records[-1].E1 if records else 0.0,
            "E2": records[-1].E2 if records else 0.0,
            "X": records[-1].X if records else 0.0,
        },
        "initial_energy": e0,
        "max_identity_violation": result.max_identity_violation,
        "decay_fit": fit,
        "compatibility_residuals": result.compatibility,
        "initial_pressure_norm": result.initial_pressure_norm,
        "escape_certificate": cert.to_dict(),
        "checks": checks,
    }


def cmd_run(args):
    try:
        cfg = parse_config(args.config)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    t0 = time.perf_counter()
    result = run_simulation(cfg)
    wall = time.perf_counter() - t0

    write_energies_csv(result.records, out / "energies.csv")
    payload = _summary_payload(result)
    with open(out / "summary.json", "w", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(out / "summary.txt", "w", newline="\n") as fh:
        fh.write(f"status: {result.status} ({result.message})\n")
        fh.write(f"config hash: {payload['config_hash']}\n")
        fh.write(f"steps completed: {result.steps_completed}\n")
        fh.write(f"initial energy: {_fmt(payload['initial_energy'])}\n")
        fh.write(f"final energy: {_fmt(payload['final_energies']['E'])}\n")
        fh.write(
            f"max identity violation: {_fmt(result.max_identity_violation)}\n"
        )
        if payload["decay_fit"]:
            f = payload["decay_fit"]
            fh.write(
                f"decay fit: rate={_fmt(f['rate'])} r2={_fmt(f['r_squared'])} "
                f"window=[{f['window'][0]:g}, {f['window'][1]:g}]\n"
            )
        for k, v in sorted(result.compatibility.items()):
            fh.write(f"compatibility {k}: {_fmt(v)}\n")
        for k, v in sorted(payload["checks"].items()):
            fh.write(f"check {k}: {'pass' if v else 'FAIL'}\n")
        fh.write(f"wall time [s]: {wall:.3f}\n")

    if args.dump_mesh:
        mesh = build_disc_annulus(cfg.geometry.r0, cfg.geometry.r1, cfg.geometry.h)
        write_mesh_text(mesh, out / "mesh.txt")

    return {0: EXIT_OK, 2: EXIT_MAP_DEGENERATE, 3: EXIT_SOLVER_FAILURE, 5: EXIT_COUPLING}[
        result.status
    ]


def cmd_check_escape(args):
    try:
        cfg = parse_config(args.config)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    metric = cfg.metric_field()
    field = cfg.escape_field()
    interior = disc_interior_grid(cfg.geometry.r0, cfg.escape.grid_n)
    boundary = circle_boundary_samples(cfg.geometry.r0, cfg.escape.boundary_n)
    cert = certify_escape(
        metric,
        field,
        interior,
        boundary,
        rho0_threshold=cfg.escape.rho0_threshold,
        gamma0_threshold=cfg.escape.gamma0_threshold,
    )
    sys.stdout.write(cert.to_text())
    return EXIT_OK if cert.verdict == "certified" else EXIT_REFUTED


def cmd_verify_identities(args):
    try:
        cfg = parse_config(args.config)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    report = run_identity_suite(cfg.metric_field(), cfg.escape_field())
    print("exact-path residuals (max |lhs - rhs|):")
    for which, label, max_abs in report["exact"]:
        print(f"  [{which}] {label}: {max_abs:.3e}")
    print("finite-difference path convergence:")
    for name, errs, order in report["fd_orders"]:
        steps = " ".join(f"{e:.3e}" for e in errs)
        print(f"  [{name}] residuals {steps}  observed order {order:.2f}")
    print(f"result: {'pass' if report['passed'] else 'FAIL'}")
    return EXIT_OK if report["passed"] else 1


def cmd_mms(args):
    report = run_mms_suite(levels=args.levels)
    w = report["wave"]
    print("wave solver L2 convergence:")
    for h, e in zip(w["hs"], w["errors"]):
        print(f"  h={h:g}  error={e:.4e}")
    print(f"  observed orders: {['%.2f' % o for o in w['orders']]} (need >= 2.7)")
    s = report["stokes"]
    print("stokes solver L2 convergence:")
    for h, ev, ep in zip(s["hs"], s["v_errors"], s["p_errors"]):
        print(f"  h={h:g}  v_error={ev:.4e}  p_error={ep:.4e}")
    print(f"  velocity orders: {['%.2f' % o for o in s['v_orders']]} (need >= 2.7)")
    print(f"  pressure orders: {['%.2f' % o for o in s['p_orders']]} (need >= 1.8)")
    t = report["temporal"]
    print("coupled scheme temporal self-convergence:")
    for k in range(len(t["errors"])):
        print(f"  dt pair ({t['dts'][k]:g}, {t['dts'][k+1]:g})  error={t['errors'][k]:.4e}")
    print(f"  observed orders: {['%.2f' % o for o in t['orders']]} (need >= 1.8)")
    print(f"result: {'pass' if report['passed'] else 'FAIL'}")
    return EXIT_OK if report["passed"] else 1


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="fsi",
        description="Numerical laboratory for a boundary-dissipative "
        "fluid-structure interaction system.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a coupled simulation")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", required=True)
    p_run.add_argument("--dump-mesh", action="store_true")
    p_run.set_defaults(func=cmd_run)

    p_esc = sub.add_parser("check-escape", help="certify the escape vector field")
    p_esc.add_argument("--config", required=True)
    p_esc.set_defaults(func=cmd_check_escape)

    p_id = sub.add_parser("verify-identities", help="verify the multiplier identities")
    p_id.add_argument("--config", required=True)
    p_id.set_defaults(func=cmd_verify_identities)

    p_mms = sub.add_parser("mms", help="manufactured-solution convergence")
    p_mms.add_argument("--levels", type=int, default=3)
    p_mms.set_defaults(func=cmd_mms)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
