"""Command line entry point: ``poincare-stability <command> [options]``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness
from .errors import InvariantViolation, StabilityError
from .measure import build_measure, verify_g_minorization, verify_tail_bounds
from .models import check_assumptions
from .perturb import DIRECTION_NAMES, named_direction
from .spectral import spectral_gap
from .stein import check_elliptic_bounds, check_lipschitz_bound, check_sup_bounds, compute_ch, solve_stein, target_family

log = logging.getLogger("poincare_stability")


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", help="catalog id (default: gaussian or the config value)")
    common.add_argument("--grid-size", type=int, help="number of quadrature panels (default 4096)")
    common.add_argument("--eps-steps", type=int, help="eps values per direction (default 8)")
    common.add_argument("--out-dir", help="directory for output files")
    common.add_argument("--config", help="TOML configuration file")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="poincare-stability", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("model", parents=[common], help="print the model and its assumption report")
    sub.add_parser("measure", parents=[common], help="build the quotient measure and dump it as CSV")
    st = sub.add_parser("stein", parents=[common], help="solve the Stein equation for one target")
    st.add_argument("--target", default="tanh", help="target name from the built-in family")
    sub.add_parser("ch", parents=[common], help="compute C_h and write its objective profile")
    gp = sub.add_parser("gap", parents=[common], help="spectral gap of the model or a dumped density")
    gp.add_argument("--density", help="CSV written by 'measure' (columns x, ..., density)")
    vf = sub.add_parser("verify", parents=[common], help="evaluate every bound for one (direction, eps)")
    vf.add_argument("--direction", default="cubic", help=f"one of {', '.join(DIRECTION_NAMES)} (or relaxed:<name>)")
    vf.add_argument("--eps", type=float, help="perturbation size (default: half of eps_max)")
    sw = sub.add_parser("sweep", parents=[common], help="full direction x eps ladder with reports")
    sw.add_argument("--workers", type=int, default=1, help="process pool size")
    return p


def _config(args):
    return harness.load_config(args.config, model=args.model, grid_size=args.grid_size,
                               eps_steps=args.eps_steps, out_dir=args.out_dir)


def _measure(cfg):
    spec = harness.resolve_model(cfg["model"])
    return build_measure(spec, int(cfg["grid_size"]), v_threshold=cfg["tolerances"]["v_threshold"])


def _out(cfg):
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _show(obj):
    print(json.dumps(harness._clean(obj), indent=2, sort_keys=True))


def cmd_model(cfg, args):
    spec = harness.resolve_model(cfg["model"])
    rep = check_assumptions(spec)
    _show({"name": spec.name, "interval": [spec.a, spec.b], "lambda_mu": spec.lambda_mu,
           "c_p": 1.0 / spec.lambda_mu, "params": spec.params,
           "positivity_ok": rep.positivity_ok, "ellipticity_kappa": rep.ellipticity_kappa,
           "growth_ok": [rep.growth_ok_at_a, rep.growth_ok_at_b], "details": rep.details})
    return 0


def cmd_measure(cfg, args):
    m = _measure(cfg)
    path = _out(cfg) / f"measure_{harness.model_id(cfg['model'])}.csv"
    m.to_csv(path)
    tails = verify_tail_bounds(m, raise_on_violation=False)
    minor = verify_g_minorization(m, raise_on_violation=False)
    _show({"file": str(path), "Z": m.Z, "moments": list(m.moments), "lambda_mu": m.spec.lambda_mu,
           "truncation": list(m.grid.truncation), "closed_form_deviation": m.closed_form_deviation,
           "tail_violations": tails.violations, "minorization_violations": minor.violations})
    return int(bool(tails.violations or minor.violations))


def cmd_stein(cfg, args):
    m = _measure(cfg)
    targets = {t.name: t for t in target_family()}
    if args.target not in targets:
        print(f"unknown target {args.target!r}; choose from {sorted(targets)}", file=sys.stderr)
        return 2
    t = targets[args.target]
    sol = solve_stein(m, t)
    if t.kind == "bounded":
        checks = check_sup_bounds(sol, raise_on_violation=False)
        kappa = check_assumptions(m.spec, m.grid).ellipticity_kappa
        if kappa:
            checks += check_elliptic_bounds(sol, kappa, raise_on_violation=False)
    else:
        checks = check_lipschitz_bound(sol, compute_ch(m, check_finite=False), raise_on_violation=False)
    _show({"target": t.name, "kind": t.kind, "mu_f": sol.mu_f, "residual_max": sol.residual_max,
           "representation_gap": sol.representation_gap,
           "bounds": {c.name: {"lhs": c.lhs, "rhs": c.rhs, "violations": c.violations} for c in checks}})
    return int(any(c.violations for c in checks))


def cmd_ch(cfg, args):
    m = _measure(cfg)
    ch = compute_ch(m)
    path = _out(cfg) / f"ch_{harness.model_id(cfg['model'])}.csv"
    ch.to_csv(path)
    _show({"C_h": ch.C_h, "argmax": ch.argmax, "finite": ch.finite, "extension_sups": list(ch.extension_sups),
           "file": str(path)})
    return 0


def _read_density(path, m):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    x = np.array([float(r["x"]) for r in rows])
    rho = np.array([float(r["density"]) for r in rows])
    if x.shape != m.x.shape or not np.allclose(x, m.x, rtol=1e-12, atol=1e-300):
        raise StabilityError("density file was written on a different grid; rerun with the same --grid-size")
    return rho


def cmd_gap(cfg, args):
    m = _measure(cfg)
    if args.density:
        res = spectral_gap(_read_density(args.density, m), m.spec, m.grid)
    else:
        res = spectral_gap(m, m.spec)
    _show({"lambda1": res.lambda1, "lambda1_extrapolated": res.lambda1_extrapolated, "c_p_sharp": res.c_p_sharp,
           "grid_convergence": list(res.grid_convergence), "correlation_with_identity": res.correlation_with_identity})
    return 0


def cmd_verify(cfg, args):
    ctx = harness.prepare_base(cfg)
    d = named_direction(ctx.measure, args.direction)
    eps = 0.5 * d.eps_max if args.eps is None else args.eps
    rep = harness.evaluate(ctx, d, eps, cfg)
    print(harness.summary_table([rep], ctx), end="")
    if args.out_dir:
        harness.emit_outputs([rep], args.out_dir, cfg, ctx)
    return 0 if rep.ok else 1


def cmd_sweep(cfg, args):
    ctx = harness.prepare_base(cfg)
    reports = harness.run_sweep(cfg, ctx=ctx, workers=args.workers)
    out = harness.emit_outputs(reports, cfg["out_dir"], cfg, ctx)
    print(harness.summary_table(reports, ctx), end="")
    print(f"outputs written to {out}")
    return 0 if all(r.ok for r in reports) else 1


COMMANDS = {"model": cmd_model, "measure": cmd_measure, "stein": cmd_stein, "ch": cmd_ch,
            "gap": cmd_gap, "verify": cmd_verify, "sweep": cmd_sweep}


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _config(args)
        return COMMANDS[args.command](cfg, args)
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return 1
    except (StabilityError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
