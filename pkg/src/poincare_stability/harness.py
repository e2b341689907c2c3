"""Perturbation sweeps that evaluate the stability inequalities numerically.

A sweep builds the base quotient measure, perturbs it along named
directions over an eps ladder and, for every perturbed measure, compares
the W1, TV and Kolmogorov distances with the bounds driven by the gap
deficit ``delta``.  Each bound is recorded with its value, the measured
quantity, their ratio and an applicability flag.
"""

from __future__ import annotations

import copy
import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .distances import DistanceTriple, check_kw_comparison, distance_triple, dual_w1_check
from .errors import InvalidParameter, InvariantViolation
from .measure import build_measure
from .models import build_model, catalog, check_assumptions
from .perturb import DIRECTION_NAMES, ipp_test_functions, make_perturbed, named_direction, verify_approx_ipp
from .stein import compute_ch

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
RATIO_SLACK = 1e-6
UTEV_CONSTANT = 16.0 * (1.0 + math.sqrt(2.0))
UTEV_SHARP = 9.0

DEFAULT_CONFIG = {
    "model": "gaussian",
    "directions": list(DIRECTION_NAMES),
    "eps_steps": 8,
    "eps_span": 0.5,  # ladder top as a fraction of eps_max
    "grid_size": 4096,
    "levels": 3,
    "dual_seed": 20240607,
    "dual_functions": 20,
    "out_dir": "out",
    "tolerances": {
        "ratio_slack": RATIO_SLACK,
        "constraint": 1e-9,
        "ipp_slack": 1e-8,
        "v_threshold": 1e-30,
        "spectral_rtol": 1e-13,
        "quadratic_fit": 0.10,
    },
}

PROVENANCE = {
    "c_p_nu": "sharp quotient Poincare constant of nu* (P1 finite elements, Richardson extrapolated)",
    "delta": "lambda_mu - lambda_1(nu*), quotient-level instantiation",
    "density_sup": "max of the mu* density on the grid (infinite when a finite end has a negative exponent)",
    "directions": "finite-dimensional slice rho (1 + eps p) of the admissible class",
}

THEOREMS = ("w1_stein", "tv_elliptic", "kolmogorov_density", "kolmogorov_elliptic", "approx_ipp")


def load_config(path=None, **overrides):
    """Merge a TOML file and keyword overrides into the defaults."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        import tomli

        with open(path, "rb") as fh:
            data = tomli.load(fh)
        tol = data.pop("tolerances", {})
        cfg.update(data)
        cfg["tolerances"].update(tol)
    for key, value in overrides.items():
        if value is not None:
            cfg[key] = value
    if int(cfg["eps_steps"]) < 1:
        raise InvalidParameter("eps_steps must be at least 1")
    if not 0 < float(cfg["eps_span"]) <= 1:
        raise InvalidParameter("eps_span must lie in (0, 1]")
    return cfg


def resolve_model(model):
    """A catalog id or a mapping with a ``family`` key."""
    if isinstance(model, dict):
        return build_model(model)
    models = catalog()
    if model not in models:
        raise InvalidParameter(f"unknown model {model!r}; catalog ids: {sorted(models)}")
    return models[model]


def model_id(model):
    if isinstance(model, dict):
        return "_".join(f"{k}={model[k]}" for k in sorted(model))
    return str(model)


@dataclass
class BoundRecord:
    theorem: str
    bound: float
    actual: float
    ratio: float
    applicable: bool
    note: str = ""

    @property
    def holds(self):
        return (not self.applicable) or self.ratio <= 1.0 + RATIO_SLACK


def _ratio(actual, bound):
    if bound > 0:
        return actual / bound
    return 0.0 if actual <= 1e-12 else math.inf  # 0/0 counts as a pass


def _record(theorem, bound, actual, applicable, note=""):
    if not applicable:
        return BoundRecord(theorem, math.nan, float(actual), math.nan, False, note)
    return BoundRecord(theorem, float(bound), float(actual), _ratio(actual, bound), True, note)


@dataclass
class StabilityReport:
    model: str
    direction: str
    eps: float
    delta: float
    c_p_mu: float
    c_p_nu: float
    distances: DistanceTriple
    bounds: list
    ipp: list = field(default_factory=list)
    dual_w1_gap: float = 0.0
    runtime: float = 0.0  # kept out of the machine-readable report

    def bound(self, theorem):
        return next(b for b in self.bounds if b.theorem == theorem)

    @property
    def ok(self):
        return all(b.holds for b in self.bounds)

    def to_dict(self):
        return {
            "model": self.model,
            "direction": self.direction,
            "eps": self.eps,
            "delta": self.delta,
            "c_p_mu": self.c_p_mu,
            "c_p_nu": self.c_p_nu,
            "distances": asdict(self.distances),
            "bounds": {b.theorem: {"bound": b.bound, "actual": b.actual, "ratio": b.ratio,
                                   "applicable": b.applicable, "note": b.note} for b in self.bounds},
            "ipp": self.ipp,
            "dual_w1_gap": self.dual_w1_gap,
        }


@dataclass
class BaseContext:
    """Everything about the base model that the sweep reuses."""

    name: str
    spec: object
    measure: object
    kappa: object
    ch: object
    density_sup: float

    @property
    def ch_finite(self):
        return self.ch.finite is not False and math.isfinite(self.ch.C_h)


def prepare_base(cfg):
    spec = resolve_model(cfg["model"])
    m = build_measure(spec, int(cfg["grid_size"]), v_threshold=cfg["tolerances"]["v_threshold"])
    assumptions = check_assumptions(spec, m.grid)
    ch = compute_ch(m)
    return BaseContext(model_id(cfg["model"]), spec, m, assumptions.ellipticity_kappa, ch, m.density_sup())


def eps_ladder(direction, steps, span=1.0):
    """``span * eps_max * k / steps`` for ``k = 1..steps``."""
    top = direction.eps_max * span
    return [top * k / steps for k in range(1, steps + 1)]


def evaluate(ctx: BaseContext, direction, eps, cfg):
    """One StabilityReport for the measure ``rho (1 + eps p)``."""
    t0 = time.perf_counter()
    tol = cfg["tolerances"]
    m = ctx.measure
    nu = make_perturbed(m, direction, eps, levels=int(cfg["levels"]))
    dist = distance_triple(m, nu)
    delta = max(nu.delta, 0.0)
    cp_nu = nu.c_p_sharp
    s = math.sqrt(delta) + math.sqrt(cp_nu) * delta

    bounds = []
    ch_ok = ctx.ch_finite
    bounds.append(_record("w1_stein", ctx.ch.C_h * s, dist.w1, ch_ok, "" if ch_ok else "C_h not finite"))
    kappa = ctx.kappa
    ell = kappa is not None
    tv_bound = 4.0 / math.sqrt(kappa) * s if ell else math.nan
    bounds.append(_record("tv_elliptic", tv_bound, dist.tv, ell, "" if ell else "no ellipticity constant"))
    dens_ok = math.isfinite(ctx.density_sup)
    k_ok = ch_ok and dens_ok
    note = "" if k_ok else ("unbounded density" if not dens_ok else "C_h not finite")
    k_bound = 2.0 * math.sqrt(ctx.density_sup * ctx.ch.C_h) * math.sqrt(s) if k_ok else math.nan
    bounds.append(_record("kolmogorov_density", k_bound, dist.kolmogorov, k_ok, note))
    bounds.append(_record("kolmogorov_elliptic", tv_bound, dist.kolmogorov, ell, "" if ell else "no ellipticity constant"))
    if dens_ok:
        check_kw_comparison(m, nu, ctx.density_sup, kolmogorov_value=dist.kolmogorov, w1_value=dist.w1)

    ipp = []
    worst = (0.0, 0.0, 0.0)
    for name, psi, dpsi in ipp_test_functions():
        rep = verify_approx_ipp(nu, psi, dpsi, name=name, slack=tol["ipp_slack"], raise_on_violation=False)
        r_nu, r_mu = rep.ratios
        ipp.append({"psi": name, "lhs": rep.lhs_mu, "rhs": rep.rhs_mu, "ratio": r_mu,
                    "lhs_nu": rep.lhs_nu, "rhs_nu": rep.rhs_nu, "ratio_nu": r_nu,
                    "violations": rep.violations})
        worst = max(worst, (max(r_mu, r_nu), rep.rhs_mu, rep.lhs_mu))
    ipp_rec = _record("approx_ipp", worst[1], worst[2], True, "worst of 8 test functions")
    ipp_rec.ratio = worst[0]
    bounds.append(ipp_rec)

    best, _ = dual_w1_check(nu, m, n_functions=int(cfg["dual_functions"]), seed=int(cfg["dual_seed"]))
    return StabilityReport(ctx.name, direction.label, float(eps), float(nu.delta), m.c_p, cp_nu, dist, bounds,
                           ipp, best - dist.w1, time.perf_counter() - t0)


_WORKER = {}


def _init_worker(cfg):
    # models hold closures, so each worker rebuilds the (deterministic) base context
    _WORKER["cfg"] = cfg
    _WORKER["ctx"] = prepare_base(cfg)


def _task(job):
    label, eps = job
    ctx, cfg = _WORKER["ctx"], _WORKER["cfg"]
    return evaluate(ctx, named_direction(ctx.measure, label), eps, cfg)


def run_sweep(cfg, *, ctx=None, workers=1):
    """Reports for every (direction, eps) pair, sorted by direction then eps."""
    ctx = ctx or prepare_base(cfg)
    steps = int(cfg["eps_steps"])
    jobs = []
    directions = {}
    for label in cfg["directions"]:
        d = named_direction(ctx.measure, label)
        directions[label] = d
        jobs.extend((label, eps) for eps in eps_ladder(d, steps, float(cfg["eps_span"])))
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(cfg,)) as pool:
            reports = list(pool.map(_task, jobs))
    else:
        reports = [evaluate(ctx, directions[lab], eps, cfg) for lab, eps in jobs]
    reports.sort(key=lambda r: (r.direction, r.eps))
    return reports


# -- derived checks ------------------------------------------------------------


@dataclass
class UtevReport:
    checked: int
    violations: int
    sharp_holds: int  # reports where 1 + tv^2/9 also holds (informational)
    worst_margin: float  # min of C_P(nu) - 1 - tv^2/(16 (1 + sqrt 2))
    rows: list


def check_utev_gaussian(reports, *, c_p_mu=1.0, tol=1e-9, raise_on_violation=True):
    """``C_P(nu) >= C_P(mu) + d_TV^2/(16(1+sqrt 2))`` whenever ``C_P(nu) - C_P(mu) <= 1``."""
    rows, bad, sharp, worst = [], 0, 0, math.inf
    for r in reports:
        if r.c_p_nu - c_p_mu > 1.0:
            continue
        tv = r.distances.tv
        margin = r.c_p_nu - c_p_mu - tv ** 2 / UTEV_CONSTANT
        sharp_ok = r.c_p_nu >= c_p_mu + tv ** 2 / UTEV_SHARP - tol
        rows.append({"direction": r.direction, "eps": r.eps, "c_p_nu": r.c_p_nu, "tv": tv,
                     "margin": margin, "sharp_form_holds": bool(sharp_ok)})
        bad += margin < -tol
        sharp += sharp_ok
        worst = min(worst, margin)
    rep = UtevReport(len(rows), bad, sharp, worst, rows)
    if bad and raise_on_violation:
        raise InvariantViolation(f"Utev-type inequality fails for {bad} perturbations", rep)
    return rep


@dataclass
class AsymptoticsReport:
    direction: str
    eps: list
    delta: list
    w1: list
    fit_coeffs: tuple  # delta ~ c0 + c1 eps + c2 eps^2
    fit_residual: float  # ||delta - fit|| / ||delta||
    eps2_coeff: float  # least-squares c in delta ~ c eps^2
    vanishing: bool
    max_w1_ratio: float

    @property
    def ok(self):
        return self.vanishing and self.fit_residual < DEFAULT_CONFIG["tolerances"]["quadratic_fit"] \
            and self.max_w1_ratio <= 1.0 + RATIO_SLACK


def asymptotics(reports):
    """Per-direction quadratic fit of delta in eps and the decay of W1 and delta."""
    out = []
    for label in sorted({r.direction for r in reports}):
        rows = sorted((r for r in reports if r.direction == label), key=lambda r: r.eps)
        eps = np.array([r.eps for r in rows])
        delta = np.array([r.delta for r in rows])
        w1 = np.array([r.distances.w1 for r in rows])
        coeffs = np.polyfit(eps, delta, 2)[::-1] if len(eps) >= 3 else np.array([math.nan] * 3)
        fit = np.polyval(coeffs[::-1], eps)
        norm = np.linalg.norm(delta)
        resid = float(np.linalg.norm(delta - fit) / norm) if norm > 0 else 0.0
        c2 = float(np.dot(eps ** 2, delta) / np.dot(eps ** 2, eps ** 2))
        # both quantities shrink toward eps -> 0: monotone along the ladder and
        # the smallest value at most twice what linear (W1) or quadratic (delta) decay gives
        shrink = eps[0] / eps[-1]
        vanishing = bool(np.all(np.diff(w1) > 0) and np.all(np.diff(delta) > 0)
                         and w1[0] <= 2 * shrink * w1[-1] and delta[0] <= 2 * shrink ** 2 * delta[-1])
        ratio = max(r.bound("w1_stein").ratio if r.bound("w1_stein").applicable else 0.0 for r in rows)
        out.append(AsymptoticsReport(label, eps.tolist(), delta.tolist(), w1.tolist(), tuple(map(float, coeffs)),
                                     resid, c2, vanishing, ratio))
    return out


# -- outputs -----------------------------------------------------------------


def _clean(obj):
    """JSON-safe copy: non-finite floats become strings."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else repr(obj)
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return _clean(obj.item())
    return obj


def report_document(reports, cfg, ctx=None):
    doc = {
        "schema_version": SCHEMA_VERSION,
        "package_version": __version__,
        "config": {k: v for k, v in cfg.items() if k != "out_dir"},
        "provenance": PROVENANCE,
        "records": [r.to_dict() for r in reports],
    }
    if ctx is not None:
        doc["base"] = {
            "model": ctx.name,
            "lambda_mu": ctx.spec.lambda_mu,
            "c_p_mu": ctx.measure.c_p,
            "kappa": ctx.kappa,
            "c_h": ctx.ch.C_h,
            "c_h_finite": ctx.ch.finite,
            "density_sup": ctx.density_sup,
        }
    return _clean(doc)


def write_report(reports, cfg, path, ctx=None):
    text = json.dumps(report_document(reports, cfg, ctx), sort_keys=True, indent=1)
    Path(path).write_text(text + "\n")
    return text


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def summary_table(reports, ctx=None):
    head = f"{'direction':<22}{'eps':>10}{'delta':>12}{'W1':>11}{'TV':>11}{'K':>11}"
    head += "".join(f"{t:>10}" for t in THEOREMS)
    lines = []
    if ctx is not None:
        lines.append(f"model {ctx.name}: C_P = {ctx.measure.c_p:.6g}, C_h = {ctx.ch.C_h:.6g}, "
                     f"kappa = {ctx.kappa}, density sup = {ctx.density_sup:.6g}")
    lines.append(head)
    for r in reports:
        d = r.distances
        row = f"{r.direction:<22}{r.eps:>10.4g}{r.delta:>12.4e}{d.w1:>11.4e}{d.tv:>11.4e}{d.kolmogorov:>11.4e}"
        for t in THEOREMS:
            b = r.bound(t)
            row += f"{b.ratio:>10.4f}" if b.applicable else f"{'n/a':>10}"
        lines.append(row)
    ok = sum(r.ok for r in reports)
    lines.append(f"{ok}/{len(reports)} reports satisfy every applicable bound (ratio <= 1 + {RATIO_SLACK:g})")
    return "\n".join(lines) + "\n"


def emit_outputs(reports, out_dir, cfg, ctx=None):
    """Write the JSON report, plot data and a summary table into ``out_dir``."""
    if not reports:
        raise InvalidParameter("no reports to write")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        write_report(reports, cfg, out / "report.json", ctx)
        for t in THEOREMS:
            rows = [(r.direction, repr(r.eps), repr(r.bound(t).actual), repr(r.bound(t).bound),
                     repr(r.bound(t).ratio), int(r.bound(t).applicable)) for r in reports]
            _write_rows(out / f"bound_{t}.csv", ["direction", "eps", "actual", "bound", "ratio", "applicable"], rows)
        if ctx is not None:
            ch = ctx.ch
            _write_rows(out / "ch_profile.csv", ["x", "objective"],
                        [(repr(float(a)), repr(float(b))) for a, b in zip(ch.x, ch.objective)])
            _write_eigenfunctions(out / "eigenfunctions.csv", ctx, reports, cfg)
        (out / "summary.txt").write_text(summary_table(reports, ctx))
        runtime = {f"{r.direction}@{r.eps!r}": r.runtime for r in reports}
        (out / "runtime.json").write_text(json.dumps(runtime, sort_keys=True, indent=1) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write outputs to {out}: {exc}") from exc
    return out


def _write_eigenfunctions(path, ctx, reports, cfg):
    from .spectral import spectral_gap

    m = ctx.measure
    cols = {"mu": spectral_gap(m, m.spec, levels=int(cfg["levels"])).eigenfunction}
    # one curve per direction, at the largest eps of the ladder
    for label in cfg["directions"]:
        rows = [r for r in reports if r.direction == label]
        if not rows:
            continue
        top = max(rows, key=lambda r: r.eps)
        nu = make_perturbed(m, named_direction(m, label), top.eps, levels=int(cfg["levels"]))
        cols[f"{label}@{top.eps:.6g}"] = nu.spectral.eigenfunction
    keep = m.reliable
    names = list(cols)
    rows = [[repr(float(m.x[i]))] + [repr(float(cols[n][i])) for n in names] for i in np.flatnonzero(keep)]
    _write_rows(path, ["x"] + names, rows)
