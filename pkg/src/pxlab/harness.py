"""Case generation, suite orchestration and refinement studies."""

import csv
import json
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .comparison import (ThresholdError, compute_thresholds, make_config as make_cascade_config,
                         run_boundary_cascade, run_interior_cascade)
from .fieldio import save_json
from .funcspace import (GridFunction, check_log_holder, constant_exponent,
                        log_holder_exponent)
from .geometry import certify_reifenberg, make_rect_domain, make_sawtooth_domain
from .goodlambda import (assemble_corollaries, assemble_main_estimate, level_sets,
                         make_config as make_gl_config, maximal_fields, work_region)
from .maximal import RadonMeasure, frac_maximal_1
from .pde import NonlinearityModel, solve_dirichlet, verify_structure
from .weights import constant_weight, fit_ainfty_constants, power_weight

PROFILES = ("smoke", "interior", "boundary", "corollaries")
WORKERS_ENV = "PXLAB_WORKERS"
MAX_DELTA = 0.25


class CaseValidationError(ValueError):
    """A case failed a validator before any solve."""


@dataclass
class CaseSpec:
    """Self-describing experiment input (JSON friendly)."""

    name: str
    domain: dict
    exponent: dict
    weight: dict
    measure: dict
    q: dict
    h: float
    seed: int
    s: float = 0.5
    coeff: dict = field(default_factory=lambda: {"kind": "constant", "value": 1.0})
    cascade: dict = None
    corollary: dict = field(default_factory=dict)
    profile: str = "custom"
    tol: float = 1e-8

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def with_h(self, h):
        return replace(self, h=float(h))

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


# ---------------------------------------------------------------- builders

def build_mask(spec):
    d = spec.domain
    ext = d.get("extent", [[0.0, 1.0], [0.0, 1.0]])
    if d["kind"] == "rect":
        return make_rect_domain(ext, spec.h)
    if d["kind"] == "sawtooth":
        return make_sawtooth_domain(ext, spec.h, d["amplitude"], d["period"])
    raise ValueError(f"unknown domain kind {d['kind']!r}")


def build_exponent(mask, d):
    if d["kind"] == "constant":
        return constant_exponent(mask, d["value"])
    if d["kind"] == "log-holder":
        return log_holder_exponent(mask, d["base"], d["c"], np.asarray(d["x0"], dtype=float))
    raise ValueError(f"unknown exponent kind {d['kind']!r}")


def build_coeff(mask, d):
    if d["kind"] == "constant":
        return np.full(mask.grid.shape, float(d.get("value", 1.0)))
    if d["kind"] == "sine":
        X, Y = mask.grid.mesh()[:2]
        k = d.get("freq", [7.0, 3.0])
        return 1.0 + d["amp"] * np.sin(k[0] * X + k[1] * Y)
    raise ValueError(f"unknown coefficient kind {d['kind']!r}")


def build_weight(mask, d):
    if d["kind"] == "constant":
        return constant_weight(mask.grid, d.get("value", 1.0))
    if d["kind"] == "power":
        return power_weight(d["alpha"], d["center"], mask.grid)
    raise ValueError(f"unknown weight kind {d['kind']!r}")


def build_measure(mask, d):
    """Atoms ``[[x, y, m], ...]`` plus an optional density."""
    atoms = np.asarray(d.get("atoms", []), dtype=float).reshape(-1, mask.n + 1)
    dens = None
    dd = d.get("density")
    if dd:
        xs = mask.grid.mesh()
        if dd["kind"] == "constant":
            vals = np.full(mask.grid.shape, float(dd["value"]))
        elif dd["kind"] == "bump":
            c = np.asarray(dd["center"], dtype=float)
            r2 = sum((xs[a] - c[a]) ** 2 for a in range(mask.n))
            vals = np.exp(-r2 / (2 * dd["width"] ** 2))
            vals *= dd["mass"] / (vals[mask.inside].sum() * mask.grid.cell_volume)
        else:
            raise ValueError(f"unknown density kind {dd['kind']!r}")
        dens = GridFunction(np.where(mask.inside, vals, 0.0), mask)
    return RadonMeasure(atoms[:, :mask.n], atoms[:, mask.n], dens)


@dataclass(eq=False)
class Case:
    spec: CaseSpec
    mask: object
    model: NonlinearityModel
    q: object
    w: object
    mu: RadonMeasure
    checks: dict


def build_case(spec, validate=True):
    """Build every field of a case; validators run before returning."""
    mask = build_mask(spec)
    p = build_exponent(mask, spec.exponent)
    q = build_exponent(mask, spec.q)
    model = NonlinearityModel(p, spec.s, build_coeff(mask, spec.coeff))
    w = build_weight(mask, spec.weight)
    mu = build_measure(mask, spec.measure)
    checks = validate_case(mask, model, q) if validate else {}
    if checks:
        model = model.with_constants(checks["Lambda1"], checks["Lambda2"])
    return Case(spec, mask, model, q, w, mu, checks)


def validate_case(mask, model, q):
    """Log-Hoelder checks for p and q, flatness certificate, structure scan."""
    out = {}
    try:
        out["p_log_holder"] = check_log_holder(model.p).bound
        out["q_log_holder"] = check_log_holder(q).bound
    except ValueError as exc:
        raise CaseValidationError(f"log-Hoelder check failed: {exc}") from exc
    model.p.check_p_bounds()
    if mask.label != "rect":
        R0 = min(0.25, mask.diameter / 2)
        cert = certify_reifenberg(mask, R0, n_dirs=360, n_radii=1)
        out["delta"] = cert.delta
        if cert.delta > MAX_DELTA:
            raise CaseValidationError(f"flatness delta {cert.delta:.3g} above {MAX_DELTA}")
    else:
        out["delta"] = 0.0
    rep = verify_structure(model, n_xi=40, n_eta=40)
    if not rep.monotonicity_ok:
        raise CaseValidationError("monotonicity scan failed")
    out["Lambda1"], out["Lambda2"] = rep.Lambda1_fit, rep.Lambda2_fit
    return out


# ---------------------------------------------------------------- presets

def _unit(rng, lo, hi):
    return float(rng.uniform(lo, hi))


def _atoms(rng, k, lo=0.15, hi=0.85, mmin=0.2, mmax=1.0):
    return [[_unit(rng, lo, hi), _unit(rng, lo, hi), _unit(rng, mmin, mmax)] for _ in range(k)]


# sup of 1/log(e + 1/d) over distances d <= sqrt(2) within the unit square
_LH_PEAK = 1.0 / np.log(np.e + 1.0 / np.sqrt(2.0))


def _p_spec(rng, lo=1.9, hi=2.4):
    c = _unit(rng, 0.05, 0.4)
    base = _unit(rng, lo, hi - _LH_PEAK * c)
    return {"kind": "log-holder", "base": base, "c": c,
            "x0": [_unit(rng, 0.2, 0.8), _unit(rng, 0.2, 0.8)]}


def generate_suite(profile, count, seed=0, h=None):
    """Deterministic list of CaseSpec for a named preset."""
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}; choose from {PROFILES}")
    rng = np.random.default_rng([seed, PROFILES.index(profile)])
    cases = []
    for i in range(int(count)):
        name = f"{profile}-{seed}-{i:03d}"
        if profile == "smoke":
            spec = CaseSpec(
                name, {"kind": "rect"}, _p_spec(rng),
                {"kind": "power", "alpha": _unit(rng, -0.5, 1.0), "center": [0.5, 0.5]},
                {"atoms": _atoms(rng, int(rng.integers(1, 4)))},
                {"kind": "constant", "value": _unit(rng, 1.0, 3.0)},
                h or 1 / 32, seed, profile=profile,
            )
        elif profile == "interior":
            Rmax = 0.04
            margin = 2 * Rmax + 0.05
            x0 = [_unit(rng, margin, 1 - margin), _unit(rng, margin, 1 - margin)]
            k = int(rng.integers(0, 4))
            atoms = _atoms(rng, k)
            if k and rng.uniform() < 0.5:
                # one atom inside the comparison ball
                atoms[0][:2] = [x0[0] + _unit(rng, -Rmax, Rmax), x0[1] + _unit(rng, -Rmax, Rmax)]
            spec = CaseSpec(
                name, {"kind": "rect"}, _p_spec(rng),
                {"kind": "constant", "value": 1.0},
                {"atoms": atoms},
                {"kind": "constant", "value": 2.0},
                h or 1 / 64, seed, s=_unit(rng, 0.2, 1.0),
                coeff={"kind": "sine", "amp": _unit(rng, 0.0, 0.1),
                       "freq": [_unit(rng, 2, 8), _unit(rng, 2, 8)]},
                cascade={"center": x0, "R_max": Rmax, "boundary": False},
                profile=profile, tol=1e-10,
            )
        elif profile == "boundary":
            amp = _unit(rng, 0.0, 0.05)
            xb = _unit(rng, 0.3, 0.7)
            spec = CaseSpec(
                name, {"kind": "sawtooth", "amplitude": amp, "period": 0.25},
                _p_spec(rng), {"kind": "constant", "value": 1.0},
                {"atoms": _atoms(rng, int(rng.integers(1, 3)), 0.3, 0.7)},
                {"kind": "constant", "value": 2.0},
                h or 1 / 64, seed, s=_unit(rng, 0.2, 1.0),
                coeff={"kind": "sine", "amp": _unit(rng, 0.0, 0.1),
                       "freq": [_unit(rng, 2, 8), _unit(rng, 2, 8)]},
                cascade={"center": [xb, 0.0], "R_max": 0.04, "boundary": True},
                profile=profile, tol=1e-10,
            )
        else:
            p = _p_spec(rng, 1.9, 2.5)
            if rng.uniform() < 0.5:
                q = {"kind": "constant", "value": _unit(rng, 1.0, 3.0)}
            else:
                c = _unit(rng, 0.2, 0.8)
                q = {"kind": "log-holder", "base": _unit(rng, 1.0, 3.0 - _LH_PEAK * c), "c": c,
                     "x0": [_unit(rng, 0.2, 0.8), _unit(rng, 0.2, 0.8)]}
            if i % 5 == 4:
                meas = {"atoms": []}
            elif rng.uniform() < 0.5:
                meas = {"atoms": _atoms(rng, int(rng.integers(1, 4)))}
            else:
                meas = {"atoms": [], "density": {
                    "kind": "bump", "center": [_unit(rng, 0.3, 0.7), _unit(rng, 0.3, 0.7)],
                    "width": _unit(rng, 0.05, 0.2), "mass": _unit(rng, 0.2, 2.0)}}
            spec = CaseSpec(
                name, {"kind": "rect"}, p,
                {"kind": "power", "alpha": _unit(rng, -0.5, 1.0),
                 "center": [_unit(rng, 0.2, 0.8), _unit(rng, 0.2, 0.8)]},
                meas, q, h or 1 / 64, seed, s=_unit(rng, 0.2, 1.0),
                corollary={"lambda": 1.0}, profile=profile,
            )
        cases.append(spec)
    return cases


# ---------------------------------------------------------------- running

def _finite(x):
    return x is not None and bool(np.isfinite(x))


def run_case(spec, alphas=(1.0, 16.0), A0_scan=(2.0, 4.0, 8.0, 16.0), ainfty_seed=0):
    """Run one case; numerical failures become a row with status != "ok"."""
    t0 = time.perf_counter()
    row = {"name": spec.name, "profile": spec.profile, "seed": spec.seed, "h": spec.h,
           "status": "ok", "error": ""}
    try:
        case = build_case(spec)
    except (CaseValidationError, ValueError) as exc:
        row.update(status="invalid", error=str(exc))
        return row
    row.update({f"check_{k}": v for k, v in case.checks.items()})
    u = solve_dirichlet(case.model, case.mu, tol=spec.tol, max_iter=300)
    row.update(solve_iterations=u.iterations, solve_residual=u.residual,
               solve_converged=u.converged)
    if not u.converged:
        row["status"] = "not_converged"

    if spec.cascade:
        _cascade_rows(case, u, row)
    else:
        mask = case.mask
        m1 = frac_maximal_1(case.mu, mask.grid) if not case.mu.is_zero() else None
        main = assemble_main_estimate(u, case.mu, case.q, case.w, m1=m1)
        row["main_lhs"], row["main_rhs"], row["main_ratio"] = main.lhs, main.rhs, main.ratio
        dual = assemble_main_estimate(u, case.mu, case.q, case.w, m1=m1, dual=True)
        row["dual_ratio"] = dual.ratio
        for rep in assemble_corollaries(u, case.mu, case.q, case.w, m1=m1,
                                        lam=spec.corollary.get("lambda"),
                                        r=spec.corollary.get("r")):
            row[f"{rep.name}_ratio"] = rep.ratio
            row[f"{rep.name}_skip"] = rep.reason if rep.skipped else ""
        _goodlambda_rows(case, u, row, alphas, A0_scan, ainfty_seed)
    row["seconds"] = time.perf_counter() - t0
    return row


def _goodlambda_rows(case, u, row, alphas, A0_scan, ainfty_seed):
    try:
        ainfty = fit_ainfty_constants(case.w, seed=ainfty_seed)
    except ValueError as exc:
        row["goodlambda_error"] = str(exc)
        return
    region = work_region(case.mask)
    fields = maximal_fields(u, case.mu, case.model.p, case.q, region)
    row["kappa_w"], row["c_w"] = ainfty.kappa_w, ainfty.c_w
    incl = True
    worst_lc = 0.0
    for A0 in A0_scan:
        cfg = make_gl_config(u, case.mu, case.model.p, case.q, case.w, A0=A0,
                             ainfty=ainfty, fields=fields)
        for a in alphas:
            rep = level_sets(u, case.mu, case.q, case.w, replace(cfg, alpha=a), fields=fields)
            incl &= rep.inclusion_ok and rep.monotone_ok
            worst_lc = max(worst_lc, rep.layer_cake_error)
            row[f"B_A{A0:g}_alpha{a:g}"] = rep.B_fit
    row["goodlambda_inclusion"] = bool(incl)
    row["layer_cake_error"] = worst_lc


def _cascade_rows(case, u, row):
    spec = case.spec
    c = spec.cascade
    center = np.asarray(c["center"], dtype=float)
    mask = case.mask
    if c.get("boundary"):
        pts = mask.boundary_faces[0]
        center = pts[np.argmin(np.linalg.norm(pts - center, axis=1))]
    structure = verify_structure(case.model, n_xi=40, n_eta=40)
    th = compute_thresholds(case.model, u, c.get("R0", 0.5), structure=structure)
    R = min(c["R_max"], th.limit)
    try:
        cfg = make_cascade_config(case.model, u, center, R, R0=c.get("R0", 0.5),
                                  structure=structure)
    except (ThresholdError, ValueError) as exc:
        row.update(status="threshold", error=str(exc))
        return
    row["cascade_R"] = cfg.R
    row["cascade_limit"] = cfg.thresholds.limit
    try:
        if c.get("boundary"):
            res = run_boundary_cascade(case.model, case.mu, u, cfg)
        else:
            res = run_interior_cascade(case.model, case.mu, u, cfg)
    except (ThresholdError, ValueError) as exc:
        row.update(status="cascade_error", error=str(exc))
        return
    row["cascade_F"] = res.F_value
    row["cascade_converged"] = res.converged
    row.update({f"ratio_{k}": v for k, v in res.ratios.items()})
    row.update({f"flag_{k}": v for k, v in res.flags.items()})
    if not res.converged:
        row["status"] = "not_converged"


def environment_meta(workers):
    import scipy
    return {
        "pxlab": __version__, "python": platform.python_version(),
        "numpy": np.__version__, "scipy": scipy.__version__, "workers": workers,
        "omp_threads": os.environ.get("OMP_NUM_THREADS", ""),
        "platform": platform.platform(),
    }


@dataclass
class SuiteResult:
    rows: list
    aggregates: dict
    meta: dict

    def to_dict(self):
        return {"rows": self.rows, "aggregates": self.aggregates, "meta": self.meta}


def aggregate(rows):
    """Suite maxima of every numeric ratio column, over converged rows."""
    agg = {"n_cases": len(rows), "n_ok": sum(r.get("status") == "ok" for r in rows)}
    keys = sorted({k for r in rows for k in r
                   if k.endswith("_ratio") or k.startswith("ratio_") or k.startswith("B_")})
    for k in keys:
        vals = [r[k] for r in rows if r.get("status") == "ok" and _finite(r.get(k))]
        agg[f"max_{k}"] = float(max(vals)) if vals else None
    return agg


def run_suite(cases, out_dir=None, workers=None, **opts):
    """Run every case (record-and-continue) and optionally write CSV + JSON."""
    workers = int(os.environ.get(WORKERS_ENV, "1")) if workers is None else int(workers)
    if workers > 1 and len(cases) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(_run_safe, cases, [opts] * len(cases)))
    else:
        rows = [_run_safe(c, opts) for c in cases]
    res = SuiteResult(rows, aggregate(rows), environment_meta(workers))
    if out_dir is not None:
        write_suite(res, cases, out_dir)
    return res


def _run_safe(spec, opts):
    try:
        return run_case(spec, **opts)
    except Exception as exc:  # numerical failures are rows, not aborts
        return {"name": spec.name, "profile": spec.profile, "seed": spec.seed, "h": spec.h,
                "status": "error", "error": f"{type(exc).__name__}: {exc}"}


def write_suite(res, cases, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cols = sorted({k for r in res.rows for k in r})
    with open(out / "suite.csv", "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=cols)
        wr.writeheader()
        for r in res.rows:
            wr.writerow(r)
    for spec, r in zip(cases, res.rows):
        save_json(out / f"{spec.name}.json", {"case": spec.to_dict(), "row": r})
    save_json(out / "suite.json", {"aggregates": res.aggregates, "meta": res.meta})


def max_drift(values):
    """Largest relative change between consecutive finite entries."""
    v = [x for x in values if _finite(x)]
    if len(v) < 2:
        return None
    out = 0.0
    for a, b in zip(v[:-1], v[1:]):
        if a == b:
            continue
        out = max(out, abs(b - a) / max(abs(a), abs(b)))
    return out


def refinement_study(spec, h_list, **opts):
    """Rows of one case over decreasing h, with the max drift per column."""
    h_list = [float(h) for h in h_list]
    if len(h_list) < 3:
        raise ValueError("need at least three grid widths")
    if any(b >= a for a, b in zip(h_list[:-1], h_list[1:])):
        raise ValueError("h_list must be decreasing")
    rows = [run_case(spec.with_h(h), **opts) for h in h_list]
    keys = sorted({k for r in rows for k in r
                   if k.endswith("_ratio") or k.startswith("ratio_") or k.startswith("B_")})
    drift = {k: max_drift([r.get(k) for r in rows]) for k in keys}
    return {"h": h_list, "rows": rows, "drift": drift}

