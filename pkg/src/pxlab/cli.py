"""Command line entry point: ``pxlab <subcommand> ...``."""

import argparse
import json
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import harness
from .comparison import ThresholdError, make_config, run_boundary_cascade, run_interior_cascade
from .fieldio import load_field, load_json, load_mask, save_field, save_json, save_mask
from .funcspace import GridFunction, constant_exponent, luxemburg_norm, modular, morrey_norm
from .geometry import certify_reifenberg, density_ratio, make_rect_domain
from .goodlambda import assemble_corollaries, assemble_main_estimate, level_sets
from .goodlambda import make_config as make_gl_config
from .maximal import domination_constant, frac_maximal_1
from .pde import NonlinearityModel, solve_dirichlet
from .weights import ap_constant, fit_ainfty_constants, power_weight, sample_balls, validate_ainfty


def _number(s):
    """Float from '0.125' or '1/8'."""
    return float(Fraction(s)) if "/" in s else float(s)


def _point(s):
    return np.array([_number(v) for v in s.split(",")])


def _emit(obj, out=None):
    text = json.dumps(obj, indent=2, sort_keys=True, default=_plain)
    if out:
        Path(out).write_text(text)
    print(text)


def _plain(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(type(o))


def _load_case(args):
    d = load_json(args.case)
    d = d.get("case", d)
    spec = harness.CaseSpec.from_dict(d)
    if getattr(args, "h", None):
        spec = spec.with_h(args.h)
    if getattr(args, "tol", None):
        spec.tol = args.tol
    return spec


def _solved(args):
    spec = _load_case(args)
    case = harness.build_case(spec)
    u = solve_dirichlet(case.model, case.mu, tol=spec.tol, max_iter=300)
    return spec, case, u


# ------------------------------------------------------------ subcommands

def cmd_solve(args):
    if args.case:
        spec, case, u = _solved(args)
        mask, model, mu = case.mask, case.model, case.mu
    else:
        if not (args.model and args.mask):
            raise SystemExit("solve needs --case or --model with --mask")
        mask = load_mask(args.mask)
        md = load_json(args.model)
        p = harness.build_exponent(mask, md["exponent"])
        coeff = harness.build_coeff(mask, md.get("coeff", {"kind": "constant", "value": 1.0}))
        model = NonlinearityModel(p, md.get("s", 0.0), coeff)
        mu = harness.build_measure(mask, load_json(args.mu)) if args.mu else None
        u = solve_dirichlet(model, mu, tol=args.tol or 1e-8, max_iter=300)
    info = u.summary()
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        save_mask(out / "mask.bin", mask)
        save_field(out / "u.bin", mask.grid, u.u.values, {"kind": "solution"})
        save_field(out / "grad.bin", mask.grid, u.Du.magnitude, {"kind": "|Du|"})
        save_json(out / "solve.json", info)
    _emit(info)
    return 0 if u.converged else 1


def cmd_certify(args):
    if args.mask:
        mask = load_mask(args.mask)
    elif args.case:
        mask = harness.build_mask(_load_case(args))
    else:
        mask = make_rect_domain([(0, 1), (0, 1)], args.h or 1 / 64)
    cert = certify_reifenberg(mask, args.R0, n_dirs=args.n_dirs, n_radii=args.n_radii,
                              exclude_corners=not args.keep_corners)
    out = {"delta": cert.delta, "R0": cert.R0, "n_samples": len(cert.deviations),
           "excluded": cert.excluded}
    if args.density_radius:
        pts = mask.centers()[mask.boundary_mask[mask.inside]]
        ratios = [density_ratio(mask, x, args.density_radius) for x in pts]
        out["density_ratio_max"] = float(max(ratios))
        out["density_bound"] = (2 / (1 - cert.delta)) ** mask.n
    _emit(out, args.out)
    return 0


def cmd_norm(args):
    if args.field:
        grid, vals, _ = load_field(args.field)
        mask = load_mask(args.mask)
        f = GridFunction(vals, mask)
        p = constant_exponent(mask, args.p or 2.0)
    else:
        spec, case, u = _solved(args)
        mask = case.mask
        f = GridFunction(u.Du.magnitude, mask)
        p = case.model.p if args.p is None else constant_exponent(mask, args.p)
    out = {"luxemburg": luxemburg_norm(f, p), "modular": modular(f, p)}
    if args.lam is not None:
        out["morrey"] = morrey_norm(f, args.q or 2.0, args.lam)
    _emit(out, args.out)
    return 0


def cmd_weights(args):
    h = args.h or 1 / 64
    mask = make_rect_domain([(-1, 1), (-1, 1)], h)
    center = _point(args.center) if args.center else np.zeros(2)
    w = power_weight(args.alpha, center, mask.grid)
    balls = sample_balls(mask.grid, args.samples, seed=args.seed)
    out = {"alpha": args.alpha, "p": args.p, "Ap_sampled": ap_constant(w, args.p, balls)}
    try:
        c = fit_ainfty_constants(w, samples=args.samples, seed=args.seed)
        out.update(kappa_w=c.kappa_w, c_w=c.c_w,
                   validated=validate_ainfty(w, c, samples=args.samples, seed=args.seed + 1,
                                             slack=1.1))
    except ValueError as exc:
        out["ainfty_error"] = str(exc)
    _emit(out, args.out)
    return 0


def cmd_maximal(args):
    spec = _load_case(args)
    case = harness.build_case(spec, validate=False)
    g = case.mask.grid
    m1 = frac_maximal_1(case.mu, g)
    out = {"max_M1": float(m1[case.mask.inside].max()),
           "domination_constant": domination_constant(case.mu, g, where=case.mask.inside)}
    _emit(out, args.out)
    return 0


def cmd_cascade(args):
    spec, case, u = _solved(args)
    center = _point(args.center)
    if args.boundary:
        pts = case.mask.boundary_faces[0]
        center = pts[np.argmin(np.linalg.norm(pts - center, axis=1))]
    try:
        cfg = make_config(case.model, u, center, args.R, R0=args.R0)
        run = run_boundary_cascade if args.boundary else run_interior_cascade
        res = run(case.model, case.mu, u, cfg)
    except ThresholdError as exc:
        print(f"precondition failed: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        # regions too small for the grid, or B_2R leaving the domain
        print(f"cascade failed: {exc}", file=sys.stderr)
        return 2
    out = res.to_dict()
    out["config"] = cfg.to_dict()
    _emit(out, args.out)
    return 0


def cmd_goodlambda(args):
    spec, case, u = _solved(args)
    rows = []
    for A0 in args.A0:
        cfg = make_gl_config(u, case.mu, case.model.p, case.q, case.w, A0=A0)
        cfg.alpha = args.alpha
        rep = level_sets(u, case.mu, case.q, case.w, cfg)
        d = rep.to_dict()
        d["config"] = cfg.to_dict()
        rows.append(d)
    _emit(rows, args.out)
    return 0


def cmd_estimate(args):
    spec, case, u = _solved(args)
    reps = [assemble_main_estimate(u, case.mu, case.q, case.w),
            assemble_main_estimate(u, case.mu, case.q, case.w, dual=True)]
    reps += assemble_corollaries(u, case.mu, case.q, case.w, lam=spec.corollary.get("lambda"),
                                 r=spec.corollary.get("r"))
    _emit([r.to_dict() for r in reps], args.out)
    return 0


def cmd_suite(args):
    cases = harness.generate_suite(args.profile, args.count, args.seed, h=args.h)
    res = harness.run_suite(cases, out_dir=args.out, workers=args.workers)
    _emit({"aggregates": res.aggregates, "meta": res.meta})
    return 0


def cmd_refine(args):
    spec = _load_case(args)
    table = harness.refinement_study(spec, args.h_list)
    _emit({"h": table["h"], "drift": table["drift"],
           "rows": [{k: v for k, v in r.items() if not k.startswith("check_")}
                    for r in table["rows"]]}, args.out)
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="pxlab", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    def case_args(p, required=True):
        p.add_argument("--case", required=required, help="case JSON file")
        p.add_argument("--h", type=_number, help="override grid width")
        p.add_argument("--tol", type=float, help="override solver tolerance")
        p.add_argument("--out", help="output path")

    p = sub.add_parser("solve", help="solve the Dirichlet problem")
    case_args(p, required=False)
    p.add_argument("--model", help="model JSON (exponent, s, coeff)")
    p.add_argument("--mu", help="measure JSON")
    p.add_argument("--mask", help="mask file")
    p.set_defaults(fn=cmd_solve)

    p = sub.add_parser("certify-domain", help="flatness certificate of a mask")
    case_args(p, required=False)
    p.add_argument("--mask")
    p.add_argument("--R0", type=_number, default=0.25)
    p.add_argument("--n-dirs", type=int, default=360)
    p.add_argument("--n-radii", type=int, default=1)
    p.add_argument("--keep-corners", action="store_true")
    p.add_argument("--density-radius", type=_number)
    p.set_defaults(fn=cmd_certify)

    p = sub.add_parser("norm", help="Luxemburg, modular and Morrey norms")
    case_args(p, required=False)
    p.add_argument("--field")
    p.add_argument("--mask")
    p.add_argument("--p", type=float)
    p.add_argument("--q", type=float)
    p.add_argument("--lam", type=float)
    p.set_defaults(fn=cmd_norm)

    p = sub.add_parser("weights", help="A_p and A_infinity constants of |x|^alpha")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--center")
    p.add_argument("--p", type=float, default=2.0)
    p.add_argument("--h", type=_number)
    p.add_argument("--samples", type=int, default=400)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_weights)

    p = sub.add_parser("maximal", help="M_1 versus I_1 domination")
    case_args(p)
    p.set_defaults(fn=cmd_maximal)

    p = sub.add_parser("cascade", help="local comparison cascade")
    case_args(p)
    p.add_argument("--center", required=True, help="X,Y")
    p.add_argument("--R", type=_number, required=True)
    p.add_argument("--R0", type=_number, default=0.5)
    p.add_argument("--boundary", action="store_true")
    p.set_defaults(fn=cmd_cascade)

    p = sub.add_parser("goodlambda", help="level-set measures and fitted B")
    case_args(p)
    p.add_argument("--A0", type=float, nargs="+", default=[2.0, 4.0, 8.0, 16.0])
    p.add_argument("--alpha", type=float, default=1.0)
    p.set_defaults(fn=cmd_goodlambda)

    p = sub.add_parser("estimate", help="main estimate and corollaries")
    case_args(p)
    p.set_defaults(fn=cmd_estimate)

    p = sub.add_parser("suite", help="generate and run a preset suite")
    p.add_argument("--profile", choices=harness.PROFILES, default="smoke")
    p.add_argument("--count", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--h", type=_number)
    p.add_argument("--workers", type=int, help=f"defaults to ${harness.WORKERS_ENV} or 1")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_suite)

    p = sub.add_parser("refine", help="refinement study of one case")
    case_args(p)
    p.add_argument("--h-list", type=lambda s: [_number(v) for v in s.split(",")],
                   default=[1 / 32, 1 / 64, 1 / 128])
    p.set_defaults(fn=cmd_refine)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
