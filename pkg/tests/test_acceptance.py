"""Acceptance criteria 1-10, each printing one PASS/FAIL line."""

import time

import numpy as np
import pytest

from pxlab import harness
from pxlab.comparison import (CASCADE_TOL, make_config, run_boundary_cascade,
                              run_interior_cascade)
from pxlab.funcspace import (ExponentField, GridFunction, check_unit_ball_equiv,
                             constant_exponent, luxemburg_norm)
from pxlab.geometry import (certify_reifenberg, density_ratio, make_disk_domain,
                            make_rect_domain, make_sawtooth_domain)
from pxlab.goodlambda import assemble_corollaries
from pxlab.maximal import RadonMeasure, atom_cells, domination_constant, zero_measure
from pxlab.pde import NonlinearityModel, solve_dirichlet, verify_structure
from pxlab.weights import (constant_weight, fit_ainfty_constants, power_weight,
                           validate_ainfty)

pytestmark = pytest.mark.acceptance

RATIO_KEYS = ("ratio_Du_w", "ratio_freeze", "ratio_v_lip", "ratio_v_h")


def _random_field(rng, mask):
    X, Y = mask.grid.mesh()
    k = rng.uniform(1, 8, 4)
    f = rng.uniform(0.2, 3) * (np.sin(k[0] * X + k[1] * Y) + rng.uniform(-1, 1) * np.cos(k[2] * X * Y))
    f = f + rng.uniform(0, 0.5) * rng.standard_normal(X.shape)
    return GridFunction(np.where(mask.inside, f, 0.0), mask)


def test_c01_luxemburg(criterion):
    t0 = time.perf_counter()
    mask = make_rect_domain([(0, 1), (0, 1)], 1 / 64)
    rng = np.random.default_rng(101)
    worst = 0.0
    for p0 in (1.5, 2.0, 3.0):
        p = constant_exponent(mask, p0)
        for _ in range(50):
            f = _random_field(rng, mask)
            lp = (np.sum(np.abs(f.values[mask.inside]) ** p0) * mask.grid.cell_volume) ** (1 / p0)
            worst = max(worst, abs(luxemburg_norm(f, p) - lp) / lp)
    X, Y = mask.grid.mesh()
    r = np.geomspace(mask.h, 3, 50)
    agree = 0
    for i in range(200):
        a, b = rng.uniform(1.2, 3.5, 2)
        vals = a + (b - a) * (X if i % 2 else Y)
        p = ExponentField(mask, vals, min(a, b), max(a, b), r, np.full(50, abs(b - a)))
        f = _random_field(rng, mask)
        # rescale so the modular lands near 1, where the flags are most delicate
        f = f * (rng.uniform(0.8, 1.25) / luxemburg_norm(f, p))
        n_ok, m_ok = check_unit_ball_equiv(f, p)
        agree += n_ok == m_ok
    secs = time.perf_counter() - t0
    ok = worst <= 1e-6 and agree == 200 and secs < 10
    assert criterion(1, ok, f"max rel err {worst:.2e}, flags agree {agree}/200, {secs:.1f}s")


def test_c02_structure(criterion):
    mask = make_rect_domain([(0, 1), (0, 1)], 1 / 16)
    ok, parts = True, []
    for p0 in (1.95, 2.0, 3.0):
        for s in (0.0, 1.0):
            rep = verify_structure(NonlinearityModel(constant_exponent(mask, p0), s=s),
                                   n_xi=100, n_eta=100)
            ok &= rep.monotonicity_ok and rep.Lambda2_fit > 0
            parts.append(f"p={p0},s={s:g}:L2={rep.Lambda2_fit:.3g}")
    L1, L2, _ = verify_structure(NonlinearityModel(constant_exponent(mask, 2.0), s=0.0))
    exact = abs(L1 - 1) <= 1e-12 and abs(L2 - 1) <= 1e-12
    ok &= exact
    assert criterion(2, ok, f"{', '.join(parts)}; laplacian L1={L1!r} L2={L2!r}")


def test_c03_solver(criterion):
    t0 = time.perf_counter()
    errs = []
    for h in (1 / 32, 1 / 64, 1 / 128):
        m = make_rect_domain([(0, 1), (0, 1)], h)
        X, Y = m.grid.mesh()
        exact = np.sin(np.pi * X) * np.sin(np.pi * Y)
        f = GridFunction(np.where(m.inside, 2 * np.pi ** 2 * exact, 0.0), m)
        u = solve_dirichlet(NonlinearityModel(constant_exponent(m, 2.0)), f, tol=1e-10)
        errs.append(float(np.abs(u.u.values - exact)[m.inside].max()))
    order = min(np.log2(errs[0] / errs[1]), np.log2(errs[1] / errs[2]))
    # -div(|Du| Du) = 1 on the unit disk, u = (2/3) 2^(-1/2) (1 - r^(3/2))
    m = make_disk_domain([0, 0], 1.0, 1 / 128)
    X, Y = m.grid.mesh()
    exact = (2 / 3) * 0.5 ** 0.5 * (1 - np.hypot(X, Y) ** 1.5)
    u = solve_dirichlet(NonlinearityModel(constant_exponent(m, 3.0)),
                        GridFunction(np.where(m.inside, 1.0, 0.0), m), tol=1e-8, max_iter=300)
    d = (u.u.values - exact)[m.inside]
    rel = float(np.sqrt((d ** 2).sum() / (exact[m.inside] ** 2).sum()))
    secs = time.perf_counter() - t0
    ok = errs[1] <= 1e-3 and order >= 1.8 and rel <= 0.02 and secs < 60
    assert criterion(3, ok, f"poisson err(1/64)={errs[1]:.2e}, order {order:.3f}, "
                            f"radial p=3 rel L2 {rel:.2e}, {secs:.1f}s")


def _random_measures(mask, seed, count=20):
    rng = np.random.default_rng(seed)
    X, Y = mask.grid.mesh()
    out = []
    for _ in range(count):
        k = int(rng.integers(0, 4))
        dens = None
        if k == 0 or rng.uniform() < 0.5:
            c = rng.uniform(0.3, 0.7, 2)
            wd = rng.uniform(0.03, 0.2)
            g = np.exp(-((X - c[0]) ** 2 + (Y - c[1]) ** 2) / (2 * wd * wd))
            dens = GridFunction(np.where(mask.inside, g, 0.0), mask)
        out.append(RadonMeasure(rng.uniform(0.1, 0.9, (k, 2)), rng.uniform(0.1, 1, k), dens))
    return out


def test_c04_domination(criterion):
    from pxlab.maximal import frac_maximal_1, riesz_potential_1

    cs, pointwise = [], True
    for h in (1 / 64, 1 / 128):
        m = make_rect_domain([(0, 1), (0, 1)], h)
        mus = _random_measures(m, 7)
        c = max(domination_constant(mu, m.grid, where=m.inside) for mu in mus)
        cs.append(c)
        for mu in mus:
            sel = m.inside & ~atom_cells(mu, m.grid)
            m1, i1 = frac_maximal_1(mu, m.grid), riesz_potential_1(mu, m.grid)
            pointwise &= bool(np.all(m1[sel] <= c * i1[sel] * (1 + 1e-12)))
    factor = max(cs) / min(cs)
    ok = pointwise and factor <= 1.5
    assert criterion(4, ok, f"c(1/64)={cs[0]:.6f}, c(1/128)={cs[1]:.6f}, factor {factor:.4f}")


def test_c05_ainfty(criterion):
    m = make_rect_domain([(-1, 1), (-1, 1)], 1 / 64)
    one = fit_ainfty_constants(constant_weight(m.grid), samples=400, seed=0)
    w = power_weight(0.5, [0.0, 0.0], m.grid)
    c = fit_ainfty_constants(w, samples=400, seed=0)
    frac = validate_ainfty(w, c, samples=400, seed=1, slack=1.1)
    ok = one.c_w <= 1.01 and one.kappa_w >= 0.99 and frac >= 0.95
    assert criterion(5, ok, f"w=1: kappa={one.kappa_w}, c={one.c_w}; |x|^0.5: kappa={c.kappa_w}, "
                            f"c={c.c_w:.3g}, held-out pass {frac:.3f}")


def _suite_max(rows, key):
    vals = [r[key] for r in rows if r.get("status") == "ok" and np.isfinite(r.get(key, np.nan))]
    return max(vals) if vals else None


def test_c06_cascade(criterion):
    m = make_rect_domain([(0, 1), (0, 1)], 1 / 64)
    model = NonlinearityModel(constant_exponent(m, 2.3), s=0.5)
    mu = zero_measure()
    u = solve_dirichlet(model, mu, tol=1e-10)
    null = 0.0
    for center, run in (([0.5, 0.5], run_interior_cascade), ([0.5, 0.0], run_boundary_cascade)):
        cfg = make_config(model, u, center, 0.04, R0=0.5)
        null = max(null, max(run(model, mu, u, cfg).ratios.values()))
    maxima = {}
    finite = True
    for h in (1 / 64, 1 / 128):
        rows = harness.run_suite(harness.generate_suite("interior", 20, seed=0, h=h)).rows
        finite &= all(r["status"] == "ok" for r in rows)
        finite &= all(np.isfinite(r[k]) for r in rows for k in RATIO_KEYS if r["status"] == "ok")
        maxima[h] = {k: _suite_max(rows, k) for k in RATIO_KEYS}
    drift = {k: abs(maxima[1 / 128][k] - maxima[1 / 64][k]) / maxima[1 / 64][k]
             for k in RATIO_KEYS}
    ok = null <= 10 * CASCADE_TOL and finite and max(drift.values()) <= 0.5
    txt = ", ".join(f"{k[6:]} {maxima[1 / 64][k]:.3g}->{maxima[1 / 128][k]:.3g} ({drift[k]:.0%})"
                    for k in RATIO_KEYS)
    assert criterion(6, ok, f"null max {null:.1e}; all finite {finite}; {txt}")


def _b_columns(rows):
    return sorted({k for r in rows for k in r if k.startswith("B_A")})


def test_c07_goodlambda(criterion):
    per_seed = {}
    incl, finite, worst_lc = True, True, 0.0
    for seed in (1, 2, 3):
        rows = harness.run_suite(harness.generate_suite("corollaries", 20, seed=seed,
                                                        h=1 / 32)).rows
        incl &= all(r.get("goodlambda_inclusion") is True for r in rows)
        cols = _b_columns(rows)
        finite &= all(np.isfinite(r[k]) for r in rows for k in cols)
        worst_lc = max([worst_lc] + [r["layer_cake_error"] for r in rows])
        # suite maximum of B per alpha, over cases and the A0 scan
        for alpha in sorted({k.split("alpha")[1] for k in cols}):
            ks = [k for k in cols if k.endswith("alpha" + alpha)]
            per_seed.setdefault(alpha, []).append(max(r[k] for r in rows for k in ks))
    spread, nonzero = {}, []
    for alpha, vals in per_seed.items():
        if max(vals) == 0:
            spread[alpha] = "E empty"
            continue
        nonzero.append(alpha)
        spread[alpha] = max(vals) / min(vals) if min(vals) > 0 else np.inf
    stable = bool(nonzero) and all(spread[a] <= 2 for a in nonzero)
    ok = incl and finite and stable and worst_lc <= 0.05
    txt = "; ".join(f"alpha={a}: max B per seed {[round(v, 3) for v in per_seed[a]]}, "
                    f"spread {spread[a] if isinstance(spread[a], str) else round(spread[a], 3)}"
                    for a in per_seed)
    assert criterion(7, ok, f"inclusion {incl}, finite {finite}, layer-cake err "
                            f"{worst_lc:.2%}; {txt}")


@pytest.fixture(scope="module")
def corollary_rows():
    return {h: harness.run_suite(harness.generate_suite("corollaries", 20, seed=0, h=h)).rows
            for h in (1 / 32, 1 / 64)}


def test_c08_main_estimate(criterion, corollary_rows):
    finite, zero_ok, maxima = True, True, []
    for h, rows in corollary_rows.items():
        conv = [r for r in rows if r.get("solve_converged")]
        finite &= len(conv) == len(rows)
        finite &= all(np.isfinite(r["main_ratio"]) for r in conv)
        for r, spec in zip(rows, harness.generate_suite("corollaries", 20, seed=0, h=h)):
            if not spec.measure["atoms"] and not spec.measure.get("density"):
                zero_ok &= r["main_ratio"] == 0.0
        maxima.append(max(r["main_ratio"] for r in conv))
    factor = max(maxima) / min(maxima)
    ok = finite and zero_ok and factor <= 2
    assert criterion(8, ok, f"finite {finite}, mu=0 rows exactly 0: {zero_ok}, "
                            f"max ratio {maxima[0]:.4g}->{maxima[1]:.4g} (factor {factor:.3f})")


def _expected_sobolev_pair_skip(q, r, alpha, n=2):
    """Skip iff 1/r - 1/q != 1/n or |x|^(alpha q) is outside A_{1 + q/r'}."""
    if abs(1 / r - 1 / q - 1 / n) > 1e-12:
        return True
    s = 1 + q * (1 - 1 / r)
    beta = alpha * q
    return not (-n < beta < n * (s - 1))


def test_c09_corollaries(criterion, corollary_rows):
    parts, ok = [], True
    for name in ("const_q", "morrey"):
        mx = []
        for rows in corollary_rows.values():
            applicable = [r for r in rows if not r[f"{name}_skip"]]
            ok &= all(np.isfinite(r[f"{name}_ratio"]) for r in applicable)
            mx.append(max(r[f"{name}_ratio"] for r in applicable))
        f = max(mx) / min(mx)
        ok &= f <= 2
        parts.append(f"{name} max {mx[0]:.4g}->{mx[1]:.4g} (factor {f:.3f})")
    # skip logic over an explicit grid of (q, r, alpha) with function data
    m = make_rect_domain([(0, 1), (0, 1)], 1 / 16)
    X, Y = m.grid.mesh()
    dens = GridFunction(np.where(m.inside, 1 + X * Y, 0.0), m)
    mu = RadonMeasure(np.zeros((0, 2)), np.zeros(0), dens)
    model = NonlinearityModel(constant_exponent(m, 2.2), s=0.5)
    u = solve_dirichlet(model, mu, tol=1e-10)
    checked, mismatched = 0, 0
    for q0 in (2.2, 2.5, 3.0):
        q = constant_exponent(m, q0)
        r_pair = 2 * q0 / (2 + q0)
        for r in (r_pair, r_pair + 0.05, r_pair - 0.05):
            for alpha in (-0.5, -0.1, 0.05, 0.1, 0.5, 1.0):
                w = power_weight(alpha, [0.5, 0.5], m.grid)
                rep = {x.name: x for x in assemble_corollaries(u, mu, q, w, r=r)}["sobolev_pair"]
                checked += 1
                mismatched += rep.skipped != _expected_sobolev_pair_skip(q0, r, alpha)
                if not rep.skipped:
                    ok &= bool(np.isfinite(rep.ratio))
    ok &= mismatched == 0
    parts.append(f"sobolev_pair skip logic {checked - mismatched}/{checked} exact")
    assert criterion(9, ok, "; ".join(parts))


def test_c10_reifenberg(criterion):
    R0 = 0.25
    rect = []
    for h in (1 / 32, 1 / 64, 1 / 128):
        m = make_rect_domain([(0, 1), (0, 1)], h)
        rect.append((h, certify_reifenberg(m, R0, n_dirs=720, n_radii=1).delta, m))
    rate_ok = all(d <= h / R0 for h, d, _ in rect)
    saw = make_sawtooth_domain([(0, 1), (0, 1)], 1 / 128, 0.05, 0.25)
    d_saw = certify_reifenberg(saw, R0, n_dirs=720, n_radii=1).delta
    dens_ok, worst = True, 0.0
    for mask, delta in [(m, d) for _, d, m in rect] + [(saw, d_saw)]:
        bound = (2 / (1 - delta)) ** mask.n
        pts = mask.centers()[mask.boundary_mask[mask.inside]]
        for r in (R0, R0 / 2, R0 / 4):
            ratio = max(density_ratio(mask, x, r) for x in pts)
            worst = max(worst, ratio / bound)
            dens_ok &= ratio <= bound
    ok = rate_ok and 0.04 <= d_saw <= 0.08 and dens_ok
    txt = ", ".join(f"h={h:.4g}: {d:.3g}" for h, d, _ in rect)
    assert criterion(10, ok, f"rect delta {txt}; sawtooth(1/128) delta {d_saw:.4f}; "
                             f"density ratio/bound max {worst:.3f}")
