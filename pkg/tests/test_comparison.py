import numpy as np
import pytest

from pxlab.comparison import (CASCADE_TOL, F_functional, Thresholds, ThresholdError, ball_region,
                              compute_thresholds, default_sigma0, freeze_exponent,
                              higher_integrability_probe, make_config, modulus_threshold_radius,
                              run_boundary_cascade, run_interior_cascade)
from pxlab.funcspace import constant_exponent, log_holder_exponent
from pxlab.geometry import make_rect_domain
from pxlab.maximal import dirac, zero_measure
from pxlab.pde import NonlinearityModel, solve_dirichlet

SQ = make_rect_domain([(0, 1), (0, 1)], 1 / 64)


@pytest.fixture(scope="module")
def atom_case():
    model = NonlinearityModel(constant_exponent(SQ, 2.2), s=0.5)
    mu = dirac([0.5 + 1 / 128, 0.5 + 1 / 128])
    return model, mu, solve_dirichlet(model, mu, tol=1e-10, max_iter=300)


@pytest.fixture(scope="module")
def null_case():
    model = NonlinearityModel(constant_exponent(SQ, 2.2), s=0.5)
    mu = zero_measure()
    return model, mu, solve_dirichlet(model, mu, tol=1e-10)


def test_F_functional_closed_forms(atom_case):
    model, mu, u = atom_case
    reg = ball_region(SQ, [0.5, 0.5], 0.1)
    # p+ = 2.2 > 2: F = (m / r)^(1/1.2) + 1 with m = 1
    assert F_functional(mu, u, reg) == pytest.approx((1 / 0.1) ** (1 / 1.2) + 1)
    # p+ = 2: the second term reduces to m / r
    assert F_functional(mu, u, reg, constant_exponent(SQ, 2.0)) == pytest.approx(2 / 0.1 + 1)
    far = ball_region(SQ, [0.1, 0.1], 0.05)
    assert F_functional(mu, u, far) == 1.0


def test_thresholds_limit_is_tenth_of_min():
    th = Thresholds(0.5, 0.3, 0.8, 0.2)
    assert th.limit == pytest.approx(0.02)


def test_default_sigma0():
    assert default_sigma0(2, 2.0) == pytest.approx(1.0)
    assert default_sigma0(2, 1.6) == pytest.approx(0.6)


def test_modulus_threshold_radius():
    p = log_holder_exponent(SQ, 2.0, 0.3, [0.5, 0.5])
    R = modulus_threshold_radius(p, 1.0, 0.4)
    assert 0 < R < np.inf
    assert p.modulus(4 * R) < 0.2
    assert modulus_threshold_radius(constant_exponent(SQ, 2.0), 1.0, 1.0) == np.inf


def test_thresholds_on_constant_exponent(atom_case):
    model, _, u = atom_case
    th = compute_thresholds(model, u, 0.5)
    assert th.R_omega == pytest.approx(SQ.diameter)
    assert th.R_a == pytest.approx(SQ.diameter)
    assert 0 < th.K0_inv < 1


def test_config_rejects_large_radius(atom_case):
    model, _, u = atom_case
    with pytest.raises(ThresholdError):
        make_config(model, u, [0.5, 0.5], 0.2, R0=0.5)


def test_freeze_exponent_takes_local_sup():
    p = log_holder_exponent(SQ, 2.0, 0.2, [0.5, 0.5])
    model = NonlinearityModel(p, s=0.5)
    reg = ball_region(SQ, [0.3, 0.3], 0.05)
    b = freeze_exponent(model, reg, 1.0, 1.0, 0.05)
    assert np.all(b.p.values == p.values[reg.cells].max())
    assert b.Lambda1 == pytest.approx(3.0) and b.Lambda2 == pytest.approx(0.5)
    with pytest.raises(ThresholdError):
        freeze_exponent(model, reg, 1.0, 1e-3, 0.05)


def test_interior_cascade_constant_data_is_consistent(atom_case):
    # constant p and coefficient: freezing and averaging change nothing,
    # so h = w on B_R and v = h up to solver tolerance
    model, mu, u = atom_case
    cfg = make_config(model, u, [0.5, 0.5], 0.04, R0=0.5)
    res = run_interior_cascade(model, mu, u, cfg)
    assert res.converged
    r = res.ratios
    assert set(r) == {"Du_w", "freeze", "v_lip", "v_h"}
    assert all(np.isfinite(v) for v in r.values())
    assert r["Du_w"] > 0
    assert r["freeze"] < 1e-6 and r["v_h"] < 1e-6


def test_interior_cascade_null_ratios_vanish(null_case):
    model, mu, u = null_case
    cfg = make_config(model, u, [0.5, 0.5], 0.04, R0=0.5)
    res = run_interior_cascade(model, mu, u, cfg)
    assert max(res.ratios.values()) <= 10 * CASCADE_TOL


def test_boundary_cascade_null_ratios_vanish(null_case):
    model, mu, u = null_case
    cfg = make_config(model, u, [0.5, 0.0], 0.04, R0=0.5)
    res = run_boundary_cascade(model, mu, u, cfg)
    assert res.kind == "boundary"
    assert max(res.ratios.values()) <= 10 * CASCADE_TOL


def test_boundary_cascade_with_atom_is_finite(atom_case):
    model, mu, u = atom_case
    cfg = make_config(model, u, [0.5, 0.0], 0.04, R0=0.5)
    res = run_boundary_cascade(model, mu, u, cfg)
    assert all(np.isfinite(v) for v in res.ratios.values())


def test_interior_cascade_needs_room(atom_case):
    model, mu, u = atom_case
    cfg = make_config(model, u, [0.03, 0.5], 0.04, R0=0.5)
    with pytest.raises(ValueError):
        run_interior_cascade(model, mu, u, cfg)


def test_higher_integrability_probe_arguments(atom_case):
    model, mu, u = atom_case
    cfg = make_config(model, u, [0.5, 0.5], 0.04, R0=0.5)
    res = run_interior_cascade(model, mu, u, cfg)
    ratio, left, right = higher_integrability_probe(res.w, cfg, 0.05, 0.5)
    assert ratio == pytest.approx(left / right) and right >= 1
    with pytest.raises(ValueError):
        higher_integrability_probe(res.w, cfg, 0.5, 0.5)
    with pytest.raises(ValueError):
        higher_integrability_probe(res.w, cfg, 0.05, 1.5)
