import numpy as np
import pytest

from pxlab.funcspace import constant_exponent
from pxlab.goodlambda import (GoodLambdaConfig, assemble_corollaries, assemble_main_estimate,
                              covering_lemma_check, layer_cake, level_sets, make_config,
                              mass_term, power_weight_in_Ap, work_region)
from pxlab.maximal import zero_measure
from pxlab.pde import NonlinearityModel, solve_dirichlet
from pxlab.weights import constant_weight, power_weight


def test_layer_cake_below_grid_is_exact():
    vals = np.array([0.1, 0.2, 0.3])
    wts = np.array([1.0, 2.0, 3.0])
    assert layer_cake(vals, wts, [0.5, 1.0], 2.0) == pytest.approx((vals ** 2 * wts).sum())


def test_layer_cake_converges_with_grid(rng):
    vals = rng.uniform(0, 3, 500)
    wts = rng.uniform(0.5, 1.5, 500)
    direct = (vals ** 1.7 * wts).sum()
    errs = [abs(layer_cake(vals, wts, np.geomspace(1e-3, 4, k), 1.7) - direct) / direct
            for k in (16, 64, 256)]
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 5e-3


def test_config_validation():
    with pytest.raises(ValueError):
        GoodLambdaConfig(0.5, [1, 2], 1, 1, 1, 1, 2, 1)
    with pytest.raises(ValueError):
        GoodLambdaConfig(2.0, [2, 1], 1, 1, 1, 1, 2, 1)


def test_epsilon_identity(dirac_solution, unit_square_32):
    model, mu, u = dirac_solution
    q = constant_exponent(unit_square_32, 2.5)
    w = power_weight(0.5, [0.4, 0.6], unit_square_32.grid)
    for A0 in (2.0, 8.0):
        cfg = make_config(u, mu, model.p, q, w, A0=A0)
        assert cfg.epsilon == pytest.approx(1 / A0 ** 2.5, rel=1e-12)
        assert cfg.a0 == pytest.approx(1 / (3 * cfg.c_w))


def test_level_sets_inclusion_and_monotone(dirac_solution, unit_square_32):
    model, mu, u = dirac_solution
    q = constant_exponent(unit_square_32, 2.0)
    w = power_weight(-0.3, [0.5, 0.5], unit_square_32.grid)
    cfg = make_config(u, mu, model.p, q, w, A0=2.0)
    for alpha in (1.0, 16.0):
        cfg.alpha = alpha
        rep = level_sets(u, mu, q, w, cfg)
        assert rep.inclusion_ok and rep.monotone_ok
        assert np.isfinite(rep.B_fit) and rep.B_fit >= 0
        assert np.all(rep.wE <= rep.wG + 1e-15)
        assert rep.layer_cake_error < 0.05


def test_work_region_default_covers_domain(unit_square_32):
    reg = work_region(unit_square_32)
    assert np.array_equal(reg.cells_R, unit_square_32.inside)
    assert np.allclose(reg.center, [0.5, 0.5])


def test_covering_check_trivial_and_invalid(unit_square_32):
    m = unit_square_32
    w = constant_weight(m.grid)
    empty = np.zeros(m.grid.shape, bool)
    rep = covering_lemma_check(empty, m.inside, w, m, None, 0.1)
    assert rep and rep.reason == "E empty"
    E = m.inside.copy()
    with pytest.raises(ValueError):
        covering_lemma_check(E, empty, w, m, None, 0.1)


def test_mass_term_formula(unit_square_32, dirac_solution):
    _, mu, _ = dirac_solution
    assert mass_term(mu.scaled(4.0), unit_square_32, 0.6, 2.2) == pytest.approx(4 ** 0.5 + 1)


def test_main_estimate_zero_measure_is_zero(unit_square_32):
    m = unit_square_32
    model = NonlinearityModel(constant_exponent(m, 2.3), s=0.5)
    mu = zero_measure()
    u = solve_dirichlet(model, mu)
    q = constant_exponent(m, 1.5)
    w = power_weight(0.5, [0.5, 0.5], m.grid)
    for dual in (False, True):
        rep = assemble_main_estimate(u, mu, q, w, dual=dual)
        assert rep.lhs == 0.0 and rep.ratio == 0.0
        assert rep.rhs == pytest.approx(1.0)


def test_main_estimate_positive_and_finite(dirac_solution, unit_square_32):
    model, mu, u = dirac_solution
    q = constant_exponent(unit_square_32, 2.0)
    w = power_weight(0.5, [0.5, 0.5], unit_square_32.grid)
    rep = assemble_main_estimate(u, mu, q, w)
    assert 0 < rep.ratio < np.inf
    assert rep.rhs == pytest.approx(rep.meta["rhs_mass"] + rep.meta["rhs_maximal"])


@pytest.mark.parametrize("alpha,s,ok", [(0.5, 2.0, True), (2.0, 2.0, False), (-2.0, 3.0, False),
                                        (-1.9, 1.5, True), (1.0, 1.5, False)])
def test_power_weight_class(alpha, s, ok):
    assert power_weight_in_Ap(alpha, 2, s) is ok


def test_corollaries_names_and_atom_skips(dirac_solution, unit_square_32):
    model, mu, u = dirac_solution
    q = constant_exponent(unit_square_32, 2.5)
    w = power_weight(0.2, [0.5, 0.5], unit_square_32.grid)
    reps = {r.name: r for r in assemble_corollaries(u, mu, q, w)}
    assert set(reps) == {"const_q", "sobolev_pair", "morrey", "sobolev_modular"}
    assert np.isfinite(reps["const_q"].ratio) and np.isfinite(reps["morrey"].ratio)
    assert reps["sobolev_pair"].skipped and reps["sobolev_pair"].reason == "data is not a function"
    assert reps["sobolev_modular"].skipped
