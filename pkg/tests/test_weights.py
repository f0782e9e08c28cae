import numpy as np
import pytest

from pxlab.geometry import make_rect_domain
from pxlab.weights import (AInftyFailure, WeightField, ap_constant, centered_balls, constant_weight,
                           fit_ainfty_constants, power_weight, sample_balls, validate_ainfty)

BOX = make_rect_domain([(-1, 1), (-1, 1)], 1 / 64)


def test_a2_of_half_power_matches_closed_form():
    # on balls centred at the singularity the A_2 product of |x|^a in 2-D
    # is 4 / ((2 + a)(2 - a)) = 16/15 for a = 1/2
    w = power_weight(0.5, [0.0, 0.0], BOX.grid)
    val = ap_constant(w, 2.0, centered_balls([0.0, 0.0], [0.25, 0.5]))
    assert val == pytest.approx(16 / 15, abs=1e-3)


def test_constant_weight_is_a1_with_constant_one():
    w = constant_weight(BOX.grid, 3.0)
    balls = sample_balls(BOX.grid, 50, seed=3)
    assert ap_constant(w, 1.0, balls) == pytest.approx(1.0)
    assert ap_constant(w, 2.5, balls) == pytest.approx(1.0)


def test_ap_argument_checks():
    w = constant_weight(BOX.grid)
    with pytest.raises(ValueError):
        ap_constant(w, 0.5, sample_balls(BOX.grid, 5))
    with pytest.raises(ValueError):
        ap_constant(w, 2.0, [])
    with pytest.raises(ValueError):
        power_weight(-2.0, [0, 0], BOX.grid)


def test_weight_field_rejects_nonpositive():
    with pytest.raises(ValueError):
        WeightField(BOX.grid, np.zeros(BOX.grid.shape))


def test_ainfty_of_constant_weight_is_exact():
    c = fit_ainfty_constants(constant_weight(BOX.grid), samples=200, seed=0)
    assert c.kappa_w == pytest.approx(1.0)
    assert c.c_w <= 1.0 + 1e-9


def test_ainfty_half_power_validates():
    w = power_weight(0.5, [0.0, 0.0], BOX.grid)
    c = fit_ainfty_constants(w, samples=400, seed=0)
    assert 0 < c.kappa_w <= 1 and c.c_w >= 1
    assert c.max_residual <= 1e-12
    assert validate_ainfty(w, c, samples=400, seed=1, slack=1.1) >= 0.95


def test_ainfty_requires_enough_samples():
    with pytest.raises(ValueError):
        fit_ainfty_constants(constant_weight(BOX.grid), samples=10)


def test_ainfty_failure_is_value_error():
    assert issubclass(AInftyFailure, ValueError)
