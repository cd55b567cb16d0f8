import math

import numpy as np
import pytest

from hartree_lab.errors import HartreeError
from hartree_lab.linearized import remainder_R
from hartree_lab.radial_core import RadialField, h1_inner
from hartree_lab.special_solutions import (approximate_solution, build_expansion, evaluate_approximation,
                                           wpm_initial_data)


def _wnorm(v, grid):
    return float(np.sqrt(grid.weights @ np.abs(v) ** 2))


@pytest.fixture(scope="module")
def series(system, pair):
    return build_expansion(1.0, 3, system, pair)


def test_zero_amplitude_gives_zero_series(system, pair):
    s = build_expansion(0.0, 3, system, pair)
    assert not np.any(s.coefficients)
    assert np.array_equal(evaluate_approximation(s, 0.0).values, system.ground.W.values)


def test_first_order_is_eigenfunction(system, pair):
    s = build_expansion(-0.7, 1, system, pair)
    assert np.array_equal(s.coefficients[1], -0.7 * pair.Y_plus.values)
    assert s.order_residuals[0] <= 1e-6
    u = evaluate_approximation(s, 0.0)
    assert np.array_equal(u.values, system.ground.W.values - 0.7 * pair.Y_plus.values)


def test_orders_solved_and_next_order_nonzero(series):
    assert max(series.order_residuals) <= 1e-6
    assert _wnorm(series.remainder[4], series.grid) > 0
    d = series.defect_coefficients()
    scale = max(_wnorm(c, series.grid) for c in series.coefficients[1:])
    assert max(_wnorm(d[j], series.grid) for j in (1, 2, 3)) <= 1e-6 * scale


def test_remainder_coefficients_match_direct_evaluation(series, system):
    for t in (0.3, 0.8, 1.5):
        x = math.exp(-series.e0 * t)
        direct = remainder_R(series.perturbation(t), system.ground.W, system.kernel).values
        poly = np.polynomial.polynomial.polyval(x, series.remainder)
        assert _wnorm(direct - poly, series.grid) <= 1e-10 * _wnorm(direct, series.grid)


def test_time_defect_matches_coefficient_bookkeeping(series):
    e0 = series.e0
    d = series.defect_coefficients()
    for t in (0.5 / e0, 1.0 / e0, 2.0 / e0):
        x = math.exp(-e0 * t)
        dth = sum(-j * e0 * x ** j * series.coefficients[j] for j in range(1, 4))
        from_coef = _wnorm(np.polynomial.polynomial.polyval(x, d), series.grid) / _wnorm(dth, series.grid)
        assert series.time_defect(t) == pytest.approx(from_coef, rel=1e-6)


def test_defect_decays_at_order_k(series):
    # defect / |dt h| ~ X^k, so one unit of e0 t costs a factor e^{-3}
    e0 = series.e0
    a, b = series.time_defect(3.0 / e0), series.time_defect(4.0 / e0)
    assert b / a == pytest.approx(math.exp(-3.0), rel=0.1)


def test_long_time_limit_is_ground_state(series, system):
    u = evaluate_approximation(series, 30.0 / series.e0)
    assert np.max(np.abs(u.values - system.ground.W.values)) <= 1e-12


def test_second_order_bound(series, pair, system):
    # U - W - a X Y_+ = X^2 (Z_2 + X Z_3): the ratio to X^2 decreases to |Z_2|
    e0 = series.e0
    hn = lambda v: math.sqrt(h1_inner(RadialField(series.grid, v), RadialField(series.grid, v)))
    z2, z3 = hn(series.coefficients[2]), hn(series.coefficients[3])
    ratios = []
    for t in np.linspace(0.0, 5.0 / e0, 11):
        x = math.exp(-e0 * t)
        rest = evaluate_approximation(series, t).values - system.ground.W.values - x * pair.Y_plus.values
        ratios.append(hn(rest) / x ** 2)
        assert ratios[-1] <= (1 + 1e-9) * (z2 + x * z3)
    assert all(a >= b for a, b in zip(ratios, ratios[1:]))
    assert ratios[-1] == pytest.approx(z2, rel=0.05)


def test_threshold_data_gradient_sides(system, pair, gs):
    plus = wpm_initial_data(1, system, pair)
    minus = wpm_initial_data(-1, system, pair)
    assert h1_inner(plus, plus) > gs.grad_norm_sq
    assert h1_inner(minus, minus) < gs.grad_norm_sq


def test_threshold_data_energy_near_ground_state(system, pair, gs):
    from hartree_lab.radial_core import energy
    for sign in (1, -1):
        u = wpm_initial_data(sign, system, pair, t0=3.0 / pair.e0)
        assert abs(energy(u, gs.kernel) / gs.energy - 1.0) <= 1e-4


def test_errors(system, pair):
    with pytest.raises(HartreeError) as exc:
        approximate_solution(1.0, system, pair, t0=0.5 / pair.e0)
    assert exc.value.code == "t0-too-small"
    with pytest.raises(HartreeError) as exc:
        build_expansion(1.0, 0, system, pair)
    assert exc.value.code == "config-invalid"
    with pytest.raises(HartreeError) as exc:
        wpm_initial_data(0, system, pair)
    assert exc.value.code == "config-invalid"
