import numpy as np
import pytest

from hartree_lab.acceptance import random_profile
from hartree_lab.errors import HartreeError
from hartree_lab.linearized import (EigenPair, assemble_linearized, bilinear_B, coercivity_constant,
                                    decompose_perturbation, nonlinear_rhs, phi, potential_V, remainder_R,
                                    subspace_projector)
from hartree_lab.radial_core import RadialField, apply_laplacian, build_grid


def _wnorm(v, grid):
    return float(np.sqrt(grid.weights @ np.abs(v) ** 2))


@pytest.fixture(scope="module")
def fields(lab, gs):
    rng = lab.rng(201)
    return [RadialField(gs.grid, random_profile(gs.grid, rng)) for _ in range(40)]


def test_operators_are_self_adjoint(system):
    assert system.asymmetry() <= 1e-12


def test_null_modes(system):
    lw, lwt = system.null_residuals()
    assert lw <= 1e-3 and lwt <= 1e-3


def test_l_plus_of_w_is_twice_laplacian(system, gs):
    lap2 = 2.0 * apply_laplacian(gs.W).real
    err = _wnorm(system.l_plus(gs.W) - lap2, gs.grid) / _wnorm(lap2, gs.grid)
    assert err <= 1e-4


def test_assemble_needs_ground_state():
    with pytest.raises(HartreeError) as exc:
        assemble_linearized(object())
    assert exc.value.code == "calibration-missing"


def test_phi_examples(system, gs):
    assert phi(system, gs.W) == pytest.approx(-gs.grad_norm_sq, rel=1e-3)
    assert abs(phi(system, RadialField(gs.grid, 1j * gs.W.values))) <= 1e-4 * gs.grad_norm_sq
    assert abs(phi(system, gs.Wtilde)) <= 1e-4 * gs.grad_norm_sq


def test_phi_vanishes_on_eigenfunctions(system, pair):
    for y in (pair.Y_plus, pair.Y_minus):
        assert abs(phi(system, y)) <= 1e-8


def test_bilinear_is_symmetric(system, fields):
    for f, g in zip(fields[::2], fields[1::2]):
        assert bilinear_B(system, f, g) == pytest.approx(bilinear_B(system, g, f), rel=1e-10, abs=1e-12)


def test_generator_is_skew_for_b(system, fields):
    worst = 0.0
    for f, g in zip(fields[::2], fields[1::2]):
        lf_g = bilinear_B(system, system.generator(f), g)
        f_lg = bilinear_B(system, f, system.generator(g))
        worst = max(worst, abs(lf_g + f_lg) / max(abs(lf_g), abs(f_lg)))
    assert worst <= 1e-8


def test_bilinear_grid_mismatch(system):
    other = build_grid(5, n=256)
    with pytest.raises(HartreeError) as exc:
        bilinear_B(system, RadialField(other, np.zeros(256)), RadialField(other, np.zeros(256)))
    assert exc.value.code == "grid-mismatch"


# eigenpair

def test_eigen_relation(system, pair):
    y = pair.Y_plus
    res = system.generator(y).values - pair.e0 * y.values
    assert _wnorm(res, system.grid) / _wnorm(y.values, system.grid) <= 1e-6
    ym = pair.Y_minus
    res = system.generator(ym).values + pair.e0 * ym.values
    assert _wnorm(res, system.grid) / _wnorm(ym.values, system.grid) <= 1e-6


def test_eigenpair_normalization_and_sign(system, pair, gs):
    assert pair.b_after == pytest.approx(1.0, abs=1e-12)
    assert pair.b_before != 0.0
    assert system.h1(gs.W.values.real, pair.Y1.values.real) > 0
    assert pair.positive_real_count == 1


def test_eigenpair_oracles_agree(pair):
    assert pair.oracles["pencil"] == pytest.approx(pair.e0, rel=1e-7)
    assert pair.oracles["sqrt"] == pytest.approx(pair.e0, rel=1e-4)


def test_eigenfunction_decays_exponentially(pair):
    assert pair.tail_r2 >= 0.99
    assert pair.tail_rate > 0


def test_eigenvalue_stable_under_refinement(lab, pair):
    assert lab.pair(512).e0 == pytest.approx(pair.e0, rel=1e-3)


# coercivity

def test_coercivity_signs(system, pair):
    assert coercivity_constant(system, "H-perp", pair) > 0
    assert coercivity_constant(system, "G-perp", pair) > 0
    assert coercivity_constant(system, "unconstrained", pair) < 0


def test_phi_bounded_below_on_h_perp(system, pair, fields):
    c = coercivity_constant(system, "H-perp", pair)
    proj = subspace_projector(system, "H-perp", pair)
    n = system.n
    for f in fields[:10]:
        x = proj.project(np.concatenate([f.values.real, f.values.imag]))
        h = RadialField(system.grid, x[:n] + 1j * x[n:])
        norm = system.h1(x[:n], x[:n]) + system.h1(x[n:], x[n:])
        assert phi(system, h) >= (1 - 1e-8) * c * norm


def test_subspace_errors(system):
    with pytest.raises(HartreeError) as exc:
        subspace_projector(system, "G-perp")
    assert exc.value.code == "unnormalized-pair"
    with pytest.raises(HartreeError) as exc:
        subspace_projector(system, "L-perp")
    assert exc.value.code == "invalid-subspace"


# decomposition

def test_decompose_y_plus(system, pair):
    dec = decompose_perturbation(pair.Y_plus, pair, system)
    assert (dec.alpha_plus, dec.alpha_minus, dec.beta, dec.gamma) == pytest.approx((1, 0, 0, 0), abs=1e-10)
    assert _wnorm(dec.v_perp.values, system.grid) <= 1e-10 * _wnorm(pair.Y_plus.values, system.grid)


def test_decompose_iw(system, pair, gs):
    dec = decompose_perturbation(RadialField(gs.grid, 1j * gs.W.values), pair, system)
    assert (dec.alpha_plus, dec.alpha_minus, dec.beta, dec.gamma) == pytest.approx((0, 0, 1, 0), abs=1e-8)


def test_decompose_random_fields(system, pair, fields):
    proj = subspace_projector(system, "G-perp", pair)
    n = system.n
    for f in fields[:10]:
        dec = decompose_perturbation(f, pair, system)
        x = np.concatenate([dec.v_perp.values.real, dec.v_perp.values.imag])
        assert proj.constraint_residual(x, scale=np.linalg.norm(x)) <= 1e-10
        assert phi(system, dec.v_perp) >= 0
        assert dec.reconstruction_residual <= 1e-8
        rebuilt = (dec.alpha_plus * pair.Y_plus.values + dec.alpha_minus * pair.Y_minus.values
                   + dec.beta * 1j * system.ground.W.values + dec.gamma * system.ground.Wtilde.values
                   + dec.v_perp.values)
        assert np.max(np.abs(rebuilt - f.values)) <= 1e-8 * np.max(np.abs(f.values))
        assert x.shape == (2 * n,)


def test_decompose_needs_normalized_pair(system, pair):
    bad = EigenPair(pair.e0, pair.Y1, pair.Y2, pair.oracles, pair.residual, pair.b_before, 2.0,
                    pair.positive_real_count, pair.tail_r2, pair.tail_rate)
    with pytest.raises(HartreeError) as exc:
        decompose_perturbation(pair.Y_plus, bad, system)
    assert exc.value.code == "unnormalized-pair"


# potential and remainder

def test_remainder_at_zero(gs):
    z = RadialField(gs.grid, np.zeros(gs.grid.n, dtype=complex))
    assert np.all(remainder_R(z, gs.W, gs.kernel).values == 0)


def test_remainder_is_quadratic(gs, fields):
    h = fields[0]
    ratios = [_wnorm(remainder_R(h * eps, gs.W, gs.kernel).values, gs.grid) / eps ** 2
              for eps in (1e-2, 1e-3, 1e-4)]
    assert abs(ratios[1] / ratios[2] - 1.0) < abs(ratios[0] / ratios[1] - 1.0)
    assert abs(ratios[1] / ratios[2] - 1.0) <= 1e-2


def test_nonlinearity_linearizes_to_potential(gs, fields):
    h = fields[1]
    vh = potential_V(h, gs.W, gs.kernel).values
    scale = _wnorm(vh, gs.grid)
    errs = []
    for eps in (1e-3, 1e-4, 1e-5):
        u = gs.W.values + eps * h.values
        # nonlinearity N(u) = (K_4 |u|^2) u; its derivative at W is -V
        nu = gs.kernel.apply(np.abs(u) ** 2).real * u
        nw = gs.kernel.apply(gs.W.values.real ** 2).real * gs.W.values
        errs.append(_wnorm((nu - nw) / eps + vh, gs.grid) / scale)
    # first-order consistency: the defect is 1e-6 + C eps with C read off the largest eps
    c = errs[0] / 1e-3
    for eps, err in zip((1e-3, 1e-4, 1e-5), errs):
        assert err <= 1e-6 + 1.1 * c * eps
    assert errs[-1] <= 1e-3


def test_full_equation_linearization(gs, system, fields):
    # i(Lap u + K|u|^2 u) at W + eps h minus its value at W equals -eps L h + O(eps^2)
    h = fields[2]
    eps = 1e-5
    w = gs.W
    diff = (nonlinear_rhs(w + h * eps, gs.kernel).values - nonlinear_rhs(w, gs.kernel).values) / eps
    lh = system.generator(h).values
    assert _wnorm(diff + lh, gs.grid) / _wnorm(lh, gs.grid) <= 1e-4
