import numpy as np
import pytest

from hartree_lab.errors import HartreeError
from hartree_lab.modulation import fit_modulation, ground_state_scaled, scale_phase_apply, scaled_profiles
from hartree_lab.radial_core import RadialField, h1_inner


@pytest.fixture(scope="module")
def bump(gs):
    r = gs.grid.nodes
    return RadialField(gs.grid, (1.0 + 0.5j) * r ** 2 * np.exp(-r ** 2 / 4.0))


def test_identity_is_exact(bump):
    assert np.array_equal(scale_phase_apply(bump, 0.0, 1.0).values, bump.values)


def test_norm_invariance(gs, bump):
    moved = scale_phase_apply(bump, 2.1, 0.7)
    assert h1_inner(moved, moved) == pytest.approx(h1_inner(bump, bump), rel=1e-4)


def test_group_law(gs, bump):
    twice = scale_phase_apply(scale_phase_apply(bump, 0.4, 1.3), 0.9, 0.8)
    once = scale_phase_apply(bump, 1.3, 1.04)
    sel = gs.grid.nodes <= 100.0
    assert np.max(np.abs(twice.values - once.values)[sel]) <= 1e-6 * np.max(np.abs(bump.values))


def test_scaled_ground_state_matches_action(gs):
    direct = ground_state_scaled(gs, 0.5, 1.7).values
    moved = scale_phase_apply(gs.W, 0.5, 1.7).values
    assert np.max(np.abs(direct - moved)) <= 1e-6 * gs.c0


def test_scaled_profiles_at_unit_scale(gs):
    w, wt, _ = scaled_profiles(gs, 1.0)
    assert np.allclose(w, gs.W.values.real, rtol=0, atol=1e-14)
    assert np.allclose(wt, gs.Wtilde.values.real, rtol=0, atol=1e-14)


def test_scale_out_of_range(bump):
    with pytest.raises(HartreeError) as exc:
        scale_phase_apply(bump, 0.0, 1e6)
    assert exc.value.code == "scale-out-of-range"
    with pytest.raises(HartreeError):
        scale_phase_apply(bump, 0.0, -1.0)


def test_fit_of_w_is_trivial(gs):
    fit = fit_modulation(gs.W, gs)
    assert abs(fit.theta) <= 1e-10 and abs(fit.mu - 1.0) <= 1e-10 and abs(fit.alpha) <= 1e-10


@pytest.mark.parametrize("theta0, mu0", [(0.9, 1.7), (-2.5, 0.6)])
def test_fit_recovers_inverse(gs, theta0, mu0):
    fit = fit_modulation(ground_state_scaled(gs, -theta0, 1.0 / mu0), gs)
    assert abs(np.angle(np.exp(1j * (fit.theta - theta0)))) <= 1e-8
    assert fit.mu == pytest.approx(mu0, rel=1e-8)


def test_fit_orthogonality(gs, pair):
    u = scale_phase_apply(RadialField(gs.grid, gs.W.values + 1e-2 * pair.Y1.values), 0.3, 1.2)
    fit = fit_modulation(u, gs)
    moved = scale_phase_apply(u, fit.theta, fit.mu)
    h = moved.values - (1.0 + fit.alpha) * gs.W.values
    iw = RadialField(gs.grid, 1j * gs.W.values)
    assert abs(h1_inner(RadialField(gs.grid, h), iw)) <= 1e-8 * gs.grad_norm_sq
    assert abs(h1_inner(RadialField(gs.grid, h), gs.Wtilde)) <= 1e-8 * gs.grad_norm_sq
    assert max(fit.orthogonality) <= 1e-8


def test_alpha_comparable_to_delta_first_order(gs, pair):
    # |alpha| |grad W|^2 / delta -> 1/2 as the perturbation shrinks
    vals = []
    for eps in (1e-4, 1e-3, 1e-2):
        u = scale_phase_apply(RadialField(gs.grid, gs.W.values + eps * pair.Y1.values), 0.3, 1.2)
        fit = fit_modulation(u, gs)
        vals.append(abs(fit.alpha) * gs.grad_norm_sq / fit.delta)
    assert vals == pytest.approx([0.5] * 3, rel=5e-3)


def test_fit_outside_basin(gs):
    with pytest.raises(HartreeError) as exc:
        fit_modulation(gs.W * 0.2, gs)
    assert exc.value.code == "no-convergence"
