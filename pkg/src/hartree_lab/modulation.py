"""Phase/scale action and the orthogonality-based modulation fit around W.

The fit uses that the Hdot^1 pairing is invariant under the action:
<u_{theta,mu}, f> = <u, f_{-theta,1/mu}>.  Every quantity the Newton
iteration needs is therefore a pairing of the given samples of u with
rescaled copies of W and its scaling derivatives, which are known in
closed form; no interpolation of u enters the orthogonality conditions.
"""

from dataclasses import dataclass

import numpy as np

from .errors import HartreeError
from .ground_state import GroundState
from .radial_core import RadialField, resample, stiffness_matrix, values_of

MODULE = "modulation"


def scale_phase_apply(u: RadialField, theta: float, mu: float) -> RadialField:
    """u_{theta,mu}(r) = e^{i theta} mu^{-(d-2)/2} u(r / mu).

    Interpolation is cubic in ln r on r^{(d-2)/2} u, with the r^{-(d-2)}
    tail law outside the grid.  Scales shifting the grid by more than a
    quarter of its log-span are refused.
    """
    grid = u.grid
    if not mu > 0:
        raise HartreeError(MODULE, "scale-out-of-range", f"mu={mu}")
    span = np.log(grid.r_max / grid.r_min)
    if abs(np.log(mu)) > 0.25 * span:
        raise HartreeError(MODULE, "scale-out-of-range", f"|ln mu| = {abs(np.log(mu)):.2f} > {0.25 * span:.2f}")
    if theta == 0 and mu == 1:
        return u.copy()
    p = 0.5 * (grid.d - 2)
    vals = resample(u, grid.nodes / mu) * mu ** (-p)
    return RadialField(grid, np.exp(1j * theta) * vals)


def scaled_profiles(ground: GroundState, mu: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(W_mu, W~_mu, (G W~)_mu) with G = (d-2)/2 + r d/dr and
    f_mu(r) = mu^{-(d-2)/2} f(r/mu).  Since W~ = G W, these are W_mu and
    its first two derivatives in -ln mu.
    """
    d = ground.grid.d
    p = 0.5 * (d - 2)
    x = ground.grid.nodes / mu
    x2 = x * x
    a = (1.0 + x2)
    w = a ** (-p)
    wt = p * (1.0 - x2) * a ** (-p - 1.0)
    # G applied to W~: p W~ + x W~'
    dwt = p * (-2.0 * x * a ** (-p - 1.0) - 2.0 * (p + 1.0) * x * (1.0 - x2) * a ** (-p - 2.0))
    gg = p * wt + x * dwt
    f = ground.c0 * mu ** (-p)
    return f * w, f * wt, f * gg


def ground_state_scaled(ground: GroundState, theta: float, mu: float) -> RadialField:
    """W_{theta,mu} from the closed form (no interpolation)."""
    return RadialField(ground.grid, np.exp(1j * theta) * scaled_profiles(ground, mu)[0])


@dataclass
class ModulationFit:
    theta: float
    mu: float
    alpha: float
    h: RadialField
    delta: float
    orthogonality: tuple[float, float]
    iterations: int

    def summary(self) -> dict:
        return {"theta": self.theta, "mu": self.mu, "alpha": self.alpha, "delta": self.delta,
                "orth_iW": self.orthogonality[0], "orth_Wtilde": self.orthogonality[1],
                "iterations": self.iterations}


def _pairings(su: np.ndarray, ground: GroundState, lam: float):
    # complex pairings a = int grad u . grad f for f in (W_mu, W~_mu, G^2 W_mu), mu = 1/e^{lam}
    # the scale of the comparison profile is 1/mu because <u_{th,mu}, f> = <u, f_{-th,1/mu}>
    w, wt, gg = scaled_profiles(ground, np.exp(-lam))
    return su @ w, su @ wt, su @ gg


def _equations(theta, lam, su, ground):
    # F(theta, lam) = Re(e^{i theta} a(lam)) is the overlap <u_{theta,mu}, W>;
    # its gradient gives the two orthogonality conditions
    a, b, c = _pairings(su, ground, lam)
    e = np.exp(1j * theta)
    # d/d lam of f_{1/mu} with mu = e^{lam} is (G f)_{1/mu}: a' = b, b' = c
    j = np.array([-(e * a).imag, -(e * b).real])
    jac = np.array([[-(e * a).real, -(e * b).imag],
                    [(e * b).imag, -(e * c).real]])
    return j, jac, (e * a).real


def fit_modulation(u, ground: GroundState, delta0: float | None = None,
                   max_iter: int = 8, tol: float = 1e-13) -> ModulationFit:
    """(theta, mu) with u_{theta,mu} Hdot^1-orthogonal to iW and W~.

    A 16 x 16 scan over theta in [0, 2 pi), ln mu in [-1, 1] picks the start
    maximising the overlap with W, then damped Newton runs for at most
    ``max_iter`` steps.  Raises ``no-convergence`` outside the basin
    delta(u) < delta0 (default 0.3 |grad W|^2) or when Newton stalls.
    """
    grid = ground.grid
    uv = values_of(u, grid).astype(complex)
    s = stiffness_matrix(grid)
    su = s @ uv  # symmetric S: <u, f> pairings become su @ f
    g2 = ground.grad_norm_sq
    grad_u = float(np.real(np.vdot(uv, su)))
    delta = abs(grad_u - g2)
    delta0 = 0.3 * g2 if delta0 is None else delta0
    if delta >= delta0:
        raise HartreeError(MODULE, "no-convergence", f"delta={delta:.3e} outside basin {delta0:.3e}")
    thetas = np.arange(16) * 2 * np.pi / 16
    lams = np.linspace(-1.0, 1.0, 16)
    best = None
    for lam in lams:
        a = _pairings(su, ground, lam)[0]
        for th in thetas:
            val = (np.exp(1j * th) * a).real
            if best is None or val > best[0]:
                best = (val, th, lam)
    _, th, lam = best
    scale = np.sqrt(g2 * max(grad_u, 1e-300))
    it = 0
    j, jac, _ = _equations(th, lam, su, ground)
    while it < max_iter:
        if np.max(np.abs(j)) <= tol * scale:
            break
        step = np.linalg.solve(jac, -j)
        t = 1.0
        while True:
            j_new, jac_new, _ = _equations(th + t * step[0], lam + t * step[1], su, ground)
            if np.linalg.norm(j_new) < np.linalg.norm(j) or t < 1e-3:
                break
            t *= 0.5
        th, lam = th + t * step[0], lam + t * step[1]
        j, jac = j_new, jac_new
        it += 1
    if np.max(np.abs(j)) > 1e-9 * scale:
        raise HartreeError(MODULE, "no-convergence", f"orthogonality residual {np.max(np.abs(j)):.3e}")
    th = float(np.mod(th, 2 * np.pi))
    mu = float(np.exp(lam))
    _, _, overlap = _equations(th, lam, su, ground)
    alpha = overlap / g2 - 1.0
    moved = scale_phase_apply(RadialField(grid, uv), th, mu)
    h = RadialField(grid, moved.values - (1.0 + alpha) * ground.W.values)
    norm_u = np.sqrt(max(grad_u, 1e-300))
    orth = (abs(j[0]) / norm_u, abs(j[1]) / norm_u)
    return ModulationFit(th, mu, float(alpha), h, delta, orth, it)
