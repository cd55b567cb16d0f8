"""Threshold solutions W^+- as a series in X = e^{-e0 t} around W.

With u = W + h the equation reads dt h + L h = R(h).  The ansatz
h = sum_j X^j Z_j turns it into the triangular recursion

    (L - j e0) Z_j = [R(h)]_j,    Z_1 = a Y_+,

where [.]_j is the X^j coefficient.  R is quadratic plus cubic in h, so the
coefficients are found by convolving coefficient arrays; with k terms the
polynomial R(h) has degree 3k and every coefficient is kept.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sl

from .errors import HartreeError
from .evolution import (CrankNicolson, EvolutionConfig, TrajectoryRecord, classify_trajectory, evolve,
                        integrate_steps)
from .linearized import EigenPair, LinearizedSystem, remainder_R
from .radial_core import RadialField, energy

MODULE = "special-solutions"

# the series is trusted from X = e^{-1} on; the defect ladder is checked there
MIN_T0_E0 = 1.0


def _conv(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Product of two polynomials in X with array coefficients (axis 0 = power)."""
    out = np.zeros((p.shape[0] + q.shape[0] - 1,) + p.shape[1:], dtype=np.result_type(p, q))
    for i in range(p.shape[0]):
        out[i:i + q.shape[0]] += p[i] * q
    return out


def remainder_coefficients(coef: np.ndarray, W: np.ndarray, kernel) -> np.ndarray:
    """X-coefficients of R(h) for h = sum_j X^j coef[j] (coef[0] = 0).

    R(h) = i K(|h|^2)(W + h) + 2i K(W Re h) h; X is real, so |h|^2 is the
    product of h with its conjugate polynomial.
    """
    rho = _conv(coef, np.conj(coef)).real
    q = np.array([kernel.apply(c).real for c in rho])
    lin = np.array([kernel.apply(W * c.real).real for c in coef])
    out = np.zeros((3 * (coef.shape[0] - 1) + 1, coef.shape[1]), dtype=complex)
    out[: q.shape[0]] += 1j * q * W[None, :]
    qh = _conv(q.astype(complex), coef)
    out[: qh.shape[0]] += 1j * qh
    lh = _conv(lin.astype(complex), coef)
    out[: lh.shape[0]] += 2j * lh
    return out


@dataclass(eq=False)
class ExpansionSeries:
    """h = sum_{j=1}^k X^j Z_j with X = e^{-e0 t}.

    ``coefficients`` has k + 1 rows (row 0 is zero).  ``order_residuals[j-1]``
    is |(L - j e0) Z_j - [R(h)]_j| / |[R(h)]_j| (for j = 1 relative to
    |L Z_1|), in weighted L^2.  ``remainder`` holds all 3k + 1 X-coefficients
    of R(h) for the truncated series.
    """

    a: float
    k: int
    e0: float
    system: LinearizedSystem
    coefficients: np.ndarray
    order_residuals: list
    remainder: np.ndarray = field(repr=False)

    @property
    def grid(self):
        return self.system.grid

    @property
    def Z(self) -> list:
        return [RadialField(self.grid, c) for c in self.coefficients[1:]]

    def defect_coefficients(self) -> np.ndarray:
        """X-coefficients of dt h + L h - R(h) for the truncated series."""
        out = -self.remainder.copy()
        for j in range(1, self.k + 1):
            lz = self.system.generator(self.coefficients[j]).values
            out[j] += lz - j * self.e0 * self.coefficients[j]
        return out

    def perturbation(self, t: float) -> np.ndarray:
        x = np.exp(-self.e0 * t)
        return np.polynomial.polynomial.polyval(x, self.coefficients)

    def time_defect(self, t: float) -> float:
        """|dt h + L h - R(h)| / |dt h| at time t, evaluated directly in time."""
        x = np.exp(-self.e0 * t)
        grid = self.grid
        h = self.perturbation(t)
        dth = sum(-j * self.e0 * x ** j * self.coefficients[j] for j in range(1, self.k + 1))
        lh = self.system.generator(h).values
        rh = remainder_R(h, self.system.ground.W, self.system.kernel).values
        res = dth + lh - rh
        return _norm(res, grid) / max(_norm(dth, grid), 1e-300)


def _norm(v: np.ndarray, grid) -> float:
    return float(np.sqrt(grid.weights @ np.abs(v) ** 2))


def _resolvent_solve(system: LinearizedSystem, shift: float, rhs: np.ndarray) -> np.ndarray:
    """Solve (L - shift) z = rhs for complex z in the orthonormal variables."""
    grid = system.grid
    n = grid.n
    s = np.sqrt(grid.weights)
    mat = system.block_matrix() - shift * np.eye(2 * n)
    b = np.concatenate([s * rhs.real, s * rhs.imag])
    with warnings.catch_warnings():
        warnings.simplefilter("error", sl.LinAlgWarning)
        try:
            x = sl.solve(mat, b)
        except (sl.LinAlgWarning, np.linalg.LinAlgError) as exc:
            raise HartreeError(MODULE, "resolvent-near-singular", f"shift {shift:.6g}: {exc}") from None
    return x[:n] / s + 1j * x[n:] / s


def build_expansion(a: float, k: int, system: LinearizedSystem, pair: EigenPair) -> ExpansionSeries:
    """Coefficients Z_1..Z_k of the threshold series with Z_1 = a Y_+.

    Raises ``resolvent-near-singular`` if j e0 is numerically an eigenvalue
    of the discrete generator for some 2 <= j <= k.
    """
    if k < 1:
        raise HartreeError(MODULE, "config-invalid", "k must be >= 1")
    grid = system.grid
    W = system.ground.W.values.real
    e0 = pair.e0
    coef = np.zeros((k + 1, grid.n), dtype=complex)
    coef[1] = a * pair.Y_plus.values
    lz = system.generator(coef[1]).values
    resid = [_norm(lz - e0 * coef[1], grid) / _norm(lz, grid) if a != 0 else 0.0]
    for j in range(2, k + 1):
        c = remainder_coefficients(coef[:j], W, system.kernel)[j]
        if not np.any(c):
            resid.append(0.0)
            continue
        coef[j] = _resolvent_solve(system, j * e0, c)
        lz = system.generator(coef[j]).values
        resid.append(_norm(lz - j * e0 * coef[j] - c, grid) / _norm(c, grid))
    rem = remainder_coefficients(coef, W, system.kernel)
    return ExpansionSeries(float(a), k, e0, system, coef, resid, rem)


def evaluate_approximation(series: ExpansionSeries, t: float) -> RadialField:
    """U(t) = W + sum_j e^{-j e0 t} Z_j."""
    return RadialField(series.grid, series.system.ground.W.values + series.perturbation(t))


def approximate_solution(a: float, system: LinearizedSystem, pair: EigenPair,
                         t0: float | None = None, k: int = 3) -> tuple[ExpansionSeries, RadialField]:
    """The series for amplitude ``a`` and its value U(t0) (t0 default 2/e0).

    Raises ``t0-too-small`` for t0 < 1/e0, where X = e^{-e0 t0} is too large
    for the truncated series.
    """
    t0 = 2.0 / pair.e0 if t0 is None else t0
    if t0 * pair.e0 < MIN_T0_E0:
        raise HartreeError(MODULE, "t0-too-small", f"e0 t0 = {t0 * pair.e0:.3f} < {MIN_T0_E0}")
    series = build_expansion(float(a), k, system, pair)
    return series, evaluate_approximation(series, t0)


def wpm_initial_data(sign: int, system: LinearizedSystem, pair: EigenPair,
                     t0: float | None = None, k: int = 3) -> RadialField:
    """Approximate W^+ (sign = +1) or W^- (sign = -1) at time t0 (default 2/e0)."""
    if sign not in (1, -1):
        raise HartreeError(MODULE, "config-invalid", "sign must be +1 or -1")
    return approximate_solution(float(sign), system, pair, t0, k)[1]


# the forward rate fit needs the defect along the growing direction, of size
# ~X(t0)^{k+1}, to stay below the decaying signal ~X(t0) e^{-e0 s} across the
# window; at k = 3 this holds over [0, 3/e0] from t0 = 3/e0 on
RATE_T0_E0 = 3.0


@dataclass
class ThresholdCheck:
    """Forward run of W^+-(t0): decay rates of delta(t) and of the Hdot^1
    distance to W, raw and after modulation, fitted over the whole window."""

    sign: int
    e0: float
    t0: float
    times: np.ndarray
    delta: np.ndarray
    distance: np.ndarray
    modulated_distance: np.ndarray
    rate: float
    distance_rate: float
    modulated_rate: float
    energy_gap: float
    gradient_gap: float
    sides: tuple

    @property
    def relative_error(self) -> float:
        return abs(self.rate - self.e0) / self.e0

    def summary(self) -> dict:
        return {"sign": self.sign, "e0": self.e0, "t0": self.t0, "rate": self.rate,
                "relative_error": self.relative_error, "distance_rate": self.distance_rate,
                "modulated_rate": self.modulated_rate, "energy_gap": self.energy_gap,
                "gradient_gap": self.gradient_gap, "sides": list(self.sides)}


def verify_threshold_convergence(sign: int, system: LinearizedSystem, pair: EigenPair,
                                 horizon: float | None = None, t0: float | None = None,
                                 k: int = 3, dt: float = 1e-4, samples: int = 40) -> ThresholdCheck:
    """Evolve W^+-(t0) forward over ``horizon`` (default 3/e0, t0 default
    3/e0) and fit log f(t) = c - rate t for f = delta = | |grad u|^2 - |grad W|^2 |
    and for the Hdot^1 distances to W.

    Raises ``left-basin`` if delta grows past twice its initial value or
    the modulation fit fails along the run.
    """
    from .modulation import fit_modulation, scale_phase_apply

    ground = system.ground
    grid = ground.grid
    e0 = pair.e0
    horizon = 3.0 / e0 if horizon is None else horizon
    t0 = RATE_T0_E0 / e0 if t0 is None else t0
    u0 = wpm_initial_data(sign, system, pair, t0=t0, k=k)
    steps = max(int(round(horizon / dt)), samples)
    per = max(steps // samples, 1)
    prop = CrankNicolson(grid, horizon / steps)
    s = system.stiffness
    W = ground.W.values
    v = u0.values.astype(complex)
    hnorm = lambda x: float(np.sqrt(max(np.real(np.vdot(x, s @ x)), 0.0)))
    times, delta, dist, mdist, sides = [], [], [], [], set()
    done = 0
    while True:
        diff = float(np.real(np.vdot(v, s @ v))) - ground.grad_norm_sq
        try:
            fit = fit_modulation(RadialField(grid, v), ground)
        except HartreeError as exc:
            raise HartreeError(MODULE, "left-basin", f"modulation lost at t={done * prop.dt:.4f}: {exc}") from None
        moved = scale_phase_apply(RadialField(grid, v), fit.theta, fit.mu).values
        times.append(done * prop.dt)
        delta.append(abs(diff))
        dist.append(hnorm(v - W))
        mdist.append(hnorm(moved - W))
        sides.add(int(np.sign(diff)))
        if delta[-1] > 2.0 * delta[0]:
            raise HartreeError(MODULE, "left-basin",
                               f"delta grew by {delta[-1] / delta[0]:.3g} at t={times[-1]:.4f}")
        if done >= steps:
            break
        count = min(per, steps - done)
        v = integrate_steps(v, ground.kernel, prop, count)
        done += count
    times = np.array(times)
    rates = [-float(np.polyfit(times, np.log(np.maximum(f, 1e-300)), 1)[0]) for f in (delta, dist, mdist)]
    return ThresholdCheck(sign, e0, float(t0), times, np.array(delta), np.array(dist), np.array(mdist),
                          rates[0], rates[1], rates[2],
                          (energy(u0, ground.kernel) - ground.energy) / ground.energy,
                          hnorm(u0.values) ** 2 - ground.grad_norm_sq, tuple(sorted(sides)))


def backward_status(sign: int, system: LinearizedSystem, pair: EigenPair,
                    config: EvolutionConfig, t0: float | None = None, k: int = 3) -> tuple[str, TrajectoryRecord]:
    """Run W^+-(t0) backward in time and classify the trajectory."""
    u0 = wpm_initial_data(sign, system, pair, t0=t0, k=k)
    cfg = EvolutionConfig(**{**config.__dict__, "direction": -1})
    rec = evolve(u0, system.ground, cfg)
    return classify_trajectory(rec), rec
