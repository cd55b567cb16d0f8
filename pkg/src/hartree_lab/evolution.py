"""Time integration of i u_t + Lap u + (K_4|u|^2) u = 0 on the radial grid.

Strang splitting: half a step of the exact nonlocal phase (the potential
K_4|u|^2 is real and depends on |u| only, so the phase step is exact and
pointwise unitary), a full Crank-Nicolson step of the Laplacian, and another
half phase.  In the variables y = w^{1/2} u the Laplacian is a real symmetric
matrix, so the CN step is unitary in the weighted L^2 norm.
"""

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import Polynomial
from scipy import sparse
from scipy.interpolate import CubicSpline
from scipy.sparse.linalg import splu

from .errors import HartreeError
from .ground_state import GroundState
from .radial_core import (NonlocalKernelMatrix, RadialField, energy,
                          stiffness_matrix, values_of, weighted_stiffness)

MODULE = "evolution"

FLAGS = ("trapped", "trapped-below", "trapped-above", "blowup-suspected", "dispersing", "undetermined")
COLUMNS = ("t", "E", "mass", "grad_norm_sq", "delta", "theta", "mu", "alpha", "V_R", "dtV_R",
           "d2tV_R", "A_R", "alpha_plus", "alpha_minus", "beta", "gamma", "flag")


# ---------------------------------------------------------------------------
# integrator

class CrankNicolson:
    """Factorised (I + i dt/2 B) with B = w^{-1/2} S w^{-1/2}."""

    def __init__(self, grid, dt: float):
        self.grid = grid
        self.dt = dt
        self.root = np.sqrt(grid.weights)
        s = stiffness_matrix(grid)
        inv = sparse.diags(1.0 / self.root)
        self.b = (inv @ s @ inv).tocsc()
        eye = sparse.identity(grid.n, format="csc")
        try:
            self.lu = splu((eye + 0.5j * dt * self.b).tocsc())
        except RuntimeError as exc:
            raise HartreeError(MODULE, "linear-solve-failure", str(exc)) from exc

    def __call__(self, u: np.ndarray) -> np.ndarray:
        y = self.root * u
        rhs = y - 0.5j * self.dt * (self.b @ y)
        out = self.lu.solve(rhs)
        if not np.all(np.isfinite(out)):
            raise HartreeError(MODULE, "linear-solve-failure", "non-finite solution")
        return out / self.root


def _phase(u: np.ndarray, kernel: NonlocalKernelMatrix, tau: float) -> np.ndarray:
    pot = kernel.apply(np.abs(u) ** 2).real
    return u * np.exp(1j * tau * pot)


def step(u, dt: float, kernel: NonlocalKernelMatrix, propagator: CrankNicolson | None = None) -> RadialField:
    """One Strang step: half phase, CN, half phase."""
    grid = kernel.grid
    if propagator is None or propagator.dt != dt or propagator.grid is not grid:
        propagator = CrankNicolson(grid, dt)
    v = values_of(u, grid).astype(complex)
    v = _phase(v, kernel, 0.5 * dt)
    v = propagator(v)
    v = _phase(v, kernel, 0.5 * dt)
    return RadialField(grid, v)


def integrate_steps(u: np.ndarray, kernel, propagator: CrankNicolson, count: int) -> np.ndarray:
    """``count`` Strang steps with the adjacent half phases merged."""
    if count <= 0:
        return u
    dt = propagator.dt
    u = _phase(u, kernel, 0.5 * dt)
    for i in range(count):
        u = propagator(u)
        u = _phase(u, kernel, dt if i < count - 1 else 0.5 * dt)
    return u


# ---------------------------------------------------------------------------
# virial profile

def _profile_polys():
    # phi'(r) = 2 r (1 - S(r - 1)) on [1, 2] with the C^3 septic step S
    x = Polynomial([0.0, 1.0])
    step_poly = x ** 4 * (35.0 - 84.0 * x + 70.0 * x ** 2 - 20.0 * x ** 3)
    d1 = 2.0 * (1.0 + x) * (1.0 - step_poly)
    d0 = 1.0 + d1.integ()
    return d0, d1, d1.deriv(), d1.deriv(2), d1.deriv(3)


_PHI = _profile_polys()


def phi_derivatives(r) -> tuple[np.ndarray, ...]:
    """(phi, phi', phi'', phi''', phi'''') of the unit profile.

    phi = r^2 on [0, 1], a C^4 transition on [1, 2] with phi'' <= 2, and the
    constant phi(2) beyond (all derivatives vanish there).
    """
    r = np.asarray(r, dtype=float)
    out = [r * r, 2.0 * r, np.full_like(r, 2.0), np.zeros_like(r), np.zeros_like(r)]
    mid = (r > 1.0) & (r < 2.0)
    far = r >= 2.0
    x = r[mid] - 1.0
    for k in range(5):
        out[k] = out[k].copy()
        out[k][mid] = _PHI[k](x)
        out[k][far] = _PHI[0](1.0) if k == 0 else 0.0
    return tuple(out)


@dataclass(eq=False)
class VirialProfile:
    """phi_R(r) = R^2 phi(r/R) sampled on a grid."""

    R: float
    grid: object
    phi: np.ndarray
    dphi: np.ndarray
    d2phi: np.ndarray
    bilap: np.ndarray
    bilap_weights: np.ndarray

    @classmethod
    def build(cls, grid, R: float) -> "VirialProfile":
        if not grid.r_min < R <= 0.5 * grid.r_max:
            raise HartreeError(MODULE, "radius-out-of-range", f"R={R}")
        d = grid.d
        x = grid.nodes / R
        p0, p1, p2, p3, p4 = phi_derivatives(x)
        # radial bi-Laplacian of the unit profile, then scaled: Delta^2 phi_R = R^{-2} (Delta^2 phi)(r/R)
        f1 = p3 + (d - 1) * (p2 / x - p1 / x ** 2)
        f2 = p4 + (d - 1) * (p3 / x - 2 * p2 / x ** 2 + 2 * p1 / x ** 3)
        bilap = (f2 + (d - 1) * f1 / x) / R ** 2
        return cls(R, grid, R * R * p0, R * p1, p2, bilap, _bilap_weights(grid, R))

    def max_second_derivative(self, samples: int = 20001) -> float:
        x = np.linspace(0.0, 3.0, samples)
        return float(np.max(phi_derivatives(x)[2]))


def _bilap_unit(x, d):
    _, p1, p2, p3, p4 = phi_derivatives(x)
    f1 = p3 + (d - 1) * (p2 / x - p1 / x ** 2)
    f2 = p4 + (d - 1) * (p3 / x - 2 * p2 / x ** 2 + 2 * p1 / x ** 3)
    return f2 + (d - 1) * f1 / x


def _bilap_weights(grid, R: float, order: int = 6) -> np.ndarray:
    # Delta^2 phi_R vanishes off [R, 2R] and has kinks at both ends, where the
    # node rule is only second order.  Integrate the window cell by cell in
    # s = ln r against the cubic spline of the density instead, and fold the
    # spline into one weight per node.
    s = np.log(grid.nodes)
    cuts = np.concatenate(([np.log(R)], s[(s > np.log(R)) & (s < np.log(2 * R))], [np.log(2 * R)]))
    gx, gw = np.polynomial.legendre.leggauss(order)
    mid, half = 0.5 * (cuts[1:] + cuts[:-1]), 0.5 * (cuts[1:] - cuts[:-1])
    sq = (mid[:, None] + half[:, None] * gx[None, :]).ravel()
    wq = (half[:, None] * gw[None, :]).ravel()
    rq = np.exp(sq)
    wq = wq * grid.area * rq ** grid.d * _bilap_unit(rq / R, grid.d) / R ** 2
    # cubic spline cardinal functions decay like 0.27^k, so a 30 node margin
    # around the window captures the weights to round-off
    lo = max(int(np.searchsorted(s, np.log(R))) - 30, 0)
    hi = min(int(np.searchsorted(s, np.log(2 * R))) + 30, grid.n)
    out = np.zeros(grid.n)
    basis = CubicSpline(s, np.eye(grid.n)[:, lo:hi], axis=0)(sq)
    out[lo:hi] = wq @ basis
    return out


def virial_value(u, profile: VirialProfile) -> float:
    v = values_of(u, profile.grid)
    return float(profile.grid.weights @ (profile.phi * np.abs(v) ** 2))


def virial_first(u, profile: VirialProfile) -> float:
    """d/dt V_R = 2 Im int conj(u) grad u . grad phi_R.

    Evaluated in the summation-by-parts form 2 Im <phi_R u, -Lap u>, the
    exact time derivative of the semi-discrete flow.
    """
    grid = profile.grid
    v = values_of(u, grid).astype(complex)
    s = stiffness_matrix(grid)
    return float(2.0 * np.imag(np.vdot(profile.phi * v, s @ v)))


def virial_second(u, profile: VirialProfile, kernel: NonlocalKernelMatrix) -> tuple[float, float]:
    """(d^2/dt^2 V_R, A_R(u)).

    d^2 V_R = 4 int phi''(r/R) |grad u|^2 - int Delta^2 phi_R |u|^2
              + 4 int psi |u|^2 r d/dr (K_4 |u|^2),   psi = phi_R' / (2r),
    the last term being the two vector-weighted double integrals written
    with the identity x . grad_x |x-y|^{-4} = -4 x.(x-y) |x-y|^{-6}.
    A_R is this minus 8 |grad u|^2 - 8 int int |u|^2 |u|^2 / |x-y|^4.
    """
    grid = profile.grid
    R = profile.R
    v = values_of(u, grid).astype(complex)
    w = grid.weights
    rho = np.abs(v) ** 2
    grad_w = weighted_stiffness(grid, lambda r: phi_derivatives(r / R)[2])
    local = 4.0 * float(np.real(np.vdot(v, grad_w @ v)))
    bil = -float(profile.bilap_weights @ rho)
    pot = kernel.apply(rho).real
    s = np.log(grid.nodes)
    rdp = CubicSpline(s, pot)(s, 1)
    psi = profile.dphi / (2.0 * grid.nodes)
    nonlocal_ = 4.0 * float(w @ (psi * rho * rdp))
    second = local + bil + nonlocal_
    g2 = float(np.real(np.vdot(v, stiffness_matrix(grid) @ v)))
    q = float(w @ (rho * pot))
    return second, second - 8.0 * g2 + 8.0 * q


# ---------------------------------------------------------------------------
# trajectories

@dataclass
class EvolutionConfig:
    dt: float = 1e-4
    T: float = 1.0
    cadence: int = 100
    virial_radii: tuple = (10.0,)
    direction: int = 1
    boundary_tolerance: float = 1e-6
    growth_factor: float = 5.0
    dispersal_radius: float = 10.0
    dispersal_fraction: float = 0.1
    threshold_tolerance: float = 1e-5
    modulate: bool = True

    def validate(self, grid=None):
        if not self.dt > 0:
            raise HartreeError(MODULE, "config-invalid", "dt must be positive")
        if not self.T >= self.dt:
            raise HartreeError(MODULE, "config-invalid", "T must be at least dt")
        if self.cadence < 1:
            raise HartreeError(MODULE, "config-invalid", "cadence must be >= 1")
        if self.direction not in (1, -1):
            raise HartreeError(MODULE, "config-invalid", "direction must be +1 or -1")
        if grid is not None:
            for R in self.virial_radii:
                if not grid.r_min < R <= 0.5 * grid.r_max:
                    raise HartreeError(MODULE, "config-invalid", f"virial radius {R} outside grid span/2")


@dataclass
class TrajectoryRecord:
    rows: list = field(default_factory=list)
    terminal: str = ""
    energy_drift: float = 0.0
    mass_drift: float = 0.0
    final: RadialField | None = None

    def column(self, name: str) -> np.ndarray:
        if name == "flag":
            return np.array([r["flag"] for r in self.rows])
        return np.array([r[name] for r in self.rows], dtype=float)

    @property
    def times(self) -> np.ndarray:
        return self.column("t")

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(COLUMNS)
        for row in self.rows:
            wr.writerow([row["flag"] if c == "flag" else repr(float(row[c])) for c in COLUMNS])
        return buf.getvalue()


def _local_h1(grid, v, radius):
    if ("ball-stiffness", radius) not in grid._ops:
        grid._ops[("ball-stiffness", radius)] = weighted_stiffness(
            grid, lambda r: (r <= radius).astype(float))
    return float(np.real(np.vdot(v, grid._ops[("ball-stiffness", radius)] @ v)))


def _concentration_radius(grid, v):
    # radius enclosing half of |grad u|^2, from the cumulative flux energy
    dsp, a, half, _ = grid._ops[("stiffness-factors", "harmonic")]
    e = a * np.abs(dsp @ v) ** 2
    c = np.cumsum(e)
    return float(half[np.searchsorted(c, 0.5 * c[-1])])


def evolve(u0, ground: GroundState, config: EvolutionConfig | None = None,
           pair=None, system=None) -> TrajectoryRecord:
    """Integrate from u0 and record diagnostics every ``cadence`` steps.

    ``direction = -1`` runs backward in time through time reversal: the
    forward run of conj(u0) is recorded with t -> -t and u -> conj(u).
    With an eigenpair and linearized system the projection coefficients of
    the modulated perturbation are recorded too.
    """
    from .linearized import decompose_perturbation
    from .modulation import fit_modulation

    config = EvolutionConfig() if config is None else config
    grid = ground.grid
    config.validate(grid)
    kernel = ground.kernel
    g2w = ground.grad_norm_sq
    v = values_of(u0, grid).astype(complex)
    if config.direction == -1:
        v = np.conj(v)
    prop = CrankNicolson(grid, config.dt)
    profiles = [VirialProfile.build(grid, R) for R in config.virial_radii]
    s = stiffness_matrix(grid)
    rec = TrajectoryRecord()
    n_steps = int(round(config.T / config.dt))
    e0 = energy(RadialField(grid, v), kernel)
    m0 = float(grid.weights @ np.abs(v) ** 2)
    g0 = float(np.real(np.vdot(v, s @ v)))
    ball0 = _local_h1(grid, v, config.dispersal_radius)
    conc0 = _concentration_radius(grid, v)
    res_scale = max(10.0 * math.sqrt(config.dt), grid.nodes[min(grid.n - 1, 48)])
    total_h1 = max(g0, 1e-300)
    sign0 = None
    ball_hist = []
    done = 0
    while True:
        t = done * config.dt
        vv = np.conj(v) if config.direction == -1 else v
        field_now = RadialField(grid, vv)
        g2 = float(np.real(np.vdot(v, s @ v)))
        mass = float(grid.weights @ np.abs(v) ** 2)
        en = energy(field_now, kernel)
        diff = g2 - g2w
        row = {"t": config.direction * t, "E": en, "mass": mass, "grad_norm_sq": g2, "delta": abs(diff)}
        for key in ("theta", "mu", "alpha", "alpha_plus", "alpha_minus", "beta", "gamma"):
            row[key] = float("nan")
        if config.modulate:
            try:
                fit = fit_modulation(field_now, ground)
                row.update(theta=fit.theta, mu=fit.mu, alpha=fit.alpha)
                if pair is not None and system is not None:
                    from .modulation import scale_phase_apply
                    moved = scale_phase_apply(field_now, fit.theta, fit.mu)
                    dec = decompose_perturbation(moved.values - ground.W.values, pair, system)
                    row.update(alpha_plus=dec.alpha_plus, alpha_minus=dec.alpha_minus,
                               beta=dec.beta, gamma=dec.gamma)
            except HartreeError:
                pass
        prof = profiles[0]
        row["V_R"] = virial_value(field_now, prof)
        row["dtV_R"] = virial_first(field_now, prof)
        row["d2tV_R"], row["A_R"] = virial_second(field_now, prof, kernel)
        # classification of this sample
        flag = "undetermined"
        if abs(diff) <= config.threshold_tolerance * g2w:
            flag = "trapped"
        else:
            flag = "trapped-below" if diff < 0 else "trapped-above"
            sgn = np.sign(diff)
            if sign0 is None:
                sign0 = sgn
        ball = _local_h1(grid, v, config.dispersal_radius)
        ball_hist.append(ball)
        conc = _concentration_radius(grid, v)
        terminal = ""
        if g0 == 0.0:
            flag, terminal = "dispersing", "dispersed"
        elif g2 >= config.growth_factor * g0 and conc <= res_scale:
            flag, terminal = "blowup-suspected", "resolution-exhausted"
        elif (ball0 > 0 and ball < config.dispersal_fraction * ball0
              and len(ball_hist) >= 3 and ball_hist[-1] <= ball_hist[-2] <= ball_hist[-3]):
            flag, terminal = "dispersing", "dispersed"
        outer = g2 - _local_h1(grid, v, 0.5 * grid.r_max)
        if outer > config.boundary_tolerance * total_h1 and not terminal:
            flag, terminal = "undetermined", "boundary-contamination"
        if not np.isfinite(g2):
            flag, terminal = "blowup-suspected", "non-finite"
        row["flag"] = flag
        rec.rows.append(row)
        if terminal or done >= n_steps:
            rec.terminal = terminal
            break
        count = min(config.cadence, n_steps - done)
        v = integrate_steps(v, kernel, prop, count)
        done += count
    vv = np.conj(v) if config.direction == -1 else v
    rec.final = RadialField(grid, vv)
    es = rec.column("E")
    ms = rec.column("mass")
    rec.energy_drift = float(np.max(np.abs(es - e0)) / max(abs(e0), 1e-300))
    rec.mass_drift = float(np.max(np.abs(ms - m0)) / max(m0, 1e-300))
    return rec


def classify_trajectory(record: TrajectoryRecord) -> str:
    """Overall status of a run from its per-sample flags.

    A terminal flag wins; otherwise the run is trapped on the side of the
    ground state it kept, ``trapped`` if it never left the threshold, and
    undetermined if the sign of |grad u|^2 - |grad W|^2 changed.
    """
    if not record.rows:
        raise HartreeError(MODULE, "empty-record")
    flags = [r["flag"] for r in record.rows]
    last = flags[-1]
    if last in ("blowup-suspected", "dispersing"):
        return last
    if record.terminal == "boundary-contamination":
        return "undetermined"
    sides = {f for f in flags if f in ("trapped-below", "trapped-above")}
    if len(sides) > 1:
        return "undetermined"
    if sides:
        return sides.pop()
    return "trapped"


def sign_flips(record: TrajectoryRecord) -> int:
    """Number of sign changes of |grad u|^2 - |grad W|^2 before a terminal flag."""
    flags = [r["flag"] for r in record.rows if r["flag"] in ("trapped-below", "trapped-above")]
    return sum(1 for a, b in zip(flags, flags[1:]) if a != b)
