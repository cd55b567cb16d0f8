"""The explicit ground state W, its generating modes and the Kelvin-transform objects."""

from dataclasses import dataclass

import numpy as np

from .errors import HartreeError
from .radial_core import (NonlocalKernelMatrix, RadialField, RadialGrid, apply_laplacian,
                          energy, h1_inner, quartic_term, resample, values_of)

MODULE = "ground-state"


@dataclass(eq=False)
class GroundState:
    grid: RadialGrid
    kernel: NonlocalKernelMatrix
    c0: float
    I_d: float
    W: RadialField
    Wtilde: RadialField
    residual: float
    grad_norm_sq: float
    quartic: float
    energy: float

    def summary(self) -> dict:
        return {"c0": self.c0, "I_d": self.I_d, "residual": self.residual,
                "grad_norm_sq": self.grad_norm_sq, "quartic": self.quartic,
                "energy": self.energy}


def talenti_profile(r, d: int) -> np.ndarray:
    return (1.0 + np.asarray(r) ** 2) ** (-(d - 2) / 2.0)


def elliptic_residual(W, kernel: NonlocalKernelMatrix) -> float:
    """sup |-Lap W - (K4 W^2) W| / sup |Lap W|."""
    w = values_of(W, kernel.grid).real
    lap = apply_laplacian(RadialField(kernel.grid, w)).real
    res = -lap - kernel.apply(w * w) * w
    return float(np.max(np.abs(res)) / np.max(np.abs(lap)))


def potential_at_origin(kernel: NonlocalKernelMatrix, g) -> float:
    """(K g)(0), extrapolated in r^2 from the second to fourth nodes.

    The first node is skipped: its row carries the capped weight and is
    slightly less accurate than the rest.
    """
    r = kernel.grid.nodes[1:4]
    v = kernel.apply(g)[1:4].real
    x = r * r
    # quadratic Lagrange extrapolation in x = r^2 to x = 0
    l0 = x[1] * x[2] / ((x[0] - x[1]) * (x[0] - x[2]))
    l1 = x[0] * x[2] / ((x[1] - x[0]) * (x[1] - x[2]))
    l2 = x[0] * x[1] / ((x[2] - x[0]) * (x[2] - x[1]))
    return float(l0 * v[0] + l1 * v[1] + l2 * v[2])


def calibrate_ground_state(grid: RadialGrid, kernel: NonlocalKernelMatrix,
                           max_residual: float | None = 1e-4) -> GroundState:
    """W = c0 (1 + r^2)^{-(d-2)/2} with c0^2 = d(d-2) / I_d and I_d measured.

    Raises ``residual-too-large`` when the elliptic residual exceeds
    ``max_residual`` (pass None to accept any grid).
    """
    if kernel.grid is not grid or kernel.gamma != 4:
        raise HartreeError(MODULE, "calibration-missing", "needs the gamma = 4 kernel on this grid")
    d, r = grid.d, grid.nodes
    p = talenti_profile(r, d)
    I_d = potential_at_origin(kernel, p * p)
    c0 = float(np.sqrt(d * (d - 2) / I_d))
    w = c0 * p
    wt = c0 * (d - 2) / 2.0 * (1.0 - r * r) * (1.0 + r * r) ** (-d / 2.0)
    W = RadialField(grid, w)
    res = elliptic_residual(W, kernel)
    if max_residual is not None and res > max_residual:
        raise HartreeError(MODULE, "residual-too-large",
                           f"elliptic residual {res:.3e} > {max_residual:.1e}; refine the grid")
    g2 = h1_inner(W, W)
    return GroundState(grid, kernel, c0, I_d, W, RadialField(grid, wt), res, g2,
                       quartic_term(W, kernel), energy(W, kernel))


def kelvin_transform(u: RadialField) -> RadialField:
    """(K u)(r) = r^{-(d-2)} u(1/r), sampled back on the same grid."""
    grid = u.grid
    if not grid.r_min <= 1.0 <= grid.r_max:
        raise HartreeError(MODULE, "insufficient-span", "grid does not contain r = 1")
    r = grid.nodes
    vals = resample(u, 1.0 / r) * r ** (-(grid.d - 2))
    return RadialField(grid, vals)


@dataclass(eq=False)
class IntegralPair:
    """(omega, v) with the residuals of omega = c K_{d-2}(omega v), v = K_4 omega^2.

    ``constant`` is the best-fit c; for -Lap omega = omega v it equals
    1 / ((d-2)|S^{d-1}|).
    """

    omega: RadialField
    v: RadialField
    residual_first: float
    residual_second: float
    constant: float

    def __iter__(self):
        return iter((self.residual_first, self.residual_second))


def integral_system_residual(omega, v, kernel4: NonlocalKernelMatrix,
                             kernel_newton: NonlocalKernelMatrix) -> IntegralPair:
    grid = kernel4.grid
    if kernel_newton.grid is not grid or kernel_newton.gamma != grid.d - 2 or kernel4.gamma != 4:
        raise HartreeError(MODULE, "kernel-grid-mismatch")
    om = values_of(omega, grid).real
    vv = values_of(v, grid).real
    k2 = kernel4.apply(om * om).real
    den2 = np.max(np.abs(vv))
    r2 = float(np.max(np.abs(vv - k2)) / den2) if den2 > 0 else float(np.max(np.abs(k2)))
    newton = kernel_newton.apply(om * vv).real
    wts = grid.weights
    nn = wts @ (newton * newton)
    c = float(wts @ (om * newton) / nn) if nn > 0 else 0.0
    den1 = np.max(np.abs(om))
    diff = om - c * newton
    r1 = float(np.max(np.abs(diff)) / den1) if den1 > 0 else float(np.max(np.abs(diff)))
    return IntegralPair(RadialField(grid, om), RadialField(grid, vv), r1, r2, c)


@dataclass
class TailFit:
    value: float
    slope: float
    fit_residual: float
    fast_decay: bool


def tail_asymptotics(u, window: tuple[float, float] | None = None,
                     tail_power: float | None = None) -> TailFit:
    """Limit of r^{d-2} u(r) from a log-log least-squares fit on the outer decade.

    The fitted line is evaluated at the outer end of the window.  A slope
    below -1/2 (decay clearly faster than r^{-(d-2)}) returns 0 with the
    fast-decay flag.
    """
    grid = u.grid
    p = grid.d - 2 if tail_power is None else tail_power
    lo, hi = window if window is not None else (grid.r_max / 10.0, grid.r_max)
    sel = (grid.nodes >= lo) & (grid.nodes <= hi)
    r = grid.nodes[sel]
    f = values_of(u).real[sel]
    if np.any(f < 0):
        raise HartreeError(MODULE, "nonpositive-tail")
    pos = f > 0
    if pos.sum() < 3:
        return TailFit(0.0, -np.inf, 0.0, True)
    x = np.log(r[pos])
    y = np.log(r[pos] ** p * f[pos])
    slope, icpt = np.polyfit(x, y, 1)
    fit = icpt + slope * x
    resid = float(np.sqrt(np.mean((y - fit) ** 2)))
    if slope < -0.5 or pos.sum() < sel.sum():
        return TailFit(0.0, float(slope), resid, True)
    return TailFit(float(np.exp(icpt + slope * np.log(r[pos][-1]))), float(slope), resid, False)
