"""Radial grids, quadrature, the radial Laplacian and the nonlocal kernel.

Radial functions on R^d are sampled on a mesh r_1 < ... < r_N.  The weights
w_i realise the volume measure, sum_i w_i f(r_i) ~ |S^{d-1}| int f r^{d-1} dr,
and every operator is built to be self-adjoint in the weighted inner product
<f, g> = sum_i w_i f_i conj(g_i).
"""

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import sparse
from scipy.integrate import quad
from scipy.interpolate import CubicSpline
from scipy.linalg import lstsq
from scipy.special import gamma as gamma_fn
from scipy.special import hyp2f1

from .errors import HartreeError

MODULE = "radial-core"

# rows over which the 4-point flux stencil is blended into the 2-point one
# next to r_min (geometric grids only)
BLEND_ROWS = 40
# half-width M of the corrected trapezoid band in the kernel assembly
KERNEL_BAND = 2


def sphere_area(d: int) -> float:
    """|S^{d-1}|, the surface area of the unit sphere in R^d."""
    return 2.0 * np.pi ** (d / 2) / gamma_fn(d / 2)


@dataclass(eq=False)
class RadialGrid:
    """Radial mesh with volume weights.

    ``step`` is the spacing in ln r for geometric grids and in r for uniform
    ones.  Derived operators are cached in ``_ops`` keyed by name.
    """

    d: int
    nodes: np.ndarray
    weights: np.ndarray
    grading: str
    step: float
    _ops: dict = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def area(self) -> float:
        return sphere_area(self.d)

    @property
    def r_min(self) -> float:
        return float(self.nodes[0])

    @property
    def r_max(self) -> float:
        return float(self.nodes[-1])

    def describe(self) -> dict:
        return {"d": self.d, "r_min": self.r_min, "r_max": self.r_max,
                "n": self.n, "grading": self.grading}

    def cell_edges(self) -> np.ndarray:
        """Radii bounding the quadrature cells, starting at the origin.

        Cell i is the shell whose volume equals w_i, so the edges follow
        from the cumulative weights.
        """
        vol = np.concatenate([[0.0], np.cumsum(self.weights)])
        return (self.d * vol / self.area) ** (1.0 / self.d)

    def field(self, values) -> "RadialField":
        return RadialField(self, values)

    def zeros(self) -> "RadialField":
        return RadialField(self, np.zeros(self.n))


@dataclass(eq=False)
class RadialField:
    """Complex samples of a radial function on a grid."""

    grid: RadialGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        if v.shape != (self.grid.n,):
            raise HartreeError(MODULE, "invalid-field",
                               f"expected {self.grid.n} values, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise HartreeError(MODULE, "invalid-field", "non-finite values")
        self.values = v

    @property
    def real(self) -> np.ndarray:
        return self.values.real

    @property
    def imag(self) -> np.ndarray:
        return self.values.imag

    def copy(self) -> "RadialField":
        return RadialField(self.grid, self.values.copy())

    def conj(self) -> "RadialField":
        return RadialField(self.grid, self.values.conj())

    def _other(self, other):
        if isinstance(other, RadialField):
            if other.grid is not self.grid:
                raise HartreeError(MODULE, "grid-mismatch")
            return other.values
        return other

    def __add__(self, other):
        return RadialField(self.grid, self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return RadialField(self.grid, self.values - self._other(other))

    def __rsub__(self, other):
        return RadialField(self.grid, self._other(other) - self.values)

    def __mul__(self, other):
        return RadialField(self.grid, self.values * self._other(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return RadialField(self.grid, self.values / self._other(other))

    def __neg__(self):
        return RadialField(self.grid, -self.values)


def values_of(x, grid: RadialGrid | None = None) -> np.ndarray:
    """Sample array of a field or array, checking the grid when given."""
    if isinstance(x, RadialField):
        if grid is not None and x.grid is not grid:
            raise HartreeError(MODULE, "grid-mismatch")
        return x.values
    v = np.asarray(x)
    if grid is not None and v.shape != (grid.n,):
        raise HartreeError(MODULE, "grid-mismatch", f"shape {v.shape} vs n={grid.n}")
    return v


def build_grid(d: int, r_min: float = 1e-3, r_max: float = 1000.0, n: int = 1024,
               grading: str = "geometric") -> RadialGrid:
    """Radial grid with nodes r_1 = r_min, r_N = r_max.

    Geometric grids are uniform in s = ln r; the weights are the trapezoid
    rule in s with the first weight also covering the ball r < r_1 (summed
    as a geometric series).  Uniform grids use finite-volume cells.
    """
    if int(d) != d or d < 5:
        raise HartreeError(MODULE, "invalid-dimension", f"d={d}")
    if not (0 < r_min < r_max):
        raise HartreeError(MODULE, "degenerate-range", f"r_min={r_min}, r_max={r_max}")
    if n < 16:
        raise HartreeError(MODULE, "invalid-size", f"n={n} < 16")
    d = int(d)
    area = sphere_area(d)
    if grading == "geometric":
        s = np.linspace(np.log(r_min), np.log(r_max), n)
        h = (s[-1] - s[0]) / (n - 1)
        r = np.exp(s)
        r[0], r[-1] = r_min, r_max
        w = area * h * r ** d
        w[0] /= 1.0 - np.exp(-d * h)
        return RadialGrid(d, r, w, grading, h)
    if grading == "uniform":
        r = np.linspace(r_min, r_max, n)
        dr = r[1] - r[0]
        edges = np.concatenate([[0.0], 0.5 * (r[1:] + r[:-1]), [r_max + 0.5 * dr]])
        w = area * np.diff(edges ** d) / d
        return RadialGrid(d, r, w, grading, dr)
    raise HartreeError(MODULE, "invalid-grading", grading)


def integrate(values, grid: RadialGrid, upper: float | None = None) -> complex | float:
    """Weighted sum of samples, optionally restricted to the ball r <= upper.

    With ``upper`` the cell cut by the sphere r = upper contributes the
    fraction of its volume lying inside, which keeps step functions accurate.
    """
    f = values_of(values, grid)
    if upper is None:
        return grid.weights @ f
    e = grid.cell_edges()
    d = grid.d
    frac = np.clip((upper ** d - e[:-1] ** d) / (e[1:] ** d - e[:-1] ** d), 0.0, 1.0)
    return (grid.weights * frac) @ f


def resample(u, radii, tail_power: float | None = None) -> np.ndarray:
    """Values of a field at arbitrary radii.

    Interpolates phi(s) = r^{p/2} u(r) with a cubic spline in s = ln r, where
    p = tail_power (default d - 2).  Beyond r_max the field follows the tail
    law u ~ r^{-p}; below r_min it is held constant (u'(0) = 0).
    """
    grid = u.grid
    p = grid.d - 2 if tail_power is None else tail_power
    s = np.log(grid.nodes)
    phi = np.exp(0.5 * p * s) * u.values
    spline = CubicSpline(s, phi)
    x = np.log(np.asarray(radii, dtype=float))
    out = np.empty(x.shape, dtype=complex)
    inside = (x >= s[0]) & (x <= s[-1])
    out[inside] = spline(x[inside]) * np.exp(-0.5 * p * x[inside])
    hi = x > s[-1]
    out[hi] = u.values[-1] * np.exp(-p * (x[hi] - s[-1]))
    lo = x < s[0]
    out[lo] = u.values[0]
    return out


# ---------------------------------------------------------------------------
# angular kernel

def diagonal_divergent(d: int, gamma: float) -> bool:
    """True when V_gamma(rho) is unbounded at rho = 1."""
    return gamma >= d - 1


def angular_kernel(d: int, gamma: float, rho: float, band: float = 1e-10) -> float:
    """V_gamma(rho) = |S^{d-2}| int_{-1}^{1} (1-s^2)^{(d-3)/2} (rho^2 - 2 rho s + 1)^{-gamma/2} ds.

    Evaluated by adaptive quadrature.  For rho > 1 the inversion
    V(rho) = rho^{-gamma} V(1/rho) is used so that the quadrature always runs
    with rho < 1.
    """
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    if np.isinf(rho):
        return 0.0
    if abs(rho - 1.0) <= band and diagonal_divergent(d, gamma):
        raise HartreeError(MODULE, "diagonal-singularity", f"rho={rho}, d={d}, gamma={gamma}")
    if rho > 1.0:
        return rho ** (-gamma) * angular_kernel(d, gamma, 1.0 / rho, band)
    omega = sphere_area(d - 1)
    a = (d - 3) / 2.0
    gap = (1.0 - rho) ** 2

    def f(t):
        # t = 1 - s; the integrand peaks at t = 0 on the scale gap / (2 rho)
        if t <= 0.0:
            return 0.0 if a > 0 else (gap ** (-gamma / 2.0) if gap > 0 else np.inf)
        # in logs: on the diagonal (gap = 0) the two powers overflow separately
        return math.exp(a * math.log(t * (2.0 - t)) - 0.5 * gamma * math.log(gap + 2.0 * rho * t))

    cuts = [0.0]
    if rho > 0:
        c = max(gap / (2.0 * rho), 1e-16)
        while c < 1.0:
            cuts.append(c)
            c *= 10.0
    cuts.append(2.0)
    total = 0.0
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        total += quad(f, lo, hi, epsabs=0.0, epsrel=1e-13, limit=200)[0]
    return omega * total


def angular_kernel_closed(d: int, gamma: float, rho) -> np.ndarray:
    """Vectorised closed form of V_gamma through the Gauss hypergeometric function."""
    rho = np.asarray(rho, dtype=float)
    area = sphere_area(d)
    a, b, c = gamma / 2.0, (gamma - d + 2) / 2.0, d / 2.0
    out = np.empty_like(rho)
    lo = rho < 1.0
    out[lo] = area * hyp2f1(a, b, c, rho[lo] ** 2)
    hi = ~lo
    with np.errstate(divide="ignore"):
        x = 1.0 / rho[hi]
        out[hi] = x ** gamma * area * hyp2f1(a, b, c, x ** 2)
    return out


def _even_profile(d: int, gamma: float, sigma) -> np.ndarray:
    """E(sigma) = exp(-gamma |sigma| / 2) V(exp(-|sigma|)), even in sigma.

    The Toeplitz symbol of the kernel in log variables is
    exp((2d - gamma) sigma / 2) E(sigma).
    """
    s = np.abs(np.asarray(sigma, dtype=float))
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.exp(-gamma * s / 2.0) * angular_kernel_closed(d, gamma, np.exp(-s))


@lru_cache(maxsize=64)
def _correction_weights(d: int, gamma: float, h: float, band: int = KERNEL_BAND,
                        tau_steps: float = 8.0) -> np.ndarray:
    """Symmetric corrections delta_0..delta_M to the trapezoid rule for E.

    Fitted so that sum_m h E(mh) phi(mh) + sum_|m|<=M delta_|m| phi(mh) is
    exact for phi_k(s) = (s/h)^{2k} exp(-s^2 / 2 tau^2), k = 0..M; the exact
    moments come from adaptive quadrature through the singular point.
    """
    tau = tau_steps * h
    span = 14.0 * tau
    m = np.arange(1, int(np.ceil(span / h)) + 1)
    e_nodes = _even_profile(d, gamma, m * h)
    a = np.zeros((band + 1, band + 1))
    rhs = np.zeros(band + 1)
    for k in range(band + 1):
        def phi(s, k=k):
            return (s / h) ** (2 * k) * np.exp(-s * s / (2 * tau * tau))

        exact = 2.0 * quad(lambda s: _even_profile(d, gamma, s) * phi(s), 0.0, span,
                           epsabs=0.0, epsrel=1e-13, limit=500)[0]
        trap = 2.0 * h * np.sum(e_nodes * phi(m * h))
        rhs[k] = exact - trap
        a[k, 0] = phi(0.0)
        a[k, 1:] = 2.0 * phi(np.arange(1, band + 1) * h)
    return np.linalg.solve(a, rhs)


@dataclass(eq=False)
class NonlocalKernelMatrix:
    """Discrete g -> int rho^{d-1-gamma} V_gamma(r/rho) g(rho) d rho."""

    grid: RadialGrid
    gamma: float
    matrix: np.ndarray

    def apply(self, g) -> np.ndarray:
        return self.matrix @ values_of(g, self.grid)

    def asymmetry(self) -> float:
        b = self.grid.weights[:, None] * self.matrix
        return float(np.max(np.abs(b - b.T)) / np.max(np.abs(b)))


def assemble_kernel(grid: RadialGrid, gamma: float) -> NonlocalKernelMatrix:
    """Assemble the radial convolution with |x|^{-gamma}, gamma in {4, d-2}."""
    if gamma not in (4, grid.d - 2):
        raise HartreeError(MODULE, "unsupported-exponent", f"gamma={gamma}, d={grid.d}")
    key = ("kernel", float(gamma))
    if key not in grid._ops:
        if grid.grading == "geometric":
            mat = _assemble_geometric(grid, float(gamma))
        else:
            mat = _assemble_generic(grid, float(gamma))
        grid._ops[key] = NonlocalKernelMatrix(grid, gamma, mat)
    return grid._ops[key]


def _assemble_geometric(grid: RadialGrid, gamma: float) -> np.ndarray:
    d, h, r, w = grid.d, grid.step, grid.nodes, grid.weights
    n = grid.n
    # virtual nodes below r_1 carry the inner ball; their symbol decays like e^{-d|m|h}
    n_virtual = int(np.ceil(40.0 / (d * h)))
    off = n - 1 + n_virtual
    m = np.arange(-off, n)
    c = h * _even_profile(d, gamma, m * h)
    c[off] = 0.0
    delta = _correction_weights(d, gamma, h)
    c[off] += delta[0]
    for j in range(1, len(delta)):
        c[off + j] += delta[j]
        c[off - j] += delta[j]
    c *= np.exp((2 * d - gamma) * m * h / 2.0)
    idx = np.arange(n)
    scale = r ** (d - gamma)
    k = scale[:, None] * c[idx[None, :] - idx[:, None] + off]
    tail = np.cumsum(c)[off - idx - 1]
    k[:, 0] += scale * tail
    # the first node has a capped weight; define its row by weighted symmetry
    # and keep its row sum (the action on constants) on the diagonal
    row = k[0].copy()
    k[0, 1:] = w[1:] * k[1:, 0] / w[0]
    k[0, 0] += np.sum(row[1:] - k[0, 1:])
    return k


def _assemble_generic(grid: RadialGrid, gamma: float) -> np.ndarray:
    d, r, w = grid.d, grid.nodes, grid.weights
    area = grid.area
    with np.errstate(divide="ignore"):
        v = angular_kernel_closed(d, gamma, r[:, None] / r[None, :])
    k = w[None, :] * r[None, :] ** (-gamma) * v / area
    e = grid.cell_edges()
    for i in range(grid.n):
        f = lambda p, ri=r[i]: p ** (d - 1 - gamma) * angular_kernel_closed(d, gamma, np.array([ri / p]))[0]
        lo, hi = e[i], e[i + 1]
        val = quad(f, lo, r[i], epsrel=1e-10, limit=200)[0] + quad(f, r[i], hi, epsrel=1e-10, limit=200)[0]
        k[i, i] = val
    return k


# ---------------------------------------------------------------------------
# Laplacian

def _smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x ** 4 * (35.0 - 84.0 * x + 70.0 * x ** 2 - 20.0 * x ** 3)


def _ghost_radii(grid: RadialGrid, count: int) -> np.ndarray:
    j = np.arange(1, count + 1)
    if grid.grading == "geometric":
        return grid.r_max * np.exp(j * grid.step)
    return grid.r_max + j * grid.step


def stiffness_matrix(grid: RadialGrid, boundary: str = "harmonic") -> sparse.csr_matrix:
    """Symmetric S = D^T diag(A) D with -Laplacian = W^{-1} S.

    D maps nodes to fluxes at the half nodes between consecutive nodes; the
    inner boundary needs no ghost (the first cell contains the ball below
    r_1, i.e. u'(0) = 0).  Outside r_max ghost values follow either the
    harmonic tail u(r_N)(r_N/r)^{d-2} or zero (``dirichlet``).
    """
    key = ("stiffness", boundary)
    if key in grid._ops:
        return grid._ops[key]
    if boundary not in ("harmonic", "dirichlet"):
        raise HartreeError(MODULE, "invalid-boundary", boundary)
    d, n, r, w = grid.d, grid.n, grid.nodes, grid.weights
    area = grid.area
    ghosts = _ghost_radii(grid, 3)
    if boundary == "harmonic":
        q = (r[-1] / ghosts) ** (d - 2)
    else:
        q = np.zeros(3)
    rows = n + 1
    if grid.grading == "geometric":
        blend = min(BLEND_ROWS, max(n // 8, 2))
        theta = _smoothstep(np.arange(rows) / blend)
    else:
        blend = 0
        theta = np.zeros(rows)
    c4 = np.array([1.0, -27.0, 27.0, -1.0]) / 24.0
    c2 = np.array([0.0, -1.0, 1.0, 0.0])
    dm = np.zeros((rows, n))
    for k in range(rows):
        coef = theta[k] * c4 + (1.0 - theta[k]) * c2
        for c, j in zip(coef, (k - 1, k, k + 1, k + 2)):
            if c == 0.0:
                continue
            if j < 0:
                raise AssertionError("inner stencil must not reach a ghost")
            if j < n:
                dm[k, j] += c
            else:
                dm[k, n - 1] += c * q[j - n]
    dr2 = dm @ (r * r)
    if grid.grading == "geometric":
        h = grid.step
        x = d * h
        kappa = 2 * d * area * h * 24.0 / (54.0 * np.sinh(x / 2) - 2.0 * np.sinh(3 * x / 2))
        c_d = (54.0 * np.sinh(h) - 2.0 * np.sinh(3 * h)) / 24.0
        rh = r[0] * np.exp((np.arange(rows) + 0.5) * h)
        a = kappa * rh ** (d - 2) / c_d
        flux = kappa * rh ** d
        # fit the blend-zone fluxes so that -Lap r^2 = -2d holds with the
        # standard weights
        kb = blend + 3
        eqs = min(kb + 4, n)
        mat = dm.T[:eqs, :kb]
        rhs = -2 * d * w[:eqs] - dm.T[:eqs, kb:] @ flux[kb:]
        flux[:kb] = lstsq(mat, rhs)[0]
        a[:kb] = flux[:kb] / dr2[:kb]
    else:
        flux = 2 * d * np.cumsum(w)
        a = np.zeros(rows)
        a[: n - 1] = flux[: n - 1] / dr2[: n - 1]
        edge = r[-1] + 0.5 * grid.step
        a[n - 1] = area * edge ** (d - 1) / grid.step
    dsp = sparse.csr_matrix(dm)
    tail = 0.0
    if boundary == "harmonic" and grid.grading == "geometric":
        # rows past the last one see only ghosts: flux row k carries
        # a_n rho^{-(k-n)} (rho^{k-n} G u_N)^2, a geometric series
        rho = np.exp(-(d - 2) * grid.step)
        gsum = float(c4 @ rho ** np.arange(4))
        tail = a[n] * gsum ** 2 * rho / (1.0 - rho)
    if grid.grading == "geometric":
        half = r[0] * np.exp((np.arange(rows) + 0.5) * grid.step)
    else:
        half = r[0] + (np.arange(rows) + 0.5) * grid.step
    grid._ops[("stiffness-factors", boundary)] = (dsp, a, half, tail)
    grid._ops[key] = _assemble_stiffness(dsp, a, tail, n)
    return grid._ops[key]


def _assemble_stiffness(dsp, a, tail, n) -> sparse.csr_matrix:
    s = (dsp.T @ sparse.diags(a) @ dsp).tolil()
    s[n - 1, n - 1] += tail
    s = s.tocsr()
    return (0.5 * (s + s.T)).tocsr()


def weighted_stiffness(grid: RadialGrid, coef, boundary: str = "harmonic") -> sparse.csr_matrix:
    """Gram matrix of int c(r) |grad u|^2 for a radial coefficient c.

    ``coef`` is a callable evaluated at the flux points (half nodes); the
    exterior tail of the harmonic closure is weighted by c(r_max).
    """
    stiffness_matrix(grid, boundary)
    dsp, a, half, tail = grid._ops[("stiffness-factors", boundary)]
    c = np.asarray(coef(half), dtype=float)
    return _assemble_stiffness(dsp, a * c, tail * float(coef(np.array([grid.r_max]))[0]), grid.n)


def apply_laplacian(u, boundary: str = "harmonic", grid: RadialGrid | None = None) -> RadialField:
    """Radial Laplacian u'' + (d-1)/r u' of a field."""
    if isinstance(u, RadialField):
        grid = u.grid
    elif grid is None:
        raise HartreeError(MODULE, "invalid-field", "array input needs a grid")
    v = values_of(u, grid)
    s = stiffness_matrix(grid, boundary)
    return RadialField(grid, -(s @ v) / grid.weights)


def h1_inner(f, g, boundary: str = "harmonic") -> float:
    """Real Hdot^1 inner product Re int grad f . conj(grad g)."""
    if isinstance(f, RadialField) and isinstance(g, RadialField) and f.grid is not g.grid:
        raise HartreeError(MODULE, "grid-mismatch")
    grid = f.grid if isinstance(f, RadialField) else g.grid
    fv, gv = values_of(f, grid), values_of(g, grid)
    s = stiffness_matrix(grid, boundary)
    return float(np.real(np.vdot(gv, s @ fv)))


def l2_inner(f, g, grid: RadialGrid | None = None) -> float:
    """Real L^2 inner product Re int f conj(g)."""
    if grid is None:
        grid = f.grid if isinstance(f, RadialField) else g.grid
    return float(np.real(np.sum(grid.weights * values_of(f, grid) * np.conj(values_of(g, grid)))))


def quartic_term(u, kernel: NonlocalKernelMatrix) -> float:
    """Double integral of |u(x)|^2 |u(y)|^2 / |x-y|^gamma."""
    rho = np.abs(values_of(u, kernel.grid)) ** 2
    return float(kernel.grid.weights @ (rho * kernel.apply(rho)))


def energy(u, kernel: NonlocalKernelMatrix) -> float:
    """E(u) = 1/2 int |grad u|^2 - 1/4 double integral with |x-y|^{-4}."""
    if kernel.gamma != 4:
        raise HartreeError(MODULE, "kernel-grid-mismatch", "energy needs the gamma = 4 kernel")
    if isinstance(u, RadialField) and u.grid is not kernel.grid:
        raise HartreeError(MODULE, "kernel-grid-mismatch")
    u = RadialField(kernel.grid, values_of(u, kernel.grid))
    return 0.5 * h1_inner(u, u) - 0.25 * quartic_term(u, kernel)


def _grad_norm_ref(ground) -> float:
    return float(getattr(ground, "grad_norm_sq", ground))


def delta(u, ground) -> float:
    """Gradient variant |int |grad u|^2 - |grad W|^2|.

    ``ground`` is a calibrated ground state or the number |grad W|^2.
    """
    return abs(h1_inner(u, u) - _grad_norm_ref(ground))


def hls_functional(u, kernel: NonlocalKernelMatrix, ground) -> float:
    """I(u) = |grad u|^4 / |grad W|^4 - Q(u) / Q(W), Q the quartic term."""
    v = values_of(u, kernel.grid)
    if not np.any(v != 0):
        raise HartreeError(MODULE, "zero-input")
    gu = h1_inner(u, u)
    gw = _grad_norm_ref(ground)
    qw = getattr(ground, "quartic", None)
    if qw is None:
        qw = quartic_term(ground.W, kernel)
    return (gu / gw) ** 2 - quartic_term(u, kernel) / qw


# ---------------------------------------------------------------------------
# scalar reports

def config_hash(config) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class ScalarReport:
    values: dict
    config_hash: str

    def __post_init__(self):
        if not self.config_hash:
            raise HartreeError(MODULE, "invalid-report", "empty configuration hash")
        for k, v in self.values.items():
            if not np.isfinite(v):
                raise HartreeError(MODULE, "invalid-report", f"{k} is not finite")

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["name", "value", "config_hash"])
        for k, v in self.values.items():
            wr.writerow([k, repr(float(v)), self.config_hash])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ScalarReport":
        rows = list(csv.DictReader(io.StringIO(text)))
        hashes = {row["config_hash"] for row in rows}
        if len(hashes) != 1:
            raise HartreeError(MODULE, "invalid-report", "mixed configuration hashes")
        return cls({row["name"]: float(row["value"]) for row in rows}, hashes.pop())
