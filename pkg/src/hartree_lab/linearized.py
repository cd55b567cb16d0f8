"""Linearization around W: L_+, L_-, the block generator, the forms Phi and B,
the real eigenpair (e0, Y_+-), coercivity constants and the decomposition of
perturbations.

A complex perturbation h = h1 + i h2 is handled as the real pair (h1, h2) and
the generator acts as  Lh = [[0, -L_-], [L_+, 0]] (h1, h2).  In matrix form
L_+- = diag(w)^{-1} A_+- with A_+- symmetric, so every operator here is
self-adjoint in the weighted inner product by construction.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sl

from .errors import HartreeError
from .ground_state import GroundState
from .radial_core import NonlocalKernelMatrix, RadialField, stiffness_matrix, values_of

MODULE = "linearized"

# real eigenvalues of the generator below this size are the discretised
# null pairs (W, W~) and are not counted as unstable modes
NULL_EIGENVALUE = 1e-2
# Ritz cutoff (eigenvalue of the scaled L_-) for the square-root oracle
SQRT_CUTOFF = 1e4


@dataclass(eq=False)
class LinearizedSystem:
    ground: GroundState
    potential: np.ndarray       # K_4 W^2
    a_plus: np.ndarray          # diag(w) L_+
    a_minus: np.ndarray         # diag(w) L_-
    stiffness: np.ndarray       # Hdot^1 Gram matrix
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def grid(self):
        return self.ground.grid

    @property
    def kernel(self) -> NonlocalKernelMatrix:
        return self.ground.kernel

    @property
    def n(self) -> int:
        return self.grid.n

    def l_plus(self, h) -> np.ndarray:
        return self.a_plus @ _real(h, self.grid) / self.grid.weights

    def l_minus(self, h) -> np.ndarray:
        return self.a_minus @ _real(h, self.grid) / self.grid.weights

    def generator(self, h) -> RadialField:
        """L h for a complex field h."""
        v = values_of(h, self.grid)
        return RadialField(self.grid, -self.l_minus(v.imag) + 1j * self.l_plus(v.real))

    def block_matrix(self) -> np.ndarray:
        """The generator conjugated by diag(w)^{1/2}, a 2N x 2N real matrix."""
        b, c = self.scaled()
        z = np.zeros_like(b)
        return np.block([[z, -b], [c, z]])

    def scaled(self) -> tuple[np.ndarray, np.ndarray]:
        """(B, C) = diag(w)^{-1/2} A_-+ diag(w)^{-1/2}: L_- and L_+ in orthonormal variables."""
        if "scaled" not in self._cache:
            s = 1.0 / np.sqrt(self.grid.weights)
            self._cache["scaled"] = (s[:, None] * self.a_minus * s[None, :],
                                     s[:, None] * self.a_plus * s[None, :])
        return self._cache["scaled"]

    def asymmetry(self) -> float:
        """Largest relative asymmetry of A_+ and A_-."""
        return max(float(np.max(np.abs(a - a.T)) / np.max(np.abs(a)))
                   for a in (self.a_plus, self.a_minus))

    def null_residuals(self) -> tuple[float, float]:
        """(|L_- W| / |W|, |L_+ W~| / |W~|) in weighted L^2."""
        w = self.grid.weights
        W = self.ground.W.values.real
        Wt = self.ground.Wtilde.values.real
        nrm = lambda f: float(np.sqrt(w @ (f * f)))
        return nrm(self.l_minus(W)) / nrm(W), nrm(self.l_plus(Wt)) / nrm(Wt)

    def h1(self, f, g) -> float:
        """Real Hdot^1 inner product of two real arrays."""
        return float(f @ (self.stiffness @ g))


def _real(h, grid) -> np.ndarray:
    v = values_of(h, grid)
    return v.real if np.iscomplexobj(v) else np.asarray(v, dtype=float)


def _pair(h, grid) -> tuple[np.ndarray, np.ndarray]:
    v = values_of(h, grid)
    return v.real.astype(float), v.imag.astype(float)


def assemble_linearized(ground: GroundState, kernel: NonlocalKernelMatrix | None = None) -> LinearizedSystem:
    """L_+ h = -Lap h - (K_4 W^2) h - 2 K_4(W h) W and L_- h = -Lap h - (K_4 W^2) h."""
    if not isinstance(ground, GroundState):
        raise HartreeError(MODULE, "calibration-missing", "needs a calibrated ground state")
    kernel = ground.kernel if kernel is None else kernel
    if kernel is not ground.kernel and (kernel.grid is not ground.grid or kernel.gamma != 4):
        raise HartreeError(MODULE, "calibration-missing", "kernel does not match the ground state")
    grid = ground.grid
    w = grid.weights
    W = ground.W.values.real
    pot = kernel.apply(W * W).real
    s = stiffness_matrix(grid).toarray()
    km = w[:, None] * kernel.matrix
    km = 0.5 * (km + km.T)
    a_minus = s - np.diag(w * pot)
    a_plus = a_minus - 2.0 * W[:, None] * km * W[None, :]
    return LinearizedSystem(ground, pot, a_plus, a_minus, s)


# ---------------------------------------------------------------------------
# forms

def bilinear_B(system: LinearizedSystem, g, h) -> float:
    """B(g, h) = 1/2 <L_+ g1, h1> + 1/2 <L_- g2, h2>."""
    grid = system.grid
    for f in (g, h):
        if isinstance(f, RadialField) and f.grid is not grid:
            raise HartreeError(MODULE, "grid-mismatch")
    g1, g2 = _pair(g, grid)
    h1, h2 = _pair(h, grid)
    return 0.5 * float(h1 @ (system.a_plus @ g1)) + 0.5 * float(h2 @ (system.a_minus @ g2))


def phi(system: LinearizedSystem, h) -> float:
    """The linearized energy Phi(h) = B(h, h)."""
    return bilinear_B(system, h, h)


# ---------------------------------------------------------------------------
# eigenpair

@dataclass(eq=False)
class EigenPair:
    """Unstable eigenpair L Y_+ = e0 Y_+ with Y_+ = Y1 + i Y2.

    The partner is Y_- = -conj(Y_+), which satisfies L Y_- = -e0 Y_- and makes
    B(Y_+, Y_-) positive so that it can be normalised to 1.
    """

    e0: float
    Y1: RadialField
    Y2: RadialField
    oracles: dict
    residual: float
    b_before: float
    b_after: float
    positive_real_count: int
    tail_r2: float
    tail_rate: float

    @property
    def Y_plus(self) -> RadialField:
        return RadialField(self.Y1.grid, self.Y1.values.real + 1j * self.Y2.values.real)

    @property
    def Y_minus(self) -> RadialField:
        return RadialField(self.Y1.grid, -self.Y1.values.real + 1j * self.Y2.values.real)

    def summary(self) -> dict:
        return {"e0": self.e0, **{f"e0_{k}": v for k, v in self.oracles.items()},
                "eigen_residual": self.residual, "B_before": self.b_before,
                "B_after": self.b_after, "positive_real_count": self.positive_real_count,
                "tail_r2": self.tail_r2, "tail_rate": self.tail_rate}


def _pencil(system: LinearizedSystem) -> tuple[float, int]:
    """e0 from L_- L_+ Y1 = -e0^2 Y1, plus the number of unstable pairs."""
    b, c = system.scaled()
    lam = sl.eigvals(b @ c)
    real = lam[np.abs(lam.imag) <= 1e-8 * np.abs(lam) + 1e-12].real
    neg = -real[real < -NULL_EIGENVALUE ** 2]
    if neg.size == 0:
        raise HartreeError(MODULE, "no-real-eigenvalue", "pencil has no negative eigenvalue")
    return float(np.sqrt(neg.max())), int(neg.size)


def _block(system: LinearizedSystem) -> tuple[float, int]:
    lam = sl.eigvals(system.block_matrix())
    real = lam[np.abs(lam.imag) <= 1e-8 * np.abs(lam) + 1e-12].real
    pos = real[real > NULL_EIGENVALUE]
    if pos.size == 0:
        raise HartreeError(MODULE, "no-real-eigenvalue", "block matrix has no real eigenvalue")
    return float(pos.max()), int(pos.size)


def _sqrt_oracle(system: LinearizedSystem) -> tuple[float, np.ndarray]:
    """Lowest eigenvalue of (L_-)^{1/2} L_+ (L_-)^{1/2} off the W direction.

    The operator is formed on the L_- eigenmodes below SQRT_CUTOFF (a
    Rayleigh-Ritz space): the full product spans ~20 decades and is
    swamped by round-off at the top of the spectrum.
    """
    b, c = system.scaled()
    lb, vb = sl.eigh(b)
    m = int(np.searchsorted(lb, SQRT_CUTOFF))
    # drop the null direction of L_- (the discrete W mode) and clamp round-off
    v = vb[:, 1:m]
    root = np.sqrt(np.clip(lb[1:m], 0.0, None))
    p = root[:, None] * (v.T @ c @ v) * root[None, :]
    lp, zp = sl.eigh(p, subset_by_index=[0, 0])
    if lp[0] >= 0:
        raise HartreeError(MODULE, "no-real-eigenvalue", "square-root operator is nonnegative")
    y = v @ (root * zp[:, 0])
    return float(np.sqrt(-lp[0])), y


def _tail_fit(grid, y_mod: np.ndarray) -> tuple[float, float]:
    """R^2 and rate of a linear fit of log|Y_+| against r on the decay window.

    The window is where |Y_+| falls from 1e-3 to 1e-10 of its maximum.
    """
    r = grid.nodes
    top = np.max(y_mod)
    imax = int(np.argmax(y_mod))
    sel = (np.arange(grid.n) > imax) & (y_mod < 1e-3 * top) & (y_mod > 1e-10 * top)
    if sel.sum() < 5:
        return 0.0, 0.0
    x, y = r[sel], np.log(y_mod[sel])
    slope, icpt = np.polyfit(x, y, 1)
    ss = np.sum((y - (icpt + slope * x)) ** 2)
    r2 = 1.0 - ss / np.sum((y - y.mean()) ** 2)
    return float(r2), float(-slope)


def compute_eigenpair(system: LinearizedSystem, oracles=("block", "pencil", "sqrt")) -> EigenPair:
    """Unstable eigenpair with cross-checks.

    ``oracles`` selects which of the three independent computations to run
    (the 2N x 2N block eigensolve dominates the cost).  The eigenvector is
    taken from the square-root oracle and polished by inverse iteration on
    the block matrix.
    """
    grid = system.grid
    found = {}
    counts = []
    if "block" in oracles:
        found["block"], cnt = _block(system)
        counts.append(cnt)
    if "pencil" in oracles:
        found["pencil"], cnt = _pencil(system)
        counts.append(cnt)
    e_sqrt, y = _sqrt_oracle(system)
    found["sqrt"] = e_sqrt
    if any(cnt > 1 for cnt in counts):
        raise HartreeError(MODULE, "spurious-multiplicity",
                           f"{max(counts)} real positive eigenvalues found")
    e0 = found.get("pencil", found.get("block", e_sqrt))
    b, c = system.scaled()
    mat = system.block_matrix()
    x = np.concatenate([y, c @ y / e0])
    lu = sl.lu_factor(mat - e0 * np.eye(2 * grid.n))
    for _ in range(2):
        x = sl.lu_solve(lu, x)
        x /= np.linalg.norm(x)
    e0 = float(x @ (mat @ x))
    s = 1.0 / np.sqrt(grid.weights)
    Y1, Y2 = s * x[: grid.n], s * x[grid.n:]
    res = float(np.linalg.norm(mat @ x - e0 * x))
    # sign: <W, Y1>_{Hdot^1} > 0; scale: B(Y_+, Y_-) = 1
    if system.h1(system.ground.W.values.real, Y1) < 0:
        Y1, Y2 = -Y1, -Y2
    yp = RadialField(grid, Y1 + 1j * Y2)
    ym = RadialField(grid, -Y1 + 1j * Y2)
    b_before = bilinear_B(system, yp, ym)
    if not b_before > 0:
        raise HartreeError(MODULE, "no-real-eigenvalue", f"B(Y+, Y-) = {b_before:.3e}")
    scale = 1.0 / np.sqrt(b_before)
    Y1, Y2 = scale * Y1, scale * Y2
    b_after = bilinear_B(system, RadialField(grid, Y1 + 1j * Y2), RadialField(grid, -Y1 + 1j * Y2))
    r2, rate = _tail_fit(grid, np.hypot(Y1, Y2))
    count = max(counts) if counts else 1
    return EigenPair(e0, RadialField(grid, Y1), RadialField(grid, Y2), found, res,
                     b_before, b_after, count, r2, rate)


# ---------------------------------------------------------------------------
# constrained subspaces

@dataclass(eq=False)
class SubspaceProjector:
    """Projection onto {h : constraints^T (h1, h2) = 0} along ``directions``.

    Both arrays are 2N x m in the stacked real variables (h1, h2).  For H-perp
    the directions are W, iW, W~ and the constraints their Hdot^1 duals, so
    the projection is Hdot^1-orthogonal.  For G-perp the directions are iW,
    W~, Y_+, Y_- and the projection is the v_perp map of the decomposition.
    """

    name: str
    constraints: np.ndarray
    directions: np.ndarray

    def coefficients(self, x: np.ndarray) -> np.ndarray:
        return np.linalg.solve(self.constraints.T @ self.directions, self.constraints.T @ x)

    def project(self, h) -> np.ndarray:
        x = np.asarray(h, dtype=float)
        return x - self.directions @ self.coefficients(x)

    def constraint_residual(self, x: np.ndarray, scale: float = 1.0) -> float:
        c = self.constraints / np.linalg.norm(self.constraints, axis=0)
        return float(np.max(np.abs(c.T @ x)) / scale) if c.shape[1] else 0.0


SUBSPACES = ("H-perp", "G-perp", "unconstrained")


def _stack(a=None, b=None, n=None):
    z = np.zeros(n)
    return np.concatenate([z if a is None else a, z if b is None else b])


def subspace_projector(system: LinearizedSystem, subspace: str,
                       pair: EigenPair | None = None) -> SubspaceProjector:
    n = system.n
    s = system.stiffness
    W = system.ground.W.values.real
    Wt = system.ground.Wtilde.values.real
    if subspace == "H-perp":
        dirs = [_stack(W, None, n), _stack(None, W, n), _stack(Wt, None, n)]
        cons = [_stack(s @ W, None, n), _stack(None, s @ W, n), _stack(s @ Wt, None, n)]
    elif subspace == "G-perp":
        if pair is None:
            raise HartreeError(MODULE, "unnormalized-pair", "G-perp needs the eigenpair")
        Y1, Y2 = pair.Y1.values.real, pair.Y2.values.real
        dirs = [_stack(None, W, n), _stack(Wt, None, n), _stack(Y1, Y2, n), _stack(-Y1, Y2, n)]
        ap, am = system.a_plus @ Y1, system.a_minus @ Y2
        # B(Y_-, .) and B(Y_+, .) as linear functionals, then iW and W~ duals
        cons = [_stack(-0.5 * ap, 0.5 * am, n), _stack(0.5 * ap, 0.5 * am, n),
                _stack(None, s @ W, n), _stack(s @ Wt, None, n)]
    elif subspace == "unconstrained":
        dirs, cons = [], []
    else:
        raise HartreeError(MODULE, "invalid-subspace", subspace)
    shape = (2 * n, len(dirs))
    d = np.array(dirs).T if dirs else np.zeros(shape)
    c = np.array(cons).T if cons else np.zeros(shape)
    if dirs:
        sv = np.linalg.svd(c / np.linalg.norm(c, axis=0), compute_uv=False)
        if sv[-1] < 1e-10 * sv[0]:
            raise HartreeError(MODULE, "projection-rank-deficient", subspace)
    return SubspaceProjector(subspace, c, d)


def coercivity_constant(system: LinearizedSystem, subspace: str = "H-perp",
                        pair: EigenPair | None = None) -> float:
    """min Phi(h) / |h|^2_{Hdot^1} over the constrained space.

    Solved as a projected symmetric generalized eigenproblem on each real
    component (all three constraint sets decouple between h1 and h2).
    Variables are Jacobi-scaled by the diagonal of the Gram matrix first.
    """
    proj = subspace_projector(system, subspace, pair)
    n = system.n
    s = system.stiffness
    dj = 1.0 / np.sqrt(np.diag(s))
    sg = dj[:, None] * s * dj[None, :]
    best = np.inf
    for part, a in ((slice(0, n), system.a_plus), (slice(n, 2 * n), system.a_minus)):
        c = proj.constraints[part]
        c = c[:, np.linalg.norm(c, axis=0) > 0]
        q = sl.null_space((dj[:, None] * c).T) if c.shape[1] else np.eye(n)
        ag = q.T @ (0.5 * dj[:, None] * a * dj[None, :]) @ q
        mg = q.T @ sg @ q
        lam = sl.eigh(0.5 * (ag + ag.T), 0.5 * (mg + mg.T), eigvals_only=True, subset_by_index=[0, 0])
        best = min(best, float(lam[0]))
    return best


# ---------------------------------------------------------------------------
# decomposition, remainder and potential

@dataclass
class Decomposition:
    alpha_plus: float
    alpha_minus: float
    beta: float
    gamma: float
    v_perp: RadialField
    reconstruction_residual: float

    def __iter__(self):
        return iter((self.alpha_plus, self.alpha_minus, self.beta, self.gamma, self.v_perp))


def decompose_perturbation(v, pair: EigenPair, system: LinearizedSystem) -> Decomposition:
    """v = a_+ Y_+ + a_- Y_- + beta iW + gamma W~ + v_perp with v_perp in G-perp.

    The four coefficients solve the 4x4 system that makes v_perp satisfy
    B(v_perp, Y_+-) = 0 and <v_perp, iW> = <v_perp, W~> = 0 exactly; with
    exact null modes this reduces to a_+ = B(v, Y_-), a_- = B(v, Y_+),
    beta = <v, iW>/|W|^2 and gamma = <v, W~>/|W~|^2.
    """
    if abs(pair.b_after - 1.0) > 1e-8:
        raise HartreeError(MODULE, "unnormalized-pair", f"B(Y+, Y-) = {pair.b_after:.3e}")
    grid = system.grid
    n = grid.n
    proj = subspace_projector(system, "G-perp", pair)
    v1, v2 = _pair(v, grid)
    x = np.concatenate([v1, v2])
    coef = proj.coefficients(x)
    xp = x - proj.directions @ coef
    # directions order: iW, W~, Y_+, Y_-
    beta, gam, ap, am = (float(t) for t in coef)
    vp = RadialField(grid, xp[:n] + 1j * xp[n:])
    rec = proj.directions @ coef + xp
    scale = max(np.linalg.norm(x), 1e-300)
    return Decomposition(ap, am, beta, gam, vp, float(np.linalg.norm(rec - x) / scale))


def potential_V(h, W, kernel: NonlocalKernelMatrix) -> RadialField:
    """V h = -(K_4 W^2) h - 2 K_4(W Re h) W."""
    grid = kernel.grid
    hv = values_of(h, grid)
    w = values_of(W, grid).real
    out = -kernel.apply(w * w).real * hv - 2.0 * kernel.apply(w * hv.real).real * w
    return RadialField(grid, out)


def remainder_R(h, W, kernel: NonlocalKernelMatrix) -> RadialField:
    """R(h) = i K_4|h|^2 (W + h) + 2i K_4(W Re h) h."""
    grid = kernel.grid
    hv = values_of(h, grid).astype(complex)
    w = values_of(W, grid).real
    out = 1j * kernel.apply(np.abs(hv) ** 2).real * (w + hv) + 2j * kernel.apply(w * hv.real).real * hv
    return RadialField(grid, out)


def nonlinear_rhs(u, kernel: NonlocalKernelMatrix) -> RadialField:
    """The Hartree right side i(Lap u + (K_4|u|^2) u)."""
    from .radial_core import apply_laplacian
    grid = kernel.grid
    uv = values_of(u, grid).astype(complex)
    lap = apply_laplacian(RadialField(grid, uv)).values
    return RadialField(grid, 1j * (lap + kernel.apply(np.abs(uv) ** 2).real * uv))
