"""Solvers for the warped/conformal-factor system.

* ``solve_sub_super`` -- monotone iteration between constant sub- and
  super-solutions for the reduced q=7 scalar equation
  ``10 lap(v) + h v - 2 alpha v^2 = 0``.
* ``linearized_solve`` -- block-eliminated solve of the linearization at
  ``(v_star, 1)``.
* ``newton_solve`` -- Newton iteration on the full residual pair, dense for
  small grids and matrix-free GMRES otherwise.
* ``continuation`` -- linear homotopy in the model data.
* ``inverse_data_solve`` -- pointwise reconstruction of ``a = 2R - |F_1|^2``
  and ``b = |F_3|^2 - 2 T_string`` that make a given configuration a solution.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg, gmres

from .errors import SolverError, ValidationError
from .manifold import Grid
from .model import (
    Configuration,
    ModelData,
    ResidualPair,
    eom_jvp,
    eom_residual,
    mass_squared,
    shift_jvp,
)

log = logging.getLogger(__name__)

DENSE_NODE_LIMIT = 64
KERNEL_RADIUS = 0.1


@dataclass(frozen=True)
class SolveOptions:
    tol: float = 1e-10
    max_iter: int = 50
    damping: float = 1.0
    mean_u: float = 0.0
    mean_v: float = 0.0
    # None: detect the q=3 balance kernel automatically (see has_constant_kernel)
    kernel: bool | None = None

    def __post_init__(self):
        if not self.tol > 0:
            raise ValidationError("tol must be positive")
        if self.max_iter < 1:
            raise ValidationError("max_iter must be at least 1")
        if not 0 < self.damping <= 1:
            raise ValidationError("damping must lie in (0, 1]")


@dataclass(frozen=True)
class SubSuperResult:
    v_star: np.ndarray
    v_minus: float
    v_plus: float
    ratio: float
    iterations: int
    residual: float
    # largest pointwise increase seen between consecutive iterates (<= 0 when monotone)
    max_increase: float

    @property
    def ratio_ok(self) -> bool:
        return self.ratio < 2


@dataclass(frozen=True)
class NewtonResult:
    cfg: Configuration
    data: ModelData
    shift: tuple[float, float]
    iterations: int
    history: list[float]
    kernel_mode: bool

    @property
    def residual_norm(self) -> float:
        return self.history[-1]


@dataclass(frozen=True)
class BranchPoint:
    lam: float
    cfg: Configuration
    data: ModelData
    mass: float
    residual_norm: float
    iterations: int


@dataclass
class Branch:
    points: list[BranchPoint] = field(default_factory=list)
    failed_lambda: float | None = None
    failure: str | None = None

    @property
    def completed(self) -> bool:
        return self.failed_lambda is None


@dataclass(frozen=True)
class InverseDataResult:
    a: np.ndarray
    b: np.ndarray
    residual: float


# -- reduced scalar equation --------------------------------------------------


def reduced_residual(grid: Grid, v, alpha: float, h) -> np.ndarray:
    return 10 * grid.laplacian(v) + h * v - 2 * alpha * v * v


def solve_sub_super(data: ModelData, tol: float = 1e-10, max_iter: int = 2000) -> SubSuperResult:
    """Monotone iteration from the constant super-solution ``v_plus`` downwards."""
    grid = data.grid
    if data.q != 7:
        raise ValidationError("the reduced scalar equation needs q=7")
    if not data.alpha > 0:
        raise ValidationError("the reduced scalar equation needs alpha > 0")
    if not data.flux_support() <= {1}:
        raise ValidationError(f"only |F_1|^2 may be switched on, got degrees {sorted(data.flux_support())}")
    h = data.h_profile()
    if np.any(h <= 0):
        i = int(np.argmin(h))
        raise ValidationError(
            f"|F_1|^2/2 - T_string - R must be positive for a constant sub-solution; "
            f"min {h.flat[i] / 2:.6g} at node {i}"
        )
    alpha = data.alpha
    v_minus = float(h.min() / (2 * alpha))
    v_plus = float(h.max() / (2 * alpha))
    # |d/dv (h v - 2 alpha v^2)| is maximal at an end of [v_minus, v_plus]
    K = 1.1 * float(max(np.abs(h - 4 * alpha * v_minus).max(), np.abs(h - 4 * alpha * v_plus).max()))
    K = max(K, 1e-12)

    v = grid.constant(v_plus)
    max_increase = -np.inf
    history = []
    for it in range(max_iter + 1):
        res = float(np.max(np.abs(reduced_residual(grid, v, alpha, h))))
        history.append(res)
        if res < tol:
            return SubSuperResult(
                v_star=v,
                v_minus=v_minus,
                v_plus=v_plus,
                ratio=v_plus / v_minus,
                iterations=it,
                residual=res,
                max_increase=float(max_increase) if it else 0.0,
            )
        if it == max_iter:
            break
        rhs = -(h * v - 2 * alpha * v * v) - K * v
        v_next = grid.solve_helmholtz(rhs, diffusion=10.0, shift=K)
        max_increase = max(max_increase, float(np.max(v_next - v)))
        v = v_next
    raise SolverError(f"monotone iteration did not converge in {max_iter} steps (residual {history[-1]:.3e})", history)


# -- linearization at (v_star, 1) ---------------------------------------------


def linearized_apply(grid: Grid, v_star, alpha: float, h, chi1, chi2) -> tuple[np.ndarray, np.ndarray]:
    """Forward linearized operators ``(P, Q)`` at ``(v_star, 1)``."""
    lap1, lap2 = grid.laplacian(chi1), grid.laplacian(chi2)
    cross = grid.grad_inner(v_star, chi2)
    P = 10 * lap1 + 6 * v_star * lap2 + (h - 4 * alpha * v_star) * chi1 + 12 * cross + 2 * alpha * v_star**2 * chi2
    Q = 10 * lap1 + 10 * v_star * lap2 + (h - 4 * alpha * v_star) * chi1 + 20 * cross - 2 * alpha * v_star**2 * chi2
    return P, Q


def _spectral_precond(grid: Grid, diffusion: float, shift: float) -> LinearOperator:
    n = grid.size

    def apply(r):
        return grid.solve_helmholtz(np.reshape(r, grid.shape), diffusion, shift).ravel()

    return LinearOperator((n, n), matvec=apply, dtype=float)


def linearized_solve(grid: Grid, v_star, alpha: float, h, psi1, psi2, tol: float = 1e-13):
    """Solve the linearized system via the decoupled equation for ``chi2``.

    ``chi2`` solves ``4 v lap(chi2) + 8 grad v . grad chi2 - 4 alpha v^2 chi2 = psi2 - psi1``;
    ``chi1`` then solves the symmetric negative-definite equation
    ``10 lap(chi1) + (h - 4 alpha v) chi1 = psi1 - 6 v lap(chi2) - 12 grad v . grad chi2 - 2 alpha v^2 chi2``.
    """
    v = grid.check(v_star, "v_star")
    h = grid.check(h, "h")
    psi1, psi2 = grid.check(psi1, "psi1"), grid.check(psi2, "psi2")
    if not alpha > 0 or np.any(v <= 0):
        raise ValidationError("linearized solve needs alpha > 0 and v_star > 0")
    gap = h - 4 * alpha * v
    if np.any(gap >= 0):
        bad = np.flatnonzero(gap.ravel() >= 0)
        raise ValidationError(
            f"solvability h - 4 alpha v_star < 0 violated at {bad.size} nodes, "
            f"e.g. node {bad[0]} value {gap.flat[bad[0]]:.6g}"
        )
    n = grid.size
    shape = grid.shape

    def op2(x):
        x = x.reshape(shape)
        return (4 * v * grid.laplacian(x) + 8 * grid.grad_inner(v, x) - 4 * alpha * v * v * x).ravel()

    vbar = float(v.mean())
    A2 = LinearOperator((n, n), matvec=op2, dtype=float)
    M2 = _spectral_precond(grid, 4 * vbar, 4 * alpha * vbar**2)
    chi2, info = gmres(A2, (psi2 - psi1).ravel(), M=M2, rtol=tol, atol=0.0, restart=min(n, 200), maxiter=50)
    if info != 0:
        raise SolverError(f"GMRES stagnated on the decoupled equation (info={info})")
    chi2 = chi2.reshape(shape)

    rhs1 = psi1 - 6 * v * grid.laplacian(chi2) - 12 * grid.grad_inner(v, chi2) - 2 * alpha * v * v * chi2

    # negate so CG sees a symmetric positive-definite operator
    def op1(x):
        x = x.reshape(shape)
        return -(10 * grid.laplacian(x) + gap * x).ravel()

    A1 = LinearOperator((n, n), matvec=op1, dtype=float)
    helm = _spectral_precond(grid, 10.0, -float(gap.mean()))
    M1 = LinearOperator((n, n), matvec=lambda r: -helm.matvec(r), dtype=float)
    chi1, info = cg(A1, -rhs1.ravel(), M=M1, rtol=tol, atol=0.0, maxiter=10 * n)
    if info != 0:
        raise SolverError(f"CG stagnated on the chi1 equation (info={info})")
    return chi1.reshape(shape), chi2


# -- Newton on the full system ------------------------------------------------


def has_constant_kernel(data: ModelData, radius: float = KERNEL_RADIUS) -> bool:
    """True near the q=3 balance point, where the Jacobian at (1, 1) has constant kernel.

    The test: q=3, fluxes only in degrees 1, 3, 5, and ``a = 2R - |F_1|^2``,
    ``b = |F_3|^2 - 2 T_string``, ``|F_5|^2``, alpha, beta all within ``radius`` of zero.
    """
    if data.q != 3 or not data.flux_support() <= {1, 3, 5}:
        return False
    a = 2 * data.R - data.flux(1)
    b = data.flux(3) - 2 * data.T_string
    small = [np.max(np.abs(a)), np.max(np.abs(b)), np.max(data.flux(5)), abs(data.alpha), abs(data.beta)]
    return bool(max(small) <= radius)


class _NewtonSystem:
    """Linearized system at one Newton iterate.

    Unknowns are ``(du, dv)`` and, in kernel mode, two constant shifts of
    ``(a, b)``; kernel mode adds two rows fixing the means of ``du`` and ``dv``.
    """

    def __init__(self, data: ModelData, cfg: Configuration, kernel: bool):
        self.data, self.cfg, self.kernel = data, cfg, kernel
        self.grid = data.grid
        self.n = self.grid.size
        self.size = 2 * self.n + (2 if kernel else 0)
        if kernel:
            self.shift_cols = shift_jvp(data, cfg)

    def apply(self, z: np.ndarray) -> np.ndarray:
        n, shape = self.n, self.grid.shape
        J = eom_jvp(self.data, self.cfg, z[:n].reshape(shape), z[n : 2 * n].reshape(shape))
        first, second = J.first, J.second
        if not self.kernel:
            return np.concatenate([first.ravel(), second.ravel()])
        sa, sb = self.shift_cols
        first = first + z[2 * n] * sa.first + z[2 * n + 1] * sb.first
        second = second + z[2 * n] * sa.second + z[2 * n + 1] * sb.second
        return np.concatenate([first.ravel(), second.ravel(), [z[:n].mean(), z[n : 2 * n].mean()]])

    def dense(self) -> np.ndarray:
        eye = np.eye(self.size)
        return np.column_stack([self.apply(eye[:, j]) for j in range(self.size)])

    def preconditioner(self) -> LinearOperator:
        """Per-mode inverse of the Jacobian with coefficients frozen at their means."""
        grid, n, shape = self.grid, self.n, self.grid.shape
        u, v = self.cfg.u, self.cfg.v
        lap_coef = np.array([[6 * (v * v).mean(), 10 * (u * v).mean()], [10 * (u * v).mean(), 10 * (u * u).mean()]])
        ones, zeros = np.ones(shape), np.zeros(shape)
        c_u = eom_jvp(self.data, self.cfg, ones, zeros)
        c_v = eom_jvp(self.data, self.cfg, zeros, ones)
        A0 = np.array([[c_u.first.mean(), c_v.first.mean()], [c_u.second.mean(), c_v.second.mean()]])
        k2 = grid.k_squared
        blocks = A0[None, :, :] - k2.reshape(-1, 1, 1) * lap_coef[None, :, :]
        if self.kernel:
            sa, sb = self.shift_cols
            S = np.array([[sa.first.mean(), sb.first.mean()], [sa.second.mean(), sb.second.mean()]])
            mean_block = np.block([[A0, S], [np.eye(2), np.zeros((2, 2))]])
        else:
            mean_block = A0
        mean_inv = np.linalg.pinv(mean_block)
        blocks[0] = np.eye(2)  # mean mode handled separately
        inv = np.linalg.pinv(blocks)

        def apply(r):
            R1 = grid.forward(r[:n].reshape(shape)).ravel()
            R2 = grid.forward(r[n : 2 * n].reshape(shape)).ravel()
            X1 = inv[:, 0, 0] * R1 + inv[:, 0, 1] * R2
            X2 = inv[:, 1, 0] * R1 + inv[:, 1, 1] * R2
            rhs0 = [R1[0].real / n, R2[0].real / n]
            if self.kernel:
                rhs0 += [r[2 * n], r[2 * n + 1]]
            sol0 = mean_inv @ np.array(rhs0)
            X1[0], X2[0] = sol0[0] * n, sol0[1] * n
            out = [grid.inverse(X1.reshape(k2.shape)).ravel(), grid.inverse(X2.reshape(k2.shape)).ravel()]
            if self.kernel:
                out.append(sol0[2:])
            return np.concatenate(out)

        return LinearOperator((self.size, self.size), matvec=apply, dtype=float)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if self.n <= DENSE_NODE_LIMIT:
            A = self.dense()
            s = np.linalg.svd(A, compute_uv=False)
            if s[-1] <= 1e-13 * s[0]:
                raise SolverError(f"singular Jacobian (condition number {s[0] / max(s[-1], 1e-300):.3e})")
            return np.linalg.solve(A, rhs)
        A = LinearOperator((self.size, self.size), matvec=self.apply, dtype=float)
        x, info = gmres(A, rhs, M=self.preconditioner(), rtol=1e-12, atol=0.0, restart=200, maxiter=20)
        if info != 0:
            achieved = np.linalg.norm(self.apply(x) - rhs) / max(np.linalg.norm(rhs), 1e-300)
            if achieved > 1e-8:
                raise SolverError(f"GMRES failed on the Newton system (info={info}, relative residual {achieved:.2e})")
        return x


def newton_solve(data: ModelData, initial: Configuration, opts: SolveOptions = SolveOptions()) -> NewtonResult:
    """Newton iteration on the equations of motion.

    Near the q=3 balance point the Jacobian has the constant pair as kernel.
    There the update means are pinned (the solution means move by
    ``(opts.mean_u, opts.mean_v)`` in total) and the mean parts of the
    equations are absorbed by constant shifts of ``a = 2R - |F_1|^2`` and
    ``b = |F_3|^2 - 2 T_string``. The shifted data is returned in the result.
    """
    grid = data.grid
    if initial.u.shape != grid.shape:
        raise ValidationError("initial configuration does not match the grid")
    kernel = has_constant_kernel(data) if opts.kernel is None else bool(opts.kernel)
    n = grid.size
    u, v = initial.u.copy(), initial.v.copy()
    shift = np.zeros(2)
    if kernel:
        targets = np.array([u.mean() + opts.mean_u, v.mean() + opts.mean_v])
    history: list[float] = []

    for it in range(opts.max_iter + 1):
        cfg = Configuration(u, v)
        eff = data.shifted(*shift)
        res = eom_residual(eff, cfg)
        rnorm = res.max_norm()
        history.append(rnorm)
        gaps = targets - np.array([u.mean(), v.mean()]) if kernel else np.zeros(0)
        log.debug("newton iter %d residual %.3e", it, rnorm)
        if not np.isfinite(rnorm) or rnorm > 1e8 * max(history[0], 1.0):
            raise SolverError(f"Newton iteration diverged at iteration {it}", history)
        if rnorm < opts.tol and np.all(np.abs(gaps) < opts.tol):
            return NewtonResult(cfg, eff, (float(shift[0]), float(shift[1])), it, history, kernel)
        if it == opts.max_iter:
            break
        system = _NewtonSystem(eff, cfg, kernel)
        rhs = np.concatenate([-res.first.ravel(), -res.second.ravel(), gaps])
        step = system.solve(rhs)
        du, dv = step[:n].reshape(grid.shape), step[n : 2 * n].reshape(grid.shape)
        s = opts.damping
        for _ in range(60):
            if np.all(u + s * du > 0) and np.all(v + s * dv > 0):
                break
            s *= 0.5
        else:
            raise SolverError("could not keep iterates positive", history)
        u, v = u + s * du, v + s * dv
        if kernel:
            shift = shift + s * step[2 * n :]
    raise SolverError(f"Newton did not converge in {opts.max_iter} iterations (residual {history[-1]:.3e})", history)


# -- continuation ---------------------------------------------------------------


def _initial_defect(data: ModelData, cfg: Configuration, kernel: bool) -> float:
    """Residual of ``cfg`` for ``data``; in kernel mode after the best constant (a, b) shift."""
    res = eom_residual(data, cfg)
    r = np.concatenate([res.first.ravel(), res.second.ravel()])
    if not kernel:
        return float(np.max(np.abs(r)))
    sa, sb = shift_jvp(data, cfg)
    cols = np.column_stack(
        [np.concatenate([sa.first.ravel(), sa.second.ravel()]), np.concatenate([sb.first.ravel(), sb.second.ravel()])]
    )
    coef, *_ = np.linalg.lstsq(cols, -r, rcond=None)
    return float(np.max(np.abs(r + cols @ coef)))


def continuation(
    data0: ModelData, data1: ModelData, steps: int, opts: SolveOptions, initial: Configuration
) -> Branch:
    """Follow solutions along ``data(lam) = (1 - lam) data0 + lam data1``.

    Returns ``steps + 1`` points at ``lam = i / steps`` unless Newton fails,
    in which case the branch stops and ``failed_lambda`` records where.
    """
    if steps < 1:
        raise ValidationError("steps must be at least 1")
    kernel = has_constant_kernel(data0) if opts.kernel is None else bool(opts.kernel)
    defect = _initial_defect(data0, initial, kernel)
    if defect > opts.tol:
        raise ValidationError(f"initial configuration does not solve the starting data (residual {defect:.3e})")

    branch = Branch()
    cfg = initial
    for i in range(steps + 1):
        lam = i / steps
        data = data0.blend(data1, lam)
        try:
            result = newton_solve(data, cfg, opts)
        except SolverError as exc:
            branch.failed_lambda = lam
            branch.failure = str(exc)
            log.info("continuation stopped at lambda=%.6g: %s", lam, exc)
            break
        cfg = result.cfg
        branch.points.append(
            BranchPoint(
                lam=lam,
                cfg=cfg,
                data=result.data,
                mass=mass_squared(result.data, cfg),
                residual_norm=result.residual_norm,
                iterations=result.iterations,
            )
        )
    return branch


# -- inverse data construction --------------------------------------------------


def xy_data(grid: Grid, alpha: float, beta: float, flux5_sq, a, b) -> ModelData:
    """q=3 model data realizing ``2R - |F_1|^2 = a`` and ``|F_3|^2 - 2 T_string = b``."""
    b = np.asarray(b, dtype=float)
    return ModelData(
        grid=grid,
        q=3,
        alpha=alpha,
        beta=beta,
        R=0.5 * np.asarray(a, dtype=float),
        T_string=0.5 * np.maximum(-b, 0.0),
        flux_sq={3: np.maximum(b, 0.0), 5: np.asarray(flux5_sq, dtype=float)},
    )


def xy_residual(grid: Grid, alpha: float, beta: float, flux5_sq, a, b, cfg: Configuration) -> ResidualPair:
    return eom_residual(xy_data(grid, alpha, beta, flux5_sq, a, b), cfg)


def inverse_data_solve(
    grid: Grid, alpha: float, beta: float, flux5_sq, cfg: Configuration, check_tol: float = 1e-10
) -> InverseDataResult:
    """Pick ``a``, ``b`` pointwise so that ``cfg`` solves the q=3 system.

    Per node the unknowns enter through the matrix ``[[-u v^2, u], [-u^2 v, 0]]``
    (determinant ``u^3 v``), so the solve is explicit.
    """
    flux5_sq = grid.check(flux5_sq, "flux5_sq")
    zero = grid.constant(0.0)
    rest = xy_residual(grid, alpha, beta, flux5_sq, zero, zero, cfg)
    u, v = cfg.u, cfg.v
    a = rest.second / (u * u * v)
    b = (a * u * v * v - rest.first) / u
    check = xy_residual(grid, alpha, beta, flux5_sq, a, b, cfg).max_norm()
    scale = max(1.0, float(np.max(np.abs(a))), float(np.max(np.abs(b))))
    if check > check_tol * scale:
        raise SolverError(f"inverse data residual {check:.3e} exceeds {check_tol:.1e}")
    return InverseDataResult(a=a, b=b, residual=check)
