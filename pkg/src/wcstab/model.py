"""Physical data, effective potential, equations of motion and the volume-modulus mass.

Conventions: ``u`` is the warp factor, ``v`` the conformal factor, ``flux_sq[p]``
the intensity |F_p|^2 of the p-form flux, ``T_string`` the smeared source term.
Every first variation of the effective potential equals one half of the
matching equation-of-motion residual paired with the test field::

    dV/du[psi] = 1/2 * integrate(first * psi)
    dV/dv[phi] = 1/2 * integrate(second * phi)

(``VARIATION_FACTOR`` below). Both residuals are written "lhs - rhs" of the
displayed equations of motion.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ValidationError
from .manifold import Grid

VARIATION_FACTOR = 0.5
FLUX_DEGREES = range(7)


def power(v: np.ndarray, exponent: float) -> np.ndarray:
    """``v**exponent`` for strictly positive ``v`` via exp/log."""
    if exponent == 0:
        return np.ones_like(v)
    return np.exp(exponent * np.log(v))


@dataclass(frozen=True)
class ModelData:
    grid: Grid
    q: int
    alpha: float
    beta: float
    R: np.ndarray
    T_string: np.ndarray
    flux_sq: dict = field(default_factory=dict)
    np_amplitude: float = 0.0
    np_rate: float = 0.0
    np_power: float = 0.0

    def __post_init__(self):
        g = self.grid
        if self.q not in (3, 5, 7):
            raise ValidationError(f"q must be an odd integer in {{3, 5, 7}}, got {self.q}")
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "beta", float(self.beta))
        object.__setattr__(self, "R", g.check(self.R, "R"))
        object.__setattr__(self, "T_string", g.check(self.T_string, "T_string"))
        flux = {}
        for p, f in self.flux_sq.items():
            p = int(p)
            if p not in FLUX_DEGREES:
                raise ValidationError(f"flux degree must lie in 0..6, got {p}")
            f = g.check(f, f"flux_sq[{p}]")
            if np.any(f < 0):
                raise ValidationError(f"flux_sq[{p}] must be non-negative pointwise (min {f.min():.3g})")
            flux[p] = f
        object.__setattr__(self, "flux_sq", flux)
        for name in ("np_amplitude", "np_rate", "np_power"):
            val = float(getattr(self, name))
            if not (np.isfinite(val) and val >= 0):
                raise ValidationError(f"{name} must be a non-negative real")
            object.__setattr__(self, name, val)
        if not (np.isfinite(self.alpha) and np.isfinite(self.beta)):
            raise ValidationError("alpha and beta must be finite")

    def flux(self, p: int) -> np.ndarray:
        f = self.flux_sq.get(p)
        return np.zeros(self.grid.shape) if f is None else f

    def flux_support(self) -> set[int]:
        """Degrees with a non-vanishing intensity."""
        return {p for p, f in self.flux_sq.items() if np.any(f != 0)}

    @property
    def top_degree(self) -> int:
        """Largest p carrying flux (-1 when no flux is switched on)."""
        return max(self.flux_support(), default=-1)

    def h_profile(self) -> np.ndarray:
        """``|F_1|^2 - 2 T_string - 2 R``, the coefficient of the reduced q=7 equation."""
        return self.flux(1) - 2 * self.T_string - 2 * self.R

    def replace(self, **changes) -> "ModelData":
        return replace(self, **changes)

    def shifted(self, da: float, db: float) -> "ModelData":
        """Add constants to ``a = 2R - |F_1|^2`` and ``b = |F_3|^2 - 2T_string``.

        The shifts are carried by ``R`` and ``T_string`` so fluxes stay non-negative.
        """
        if da == 0 and db == 0:
            return self
        return replace(self, R=self.R + 0.5 * da, T_string=self.T_string - 0.5 * db)

    def blend(self, other: "ModelData", lam: float) -> "ModelData":
        """Linear homotopy ``(1 - lam) * self + lam * other`` on all data."""
        if other.q != self.q or other.grid != self.grid:
            raise ValidationError("homotopy endpoints must share q and grid")

        def mix(a, b):
            return (1 - lam) * a + lam * b

        degrees = set(self.flux_sq) | set(other.flux_sq)
        return ModelData(
            grid=self.grid,
            q=self.q,
            alpha=mix(self.alpha, other.alpha),
            beta=mix(self.beta, other.beta),
            R=mix(self.R, other.R),
            T_string=mix(self.T_string, other.T_string),
            flux_sq={p: np.maximum(mix(self.flux(p), other.flux(p)), 0.0) for p in sorted(degrees)},
            np_amplitude=mix(self.np_amplitude, other.np_amplitude),
            np_rate=mix(self.np_rate, other.np_rate),
            np_power=mix(self.np_power, other.np_power),
        )


@dataclass(frozen=True)
class Configuration:
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        v = np.asarray(self.v, dtype=float)
        if u.shape != v.shape:
            raise ValidationError("u and v must live on the same grid")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise ValidationError("configuration contains non-finite values")
        if np.any(u <= 0) or np.any(v <= 0):
            raise ValidationError("u and v must be strictly positive pointwise")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @classmethod
    def constant(cls, grid: Grid, u: float = 1.0, v: float = 1.0) -> "Configuration":
        return cls(grid.constant(u), grid.constant(v))


@dataclass(frozen=True)
class ResidualPair:
    first: np.ndarray
    second: np.ndarray

    def max_norm(self) -> float:
        return float(max(np.max(np.abs(self.first)), np.max(np.abs(self.second))))


def _check(data: ModelData, cfg: Configuration) -> Grid:
    if cfg.u.shape != data.grid.shape:
        raise ValidationError("configuration and model data live on different grids")
    return data.grid


def _exponents(q: int) -> tuple[float, float]:
    return (q - 3) / 2, (q - 5) / 2


def effective_potential(data: ModelData, cfg: Configuration, newton_G: float, target_vol: float) -> float:
    """Effective potential with the two Lagrange-multiplier terms."""
    g = _check(data, cfg)
    if newton_G <= 0 or target_vol <= 0:
        raise ValidationError("newton_G and target_vol must be positive")
    u, v = cfg.u, cfg.v
    e1, _ = _exponents(data.q)
    u2 = u * u
    flux = sum(power(v, 3 - p) * f for p, f in data.flux_sq.items())
    density = (
        -u2 * v * v * data.R
        - 5 * g.grad_inner(v, u2 * v)
        - 3 * v * v * g.grad_inner(u, u)
        + 0.5 * u2 * flux
        - u2 * power(v, e1) * data.T_string
    )
    return (
        0.5 * g.integrate(density)
        + data.alpha * (1 / newton_G - g.integrate(u * v**3))
        + data.beta * (target_vol - g.integrate(v**3))
    )


def derived_constants(grid: Grid, cfg: Configuration) -> tuple[float, float]:
    """Newton's constant and volume implied by the two constraints."""
    return 1 / grid.integrate(cfg.u * cfg.v**3), grid.integrate(cfg.v**3)


def eom_residual(data: ModelData, cfg: Configuration) -> ResidualPair:
    g = _check(data, cfg)
    u, v = cfg.u, cfg.v
    e1, e2 = _exponents(data.q)
    lap_u, lap_v = g.laplacian(u), g.laplacian(v)
    gu, gv = g.gradient(u), g.gradient(v)
    gu_gv = sum(a * b for a, b in zip(gu, gv))
    gu_gu = sum(a * a for a in gu)
    T, R, a, b = data.T_string, data.R, data.alpha, data.beta

    flux1 = sum(power(v, 3 - p) * f for p, f in data.flux_sq.items())
    first = (
        10 * u * v * lap_v
        + 6 * v * v * lap_u
        + 12 * v * gu_gv
        - 2 * u * v * v * R
        + u * flux1
        - 2 * u * power(v, e1) * T
        - 2 * a * v**3
    )
    flux2 = sum((3 - p) * power(v, 2 - p) * f for p, f in data.flux_sq.items())
    second = (
        5 * g.laplacian(u * u * v)
        + 5 * u * u * lap_v
        - 2 * u * u * v * R
        - 6 * v * gu_gu
        + 0.5 * u * u * flux2
        - e1 * u * u * power(v, e2) * T
        - 6 * (a * u * v * v + b * v * v)
    )
    return ResidualPair(first, second)


def eom_jvp(data: ModelData, cfg: Configuration, du: np.ndarray, dv: np.ndarray) -> ResidualPair:
    """Directional derivative of ``eom_residual`` at ``cfg`` along ``(du, dv)``."""
    g = _check(data, cfg)
    u, v = cfg.u, cfg.v
    e1, e2 = _exponents(data.q)
    T, R, a, b = data.T_string, data.R, data.alpha, data.beta
    lap_u, lap_v = g.laplacian(u), g.laplacian(v)
    lap_du, lap_dv = g.laplacian(du), g.laplacian(dv)
    gu, gv, gdu, gdv = g.gradient(u), g.gradient(v), g.gradient(du), g.gradient(dv)

    def dot(x, y):
        return sum(p * q for p, q in zip(x, y))

    gu_gv = dot(gu, gv)
    d_first = (
        10 * (du * v * lap_v + u * dv * lap_v + u * v * lap_dv)
        + 6 * (2 * v * dv * lap_u + v * v * lap_du)
        + 12 * (dv * gu_gv + v * dot(gdv, gu) + v * dot(gv, gdu))
        - 2 * R * (du * v * v + 2 * u * v * dv)
        - 2 * T * (du * power(v, e1) + u * e1 * power(v, e1 - 1) * dv)
        - 6 * a * v * v * dv
    )
    for p, f in data.flux_sq.items():
        d_first = d_first + f * (du * power(v, 3 - p) + u * (3 - p) * power(v, 2 - p) * dv)

    d_second = (
        5 * g.laplacian(2 * u * v * du + u * u * dv)
        + 5 * (2 * u * du * lap_v + u * u * lap_dv)
        - 2 * R * (2 * u * v * du + u * u * dv)
        - 6 * (dv * dot(gu, gu) + 2 * v * dot(gu, gdu))
        - e1 * T * (2 * u * power(v, e2) * du + u * u * e2 * power(v, e2 - 1) * dv)
        - 6 * a * (v * v * du + 2 * u * v * dv)
        - 12 * b * v * dv
    )
    for p, f in data.flux_sq.items():
        d_second = d_second + 0.5 * (3 - p) * f * (
            2 * u * power(v, 2 - p) * du + u * u * (2 - p) * power(v, 1 - p) * dv
        )
    return ResidualPair(d_first, d_second)


def shift_jvp(data: ModelData, cfg: Configuration) -> tuple[ResidualPair, ResidualPair]:
    """Residual response to unit constant shifts of ``a`` and ``b`` (see ``ModelData.shifted``)."""
    u, v = cfg.u, cfg.v
    e1, e2 = _exponents(data.q)
    da = ResidualPair(-u * v * v, -u * u * v)
    db = ResidualPair(u * power(v, e1), 0.5 * e1 * u * u * power(v, e2))
    return da, db


def mass_terms(data: ModelData, cfg: Configuration) -> dict[str, float]:
    """Term-by-term contributions to the volume-modulus mass squared."""
    g = _check(data, cfg)
    u, v = cfg.u, cfg.v
    q = data.q
    u2 = u * u
    flux = sum((3 - p) * (2 - p) * power(v, 1 - p) * f for p, f in data.flux_sq.items())
    return {
        "curvature": 0.5 * g.integrate(-2 * u2 * data.R),
        "gradient_u": 0.5 * g.integrate(-6 * g.grad_inner(u, u)),
        "flux": 0.5 * g.integrate(0.5 * u2 * flux),
        "string": 0.5 * g.integrate(-(q - 3) * (q - 5) / 4 * u2 * power(v, (q - 7) / 2) * data.T_string),
        "alpha": -6 * data.alpha * g.integrate(u * v),
        "beta": -6 * data.beta * g.integrate(v),
    }


def mass_squared(data: ModelData, cfg: Configuration) -> float:
    """Second variation of the effective potential along the constant direction.

    Positive values mean the configuration is (meta)stable.
    """
    return float(sum(mass_terms(data, cfg).values()))


def mass_identity_rhs(data: ModelData, cfg: Configuration) -> float:
    """On-shell rewriting of the mass for q=3 with fluxes of degree 1, 3 and 5.

    Obtained by dividing the second equation of motion by ``v`` and
    integrating; equals ``mass_squared`` only on solutions.
    """
    g = _check(data, cfg)
    if data.q != 3:
        raise ValidationError("mass identity holds for q=3 only")
    if not data.flux_support() <= {1, 3, 5}:
        raise ValidationError(f"mass identity needs flux support in {{1, 3, 5}}, got {sorted(data.flux_support())}")
    u, v = cfg.u, cfg.v
    u2 = u * u
    return (
        -10 * g.integrate(u2 * g.grad_inner(v, v) / (v * v))
        + g.integrate(u2 * data.R)
        + 3 * g.integrate(g.grad_inner(u, u))
        - 0.5 * g.integrate(u2 * data.flux(1))
        + 2.5 * g.integrate(u2 * power(v, -4) * data.flux(5))
    )


def nonperturbative(data: ModelData, v0: float) -> tuple[float, float]:
    """Value and second derivative of ``B exp(-2 a v^4) / v^s`` at the modulus ``v0``."""
    if not v0 > 0:
        raise ValidationError("volume modulus must be positive")
    B, a, s = data.np_amplitude, data.np_rate, data.np_power
    value = B * np.exp(-2 * a * v0**4) * v0 ** (-s)
    slope = -8 * a * v0**3 - s / v0  # d log V / dv
    curvature = -24 * a * v0**2 + s / v0**2  # d^2 log V / dv^2
    return float(value), float(value * (slope**2 + curvature))
