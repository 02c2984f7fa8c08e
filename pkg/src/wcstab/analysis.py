"""Stability classification, integral identities, volume bounds and operator-norm proxies."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.sparse.linalg import LinearOperator, eigsh

from .errors import ValidationError
from .manifold import Grid
from .model import (
    Configuration,
    ModelData,
    derived_constants,
    eom_residual,
    mass_identity_rhs,
    mass_terms,
    nonperturbative,
    power,
)
from .solvers import reduced_residual

ONSHELL_TOL = 1e-8
NP_RATIO_WARN = 0.01
SOBOLEV_RATIO_LIMIT = 26.0

CERTIFICATE_NOTE = (
    "instability certificate: integrating the reduced equation divided by v_star gives "
    "integral(h - 2 alpha v_star) = -10 integral(|grad v_star|^2 / v_star^2); a unit "
    "coefficient on the gradient integral does not satisfy the identity"
)
MASS_AT_REDUCED_NOTE = (
    "at (v_star, u=1) with beta = -2 alpha/3 the mass equals 1/2 integral(h - 4 alpha v_star), "
    "i.e. half the first certificate component minus alpha integral(v_star)"
)


@dataclass
class DiagnosticsReport:
    k1_proxy: float
    k2_proxy: float
    ratio: float
    s_proxy: int

    @property
    def ratio_ok(self) -> bool:
        return self.ratio < SOBOLEV_RATIO_LIMIT


@dataclass
class StabilityReport:
    mass: float
    mass_terms: dict
    newton_G: float
    volume: float
    identity_residuals: dict
    flags: dict
    np_ratio: float | None
    certificate: list | None
    volume_bound: dict
    diagnostics: dict
    notes: list = field(default_factory=list)

    @property
    def stable(self) -> bool:
        return self.mass > 0

    def to_dict(self) -> dict:
        return asdict(self)


class VolumeBound(NamedTuple):
    volume: float
    bound: float
    satisfied: bool
    certificate: str | None


def _require_onshell(data: ModelData, cfg: Configuration, tol: float) -> float:
    r = eom_residual(data, cfg).max_norm()
    if r > tol:
        raise ValidationError(f"configuration is off-shell (residual {r:.3e} > {tol:.1e})")
    return r


def reduced_applicable(data: ModelData, cfg: Configuration | None = None) -> bool:
    """q=7 data with only |F_1|^2 switched on (and, if given, ``u == 1``)."""
    ok = data.q == 7 and data.flux_support() <= {1} and data.alpha > 0
    if cfg is not None:
        ok = ok and bool(np.allclose(cfg.u, 1.0, rtol=0.0, atol=1e-12))
    return ok


def instability_certificate(grid: Grid, v_star, alpha: float, h, tol: float = ONSHELL_TOL) -> tuple[float, float]:
    """``(integral(h - 2 alpha v_star), -10 integral(|grad v_star|^2 / v_star^2))``.

    Both components coincide for solutions of the reduced equation and are
    non-positive; they vanish exactly when ``v_star`` is constant.
    """
    v = grid.check(v_star, "v_star")
    if np.any(v <= 0):
        raise ValidationError("v_star must be positive")
    res = float(np.max(np.abs(reduced_residual(grid, v, alpha, h))))
    if res > tol:
        raise ValidationError(f"v_star does not solve the reduced equation (residual {res:.3e})")
    first = grid.integrate(h - 2 * alpha * v)
    second = -10 * grid.integrate(grid.grad_inner(v, v) / (v * v))
    return first, second


def lemma_identity_check(data: ModelData, cfg: Configuration, tol: float = ONSHELL_TOL) -> float:
    """Defect of the integral identity tying alpha, beta and the volume together.

    Returns ``LHS - RHS`` where
    ``LHS = integral(u^2/2 sum_p (1-p) v^(3-p) |F_p|^2 + (7-q)/2 u^2 v^((q-3)/2) T_string)``
    and ``RHS = 4 alpha / G_N + 6 beta Vol``.
    """
    _require_onshell(data, cfg, tol)
    g = data.grid
    u, v, q = cfg.u, cfg.v, data.q
    u2 = u * u
    flux = sum((1 - p) * power(v, 3 - p) * f for p, f in data.flux_sq.items())
    lhs = g.integrate(0.5 * u2 * flux + 0.5 * (7 - q) * u2 * power(v, (q - 3) / 2) * data.T_string)
    newton_G, volume = derived_constants(g, cfg)
    return lhs - (4 * data.alpha / newton_G + 6 * data.beta * volume)


def pointwise_certificate(data: ModelData) -> str | None:
    """Name of the pointwise condition forcing ``4 alpha/G_N + 6 beta Vol <= 0``, if any holds."""
    no_f0 = not np.any(data.flux(0) != 0)
    if data.q == 3 and no_f0 and np.all(2 * data.T_string - data.flux(3) <= 0):
        return "q3_flux_dominates_source"
    if data.q == 7 and no_f0:
        return "q7_no_F0"
    return None


def volume_bound_check(data: ModelData, cfg: Configuration, tol: float = ONSHELL_TOL) -> VolumeBound:
    """Compare ``Vol`` with ``2 alpha / (3 G_N |beta|)``."""
    _require_onshell(data, cfg, tol)
    newton_G, volume = derived_constants(data.grid, cfg)
    alpha, beta = data.alpha, data.beta
    cert = pointwise_certificate(data)
    if cert and alpha > 0 and beta >= 0:
        raise ValidationError(
            f"inconsistent data: certificate {cert} forces beta < 0 when alpha > 0, got beta={beta}"
        )
    if alpha <= 0:
        bound = 0.0
    elif beta == 0:
        bound = math.inf
    else:
        bound = 2 * alpha / (3 * newton_G * abs(beta))
    satisfied = bool(volume >= bound * (1 - 1e-10))
    return VolumeBound(volume, bound, satisfied, cert)


# -- operator-norm proxies ------------------------------------------------------


def _mode_table(grid: Grid) -> np.ndarray:
    """|k| for every wavevector of the half-spectrum layout."""
    return np.sqrt(grid.k_squared)


def k1_mode_scan(grid: Grid, s_proxy: int) -> float:
    """Norm of the Laplacian from discrete H^s (mean-free) to H^(s-2), by scanning modes."""
    k2 = grid.k_squared[grid.k_squared > 0]
    weight = k2 * (1 + k2) ** ((s_proxy - 2) / 2) / (1 + k2) ** (s_proxy / 2)
    return float(weight.max())


def k1_lanczos(grid: Grid, s_proxy: int, seed: int = 0, max_iter: int = 20000, rtol: float = 1e-15) -> float:
    """Same norm as ``k1_mode_scan`` from a Krylov (Lanczos) iteration on ``T^* T``.

    Plain power iteration stalls when several modes share nearly the top
    singular value, which is the rule on multi-axis grids; Lanczos does not.
    """
    k2 = grid.k_squared
    sym = np.where(k2 > 0, k2 * (1 + k2) ** ((s_proxy - 2) / 2) / (1 + k2) ** (s_proxy / 2), 0.0)
    n = grid.size

    def apply(x):
        return grid.inverse(sym * sym * grid.forward(np.reshape(x, grid.shape))).ravel()

    if n <= 2:
        return k1_mode_scan(grid, s_proxy)
    x0 = np.random.default_rng(seed).standard_normal(n)
    top = eigsh(LinearOperator((n, n), matvec=apply, dtype=float), k=1, which="LA", v0=x0, tol=rtol, maxiter=max_iter)[0]
    return math.sqrt(float(top[0]))


def k2_mode_scan(grid: Grid, s_proxy: int) -> float:
    """Largest C^1-norm over H^s-norm ratio among resolved cosine probes.

    Probes are ``cos(k . x)`` with every |k_i| strictly below Nyquist; the
    C^1 norm is ``sup|f| + sup|grad f| = 1 + |k|``.
    """
    kmag = _mode_table(grid)
    below = np.ones(kmag.shape, dtype=bool)
    for axis, n in enumerate(grid.points_per_axis):
        k_axis = np.abs(grid._wavenumbers[axis])
        nyq = 2 * np.pi * (n // 2) / grid.lengths[axis]
        below &= k_axis < nyq * (1 - 1e-12)
    kmag = kmag[below]
    vol = grid.total_volume
    l2 = np.where(kmag > 0, np.sqrt(vol / 2), np.sqrt(vol))
    ratio = (1 + kmag) / ((1 + kmag**2) ** (s_proxy / 2) * l2)
    return float(ratio.max())


def operator_norm_diagnostics(grid: Grid, s_proxy: int = 4) -> DiagnosticsReport:
    """Heuristic discrete stand-ins for the Laplacian norm and the C^1 embedding constant."""
    if s_proxy < 2:
        raise ValidationError("s_proxy must be at least 2")
    k1 = k1_mode_scan(grid, s_proxy)
    k2 = k2_mode_scan(grid, s_proxy)
    return DiagnosticsReport(k1_proxy=k1, k2_proxy=k2, ratio=k2 / k1, s_proxy=s_proxy)


# -- full report --------------------------------------------------------------------


def _finite_or_none(x):
    return float(x) if x is not None and math.isfinite(x) else None


def stability_report(
    data: ModelData,
    cfg: Configuration,
    onshell_tol: float = ONSHELL_TOL,
    s_proxy: int = 4,
    np_threshold: float = NP_RATIO_WARN,
) -> StabilityReport:
    g = data.grid
    terms = mass_terms(data, cfg)
    mass = float(sum(terms.values()))
    newton_G, volume = derived_constants(g, cfg)
    eom = eom_residual(data, cfg).max_norm()
    onshell = eom <= onshell_tol
    notes = []

    identities = {"eom_residual": eom, "mass_identity": None, "volume_identity": None, "instability_certificate": None}
    if onshell:
        identities["volume_identity"] = abs(lemma_identity_check(data, cfg, onshell_tol))
        if data.q == 3 and data.flux_support() <= {1, 3, 5}:
            identities["mass_identity"] = abs(mass - mass_identity_rhs(data, cfg))

    certificate = None
    flags = {
        "stable": mass > 0,
        "solvability": None,
        "sub_super_ratio": None,
        "sobolev_ratio_proxy": None,
        "volume_inequality": None,
        "np_negligible": None,
    }
    if reduced_applicable(data):
        h = data.h_profile()
        flags["solvability"] = bool(np.all(h - 4 * data.alpha * cfg.v < 0))
        if np.all(h > 0):
            flags["sub_super_ratio"] = bool(h.max() / h.min() < 2)
        if reduced_applicable(data, cfg):
            try:
                first, second = instability_certificate(g, cfg.v, data.alpha, h, onshell_tol)
            except ValidationError:
                pass
            else:
                certificate = [first, second]
                scale = max(abs(first), abs(second))
                identities["instability_certificate"] = abs(first - second) / scale if scale > 0 else 0.0
                notes += [CERTIFICATE_NOTE, MASS_AT_REDUCED_NOTE]

    diag = operator_norm_diagnostics(g, s_proxy)
    flags["sobolev_ratio_proxy"] = diag.ratio_ok

    lagrange = 4 * data.alpha / newton_G + 6 * data.beta * volume
    flags["volume_inequality"] = bool(lagrange <= onshell_tol * max(1.0, volume))
    bound = {"volume": volume, "bound": None, "satisfied": None, "certificate": pointwise_certificate(data)}
    if onshell:
        try:
            vb = volume_bound_check(data, cfg, onshell_tol)
        except ValidationError as exc:
            notes.append(f"volume bound: {exc}")
        else:
            bound.update(bound=_finite_or_none(vb.bound), satisfied=vb.satisfied)

    vbar = float(cfg.v.mean())
    _, np_curv = nonperturbative(data, vbar)
    if mass != 0:
        np_ratio = abs(np_curv) / abs(mass)
    else:
        np_ratio = 0.0 if np_curv == 0 else None
    flags["np_negligible"] = None if np_ratio is None else bool(np_ratio <= np_threshold)

    return StabilityReport(
        mass=mass,
        mass_terms=terms,
        newton_G=newton_G,
        volume=volume,
        identity_residuals=identities,
        flags=flags,
        np_ratio=np_ratio,
        certificate=certificate,
        volume_bound=bound,
        diagnostics={"k1_proxy": diag.k1_proxy, "k2_proxy": diag.k2_proxy, "ratio": diag.ratio, "s_proxy": s_proxy},
        notes=notes,
    )
