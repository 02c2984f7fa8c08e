"""Finite-difference consistency checks between the potential, residuals and mass."""

from __future__ import annotations

import numpy as np

from .manifold import Grid
from .model import Configuration, ModelData, derived_constants, effective_potential, eom_residual, VARIATION_FACTOR

EPSILONS = (1e-2, 1e-3, 1e-4)
ROUNDOFF_FLOOR = 1e-9


def random_smooth_field(grid: Grid, rng: np.random.Generator, amplitude: float = 1.0, max_mode: int = 3) -> np.ndarray:
    """Band-limited field with a handful of random low modes."""
    x = grid.coordinates()
    out = np.zeros(grid.shape)
    for _ in range(4):
        k = rng.integers(-max_mode, max_mode + 1, size=grid.dim)
        theta = sum(2 * np.pi * ki * xi / L for ki, xi, L in zip(k, x, grid.lengths))
        out += rng.uniform(-1, 1) * np.cos(theta + rng.uniform(0, 2 * np.pi))
    scale = np.max(np.abs(out))
    return amplitude * out / scale if scale > 0 else out


def variational_errors(data: ModelData, cfg: Configuration, psi_u=None, psi_v=None, eps=EPSILONS) -> np.ndarray:
    """|central difference of V_eff along (psi_u, psi_v) - 1/2 integral(residual . psi)| per step.

    ``G_N`` and the target volume are frozen at ``cfg`` so the potential is a
    plain functional of the fields.
    """
    g = data.grid
    psi_u = np.zeros(g.shape) if psi_u is None else g.check(psi_u, "psi_u")
    psi_v = np.zeros(g.shape) if psi_v is None else g.check(psi_v, "psi_v")
    newton_G, vol = derived_constants(g, cfg)
    res = eom_residual(data, cfg)
    pairing = VARIATION_FACTOR * g.integrate(res.first * psi_u + res.second * psi_v)

    def V(e):
        return effective_potential(data, Configuration(cfg.u + e * psi_u, cfg.v + e * psi_v), newton_G, vol)

    return np.array([abs((V(e) - V(-e)) / (2 * e) - pairing) for e in eps])


def observed_orders(errors, eps=EPSILONS) -> np.ndarray:
    errors = np.asarray(errors)
    eps = np.asarray(eps)
    return np.log(errors[:-1] / errors[1:]) / np.log(eps[:-1] / eps[1:])


def variational_order(errors, eps=EPSILONS, floor=ROUNDOFF_FLOOR) -> float:
    """Smallest observed order over consecutive steps, ignoring steps lost in round-off.

    ``floor`` is a scalar or one noise level per step; a pair of steps only
    counts when its finer error lies above the floor. When no pair counts the
    central difference is exact to round-off (V_eff is quadratic along the
    direction) and ``inf`` is returned.
    """
    errors = np.asarray(errors, dtype=float)
    floor = np.broadcast_to(np.asarray(floor, dtype=float), errors.shape)
    orders = observed_orders(np.maximum(errors, 1e-300), eps)
    usable = errors[1:] > floor[1:]
    if not np.any(usable):
        return float("inf")
    return float(orders[usable].min())


def roundoff_levels(data: ModelData, cfg: Configuration, eps=EPSILONS, safety: float = 100.0) -> np.ndarray:
    """Cancellation noise of a central difference of V_eff at each step size."""
    newton_G, vol = derived_constants(data.grid, cfg)
    scale = abs(effective_potential(data, cfg, newton_G, vol)) + 1.0
    return safety * np.finfo(float).eps * scale / np.asarray(eps)


def mass_second_difference(data: ModelData, cfg: Configuration, eps: float = 1e-4) -> float:
    """Second central difference of the potential along ``v -> v + eps``."""
    newton_G, vol = derived_constants(data.grid, cfg)

    def V(e):
        return effective_potential(data, Configuration(cfg.u, cfg.v + e), newton_G, vol)

    return (V(eps) - 2 * V(0.0) + V(-eps)) / eps**2
