"""Experiment configuration: parsing, scenario presets and field synthesis.

A field spec is either a number or ``{"constant": c, "modes": [...]}`` with
modes ``{"wavevector": [k_1, ...], "amplitude": A, "phase": phi}``; the field is
``c + sum A sin(sum_i 2 pi k_i x_i / L_i + phi)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ValidationError
from .manifold import Grid
from .model import Configuration, ModelData
from .solvers import SolveOptions

SCENARIOS = ("q7_unstable", "q3_balance", "q3_beta_negative", "inverse_data", "custom")


@dataclass(frozen=True)
class Mode:
    wavevector: tuple[int, ...]
    amplitude: float
    phase: float = 0.0


@dataclass(frozen=True)
class FieldSpec:
    constant: float = 0.0
    modes: tuple[Mode, ...] = ()

    @classmethod
    def parse(cls, raw) -> "FieldSpec":
        if raw is None:
            return cls()
        if isinstance(raw, (int, float)) and not isinstance(raw, bool):
            return cls(float(raw))
        if not isinstance(raw, dict):
            raise ValidationError(f"field spec must be a number or an object, got {raw!r}")
        unknown = set(raw) - {"constant", "modes"}
        if unknown:
            raise ValidationError(f"unknown field spec keys {sorted(unknown)}")
        modes = []
        for m in raw.get("modes", []):
            try:
                modes.append(Mode(tuple(int(k) for k in m["wavevector"]), float(m["amplitude"]), float(m.get("phase", 0.0))))
            except (KeyError, TypeError, ValueError) as exc:
                raise ValidationError(f"bad mode spec {m!r}: {exc}") from None
        return cls(float(raw.get("constant", 0.0)), tuple(modes))

    def to_dict(self) -> dict:
        return {
            "constant": self.constant,
            "modes": [{"wavevector": list(m.wavevector), "amplitude": m.amplitude, "phase": m.phase} for m in self.modes],
        }

    def scaled_modes(self, factor: float) -> "FieldSpec":
        return replace(self, modes=tuple(replace(m, amplitude=m.amplitude * factor) for m in self.modes))

    def synthesize(self, grid: Grid) -> np.ndarray:
        x = grid.coordinates()
        out = grid.constant(self.constant)
        for m in self.modes:
            if len(m.wavevector) != grid.dim:
                raise ValidationError(f"wavevector {m.wavevector} does not match grid dimension {grid.dim}")
            theta = sum(2 * np.pi * k * xi / L for k, xi, L in zip(m.wavevector, x, grid.lengths))
            out = out + m.amplitude * np.sin(theta + m.phase)
        return out


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str
    points_per_axis: tuple[int, ...]
    lengths: tuple[float, ...]
    extra_volume: float = 1.0
    q: int = 3
    alpha: float = 0.0
    beta: float = 0.0
    flux: dict = field(default_factory=dict)
    R: FieldSpec = FieldSpec()
    T_string: FieldSpec = FieldSpec()
    np_amplitude: float = 0.0
    np_rate: float = 0.0
    np_power: float = 0.0
    perturbation_degree: int = 3
    perturbation: FieldSpec = FieldSpec()
    pert_amp: float = 0.0
    flux_amp: float = 1.0
    initial_u: FieldSpec = FieldSpec(1.0)
    initial_v: FieldSpec = FieldSpec(1.0)
    tol: float = 1e-10
    max_iter: int = 50
    damping: float = 1.0
    l1: float = 0.0
    l2: float = 0.0
    seed: int = 0

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ValidationError("config must be a JSON object")
        try:
            scenario = raw.get("scenario", "custom")
            if scenario not in SCENARIOS:
                raise ValidationError(f"unknown scenario {scenario!r}; expected one of {SCENARIOS}")
            grid = raw["grid"]
            model = raw.get("model", {})
            pert = raw.get("perturbation", {})
            init = raw.get("initial", {})
            solver = raw.get("solver", {})
            npc = model.get("np", {})
            return cls(
                scenario=scenario,
                points_per_axis=tuple(int(n) for n in grid["points_per_axis"]),
                lengths=tuple(float(L) for L in grid["lengths"]),
                extra_volume=float(grid.get("extra_volume", 1.0)),
                q=int(model.get("q", 7 if scenario == "q7_unstable" else 3)),
                alpha=float(model.get("alpha", 0.0)),
                beta=float(model.get("beta", 0.0)),
                flux={int(p): FieldSpec.parse(s) for p, s in model.get("flux", {}).items()},
                R=FieldSpec.parse(model.get("R")),
                T_string=FieldSpec.parse(model.get("T_string")),
                np_amplitude=float(npc.get("amplitude", 0.0)),
                np_rate=float(npc.get("rate", 0.0)),
                np_power=float(npc.get("power", 0.0)),
                perturbation_degree=int(pert.get("degree", 3)),
                perturbation=FieldSpec.parse(pert.get("field")),
                pert_amp=float(pert.get("amplitude", 0.0)),
                flux_amp=float(model.get("flux_amp", 1.0)),
                initial_u=FieldSpec.parse(init.get("u", 1.0)),
                initial_v=FieldSpec.parse(init.get("v", 1.0)),
                tol=float(solver.get("tol", 1e-10)),
                max_iter=int(solver.get("max_iter", 50)),
                damping=float(solver.get("damping", 1.0)),
                l1=float(solver.get("l1", 0.0)),
                l2=float(solver.get("l2", 0.0)),
                seed=int(raw.get("seed", 0)),
            )
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(f"malformed config: {exc!r}") from None

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "grid": {
                "points_per_axis": list(self.points_per_axis),
                "lengths": list(self.lengths),
                "extra_volume": self.extra_volume,
            },
            "model": {
                "q": self.q,
                "alpha": self.alpha,
                "beta": self.beta,
                "flux": {str(p): s.to_dict() for p, s in sorted(self.flux.items())},
                "flux_amp": self.flux_amp,
                "R": self.R.to_dict(),
                "T_string": self.T_string.to_dict(),
                "np": {"amplitude": self.np_amplitude, "rate": self.np_rate, "power": self.np_power},
            },
            "perturbation": {
                "degree": self.perturbation_degree,
                "field": self.perturbation.to_dict(),
                "amplitude": self.pert_amp,
            },
            "initial": {"u": self.initial_u.to_dict(), "v": self.initial_v.to_dict()},
            "solver": {
                "tol": self.tol,
                "max_iter": self.max_iter,
                "damping": self.damping,
                "l1": self.l1,
                "l2": self.l2,
            },
        }

    def with_param(self, name: str, value: float) -> "ExperimentConfig":
        if name not in ("alpha", "beta", "flux_amp", "pert_amp"):
            raise ValidationError(f"cannot sweep {name!r}")
        return replace(self, **{name: float(value)})

    # -- resolution -----------------------------------------------------------

    def grid(self) -> Grid:
        return Grid(self.points_per_axis, self.lengths, self.extra_volume)

    def options(self) -> SolveOptions:
        return SolveOptions(tol=self.tol, max_iter=self.max_iter, damping=self.damping, mean_u=self.l1, mean_v=self.l2)

    def initial(self, grid: Grid | None = None) -> Configuration:
        grid = grid or self.grid()
        return Configuration(self.initial_u.synthesize(grid), self.initial_v.synthesize(grid))

    def base_model(self, grid: Grid | None = None) -> ModelData:
        """Model data with the scenario preset applied and no perturbation."""
        grid = grid or self.grid()
        q, alpha, beta = self.q, self.alpha, self.beta
        flux = {p: s.scaled_modes(self.flux_amp).synthesize(grid) for p, s in self.flux.items()}
        R = self.R.synthesize(grid)
        T = self.T_string.synthesize(grid)
        if self.scenario == "q7_unstable":
            q, beta = 7, -2 * alpha / 3
        elif self.scenario == "q3_balance":
            q = 3
            flux[3] = 2 * T
        elif self.scenario == "q3_beta_negative":
            q = 3
            flux[3] = 2 * T - 6 * beta
            R = 0.5 * (flux.get(1, grid.constant(0.0)) - 6 * beta)
        elif self.scenario == "inverse_data":
            q = 3
        return ModelData(
            grid=grid,
            q=q,
            alpha=alpha,
            beta=beta,
            R=R,
            T_string=T,
            flux_sq=flux,
            np_amplitude=self.np_amplitude,
            np_rate=self.np_rate,
            np_power=self.np_power,
        )

    def model(self, grid: Grid | None = None) -> ModelData:
        base = self.base_model(grid)
        if self.pert_amp == 0 or not self.perturbation.modes and self.perturbation.constant == 0:
            return base
        p = self.perturbation_degree
        flux = dict(base.flux_sq)
        flux[p] = base.flux(p) + self.pert_amp * self.perturbation.synthesize(base.grid)
        return base.replace(flux_sq=flux)
