"""Flat periodic torus with spectral differential operators and quadrature.

The internal manifold is represented by ``dim`` resolved periodic axes; the
remaining flat directions only contribute a constant factor ``extra_volume``
to every integral. Scalar fields are plain ``numpy`` arrays of shape
``grid.shape`` (row-major).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class Grid:
    points_per_axis: tuple[int, ...]
    lengths: tuple[float, ...]
    extra_volume: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "points_per_axis", tuple(int(n) for n in self.points_per_axis))
        object.__setattr__(self, "lengths", tuple(float(L) for L in self.lengths))
        object.__setattr__(self, "extra_volume", float(self.extra_volume))
        if not 1 <= len(self.points_per_axis) <= 3:
            raise ValidationError("grid must have between 1 and 3 resolved axes")
        if len(self.lengths) != len(self.points_per_axis):
            raise ValidationError("lengths and points_per_axis differ in length")
        for n in self.points_per_axis:
            if n < 4 or n % 2:
                raise ValidationError(f"points per axis must be even and >= 4, got {n}")
        if not all(np.isfinite(L) and L > 0 for L in self.lengths):
            raise ValidationError(f"lengths must be positive, got {self.lengths}")
        if not (np.isfinite(self.extra_volume) and self.extra_volume > 0):
            raise ValidationError("extra_volume must be positive")

    @property
    def dim(self) -> int:
        return len(self.points_per_axis)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.points_per_axis

    @property
    def size(self) -> int:
        return int(np.prod(self.points_per_axis))

    @property
    def cell_volume(self) -> float:
        return float(np.prod([L / n for L, n in zip(self.lengths, self.points_per_axis)]))

    @property
    def total_volume(self) -> float:
        return self.extra_volume * float(np.prod(self.lengths))

    def coordinates(self) -> list[np.ndarray]:
        """Node coordinates, one broadcastable array per axis (``indexing='ij'``)."""
        axes = [np.arange(n) * (L / n) for n, L in zip(self.points_per_axis, self.lengths)]
        return list(np.meshgrid(*axes, indexing="ij"))

    # -- spectral machinery -------------------------------------------------

    @cached_property
    def _wavenumbers(self) -> list[np.ndarray]:
        ks = []
        last = self.dim - 1
        for axis, (n, L) in enumerate(zip(self.points_per_axis, self.lengths)):
            if axis == last:
                k = 2 * np.pi * np.fft.rfftfreq(n, d=L / n)
            else:
                k = 2 * np.pi * np.fft.fftfreq(n, d=L / n)
            shape = [1] * self.dim
            shape[axis] = k.size
            ks.append(k.reshape(shape))
        return ks

    @cached_property
    def _derivative_symbols(self) -> list[np.ndarray]:
        # Nyquist mode has no real first derivative at the nodes; drop it.
        syms = []
        for axis, (k, n) in enumerate(zip(self._wavenumbers, self.points_per_axis)):
            ik = 1j * k.copy()
            idx = [slice(None)] * self.dim
            idx[axis] = k.size - 1 if axis == self.dim - 1 else n // 2
            ik[tuple(idx)] = 0.0
            syms.append(ik)
        return syms

    @cached_property
    def k_squared(self) -> np.ndarray:
        """|k|^2 on the half-spectrum layout used by ``rfftn``."""
        return sum(k**2 for k in self._wavenumbers)

    def forward(self, f: np.ndarray) -> np.ndarray:
        return np.fft.rfftn(f)

    def inverse(self, fh: np.ndarray) -> np.ndarray:
        return np.fft.irfftn(fh, s=self.shape, axes=tuple(range(self.dim)))

    # -- operators ------------------------------------------------------------

    def check(self, f, name="field") -> np.ndarray:
        f = np.asarray(f, dtype=float)
        if f.shape != self.shape:
            raise ValidationError(f"{name} has shape {f.shape}, grid expects {self.shape}")
        if not np.all(np.isfinite(f)):
            raise ValidationError(f"{name} contains non-finite values")
        return f

    def constant(self, value: float) -> np.ndarray:
        return np.full(self.shape, float(value))

    def laplacian(self, f) -> np.ndarray:
        """Spectral Laplacian, multiplier ``-|k|^2`` (negative semi-definite)."""
        f = self.check(f)
        return self.inverse(-self.k_squared * self.forward(f))

    def gradient(self, f) -> list[np.ndarray]:
        f = self.check(f)
        fh = self.forward(f)
        return [self.inverse(ik * fh) for ik in self._derivative_symbols]

    def divergence(self, components) -> np.ndarray:
        if len(components) != self.dim:
            raise ValidationError("divergence needs one component per axis")
        out = np.zeros(self.shape)
        for ik, c in zip(self._derivative_symbols, components):
            out += self.inverse(ik * self.forward(self.check(c)))
        return out

    def grad_inner(self, f, g) -> np.ndarray:
        """Pointwise ``grad f . grad g``."""
        gf = self.gradient(f)
        gg = gf if g is f else self.gradient(g)
        return sum(a * b for a, b in zip(gf, gg))

    def integrate(self, f) -> float:
        f = self.check(f)
        return float(np.sum(f)) * self.cell_volume * self.extra_volume

    def mean(self, f) -> float:
        return float(np.mean(self.check(f)))

    def solve_helmholtz(self, rhs, diffusion: float, shift: float) -> np.ndarray:
        """Solve ``diffusion * lap(x) - shift * x = rhs`` for ``shift > 0``."""
        if shift <= 0:
            raise ValidationError("shift must be positive for an invertible Helmholtz operator")
        rhs = self.check(rhs, "rhs")
        return self.inverse(self.forward(rhs) / (-diffusion * self.k_squared - shift))

    def header(self) -> dict:
        return {
            "dim": self.dim,
            "points_per_axis": list(self.points_per_axis),
            "lengths": list(self.lengths),
            "extra_volume": self.extra_volume,
        }


def dump_field(path, grid: Grid, f) -> None:
    """Write a JSON header line followed by little-endian float64 values."""
    f = grid.check(f)
    with open(path, "wb") as fh:
        fh.write(json.dumps(grid.header(), sort_keys=True).encode() + b"\n")
        fh.write(np.ascontiguousarray(f, dtype="<f8").tobytes())


def load_field(path) -> tuple[Grid, np.ndarray]:
    raw = Path(path).read_bytes()
    head, _, body = raw.partition(b"\n")
    meta = json.loads(head)
    grid = Grid(meta["points_per_axis"], meta["lengths"], meta["extra_volume"])
    if meta["dim"] != grid.dim:
        raise ValidationError("dim in header disagrees with points_per_axis")
    values = np.frombuffer(body, dtype="<f8")
    if values.size != grid.size:
        raise ValidationError(f"expected {grid.size} values, found {values.size}")
    return grid, values.reshape(grid.shape).astype(float)
