"""Uniform Cartesian grids and the conserved-variable fluid state.

Everything downstream works on cell-averaged conserved quantities: density,
momentum density per axis, and (optionally) an internal-energy density that
is transported passively.  Velocity is a *derived* quantity; the single place
where a division by density happens is :func:`recover_velocity`, which fails
loudly on any non-positive cell instead of clamping.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "Topology",
    "DomainSpec",
    "SpeciesFields",
    "FluidState",
    "VelocitySplit",
    "PositivityError",
    "split_velocity",
    "recover_velocity",
]


class Topology(str, enum.Enum):
    """Boundary handling for the box."""

    TORUS = "torus"
    OPEN_BOX = "open-box"


class PositivityError(RuntimeError):
    """Raised when a density field stops being strictly positive.

    Carries the offending cell and simulation time so a failed run can be
    diagnosed from the exception alone.
    """

    def __init__(self, cell: tuple[int, ...], value: float, time: float):
        self.cell = cell
        self.value = value
        self.time = time
        super().__init__(
            f"density {value:.6e} at cell {cell} (t={time:.6g}) is not strictly positive"
        )


@dataclass(frozen=True)
class DomainSpec:
    """A uniform grid of ``cells`` cubic cells of width ``epsilon`` per axis.

    The physical box is ``[origin_a, origin_a + cells_a * epsilon)`` along each
    axis ``a``; field arrays are indexed ``[ix]``, ``[ix, iy]`` or
    ``[ix, iy, iz]`` with cell centers at ``origin + (i + 0.5) * epsilon``.
    Frozen and hashable so solver kernels can be cached per domain.
    """

    cells: tuple[int, ...]
    epsilon: float
    topology: Topology = Topology.TORUS
    origin: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "cells", tuple(int(n) for n in self.cells))
        if self.origin is None:
            object.__setattr__(self, "origin", (0.0,) * len(self.cells))
        else:
            object.__setattr__(self, "origin", tuple(float(x) for x in self.origin))
        object.__setattr__(self, "epsilon", float(self.epsilon))
        object.__setattr__(self, "topology", Topology(self.topology))
        if not (1 <= self.dim <= 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim}")
        if len(self.origin) != self.dim:
            raise ValueError("origin length does not match number of axes")
        if not (math.isfinite(self.epsilon) and self.epsilon > 0):
            raise ValueError(f"epsilon must be positive and finite, got {self.epsilon}")
        if any(n < 3 for n in self.cells):
            raise ValueError(f"need at least 3 cells per axis, got {self.cells}")

    @property
    def dim(self) -> int:
        return len(self.cells)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.cells

    @property
    def extent(self) -> tuple[float, ...]:
        """Box side lengths, cells * epsilon per axis."""
        return tuple(n * self.epsilon for n in self.cells)

    @property
    def cell_volume(self) -> float:
        return self.epsilon**self.dim

    def axis_centers(self, axis: int) -> np.ndarray:
        """Cell-center coordinates along one axis."""
        n = self.cells[axis]
        return self.origin[axis] + (np.arange(n) + 0.5) * self.epsilon

    def center_mesh(self) -> tuple[np.ndarray, ...]:
        """Cell-center coordinate arrays, broadcast to the full grid shape."""
        axes = [self.axis_centers(a) for a in range(self.dim)]
        return tuple(np.meshgrid(*axes, indexing="ij"))


@dataclass
class SpeciesFields:
    """Conserved fields of one species on the grid.

    ``rho`` is the density, ``mom`` holds one momentum-density array per axis
    and ``energy`` is an optional passively transported energy density.
    """

    rho: np.ndarray
    mom: tuple[np.ndarray, ...]
    energy: np.ndarray | None = None

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=np.float64)
        self.mom = tuple(np.asarray(m, dtype=np.float64) for m in self.mom)
        if self.energy is not None:
            self.energy = np.asarray(self.energy, dtype=np.float64)
        for m in self.mom:
            if m.shape != self.rho.shape:
                raise ValueError("momentum array shape differs from density")
        if self.energy is not None and self.energy.shape != self.rho.shape:
            raise ValueError("energy array shape differs from density")
        if len(self.mom) != self.rho.ndim:
            raise ValueError(
                f"{len(self.mom)} momentum components for a {self.rho.ndim}-d grid"
            )

    @property
    def dim(self) -> int:
        return self.rho.ndim

    def arrays(self) -> tuple[np.ndarray, ...]:
        """All conserved arrays in a fixed order (rho, mom..., energy?)."""
        out = (self.rho, *self.mom)
        if self.energy is not None:
            out = out + (self.energy,)
        return out

    def copy(self) -> "SpeciesFields":
        return SpeciesFields(
            self.rho.copy(),
            tuple(m.copy() for m in self.mom),
            None if self.energy is None else self.energy.copy(),
        )


@dataclass
class FluidState:
    """One or more species sharing a grid, plus the simulation clock."""

    species: list[SpeciesFields]
    time: float = 0.0

    def __post_init__(self):
        if not self.species:
            raise ValueError("need at least one species")
        shape = self.species[0].rho.shape
        for s in self.species:
            if s.rho.shape != shape:
                raise ValueError("all species must live on the same grid")

    @property
    def dim(self) -> int:
        return self.species[0].dim

    def total_rho(self) -> np.ndarray:
        """Summed density of all species (the source of gravity)."""
        if len(self.species) == 1:
            return self.species[0].rho
        return sum(s.rho for s in self.species)

    def copy(self) -> "FluidState":
        return FluidState([s.copy() for s in self.species], self.time)


@dataclass(frozen=True)
class VelocitySplit:
    """Upwind decomposition of a velocity into nonnegative parts.

    ``plus - minus`` recovers the velocity and ``plus + minus`` its absolute
    value; at most one of the two is nonzero at any point.
    """

    plus: np.ndarray | float
    minus: np.ndarray | float


def split_velocity(u):
    """Split ``u`` into ``max(u, 0)`` and ``max(-u, 0)``.

    Works on scalars and arrays alike.  Raises ``ValueError`` on non-finite
    input -- NaNs here mean the state upstream is already broken.
    """
    arr = np.asarray(u, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("velocity contains non-finite values")
    plus = np.maximum(arr, 0.0)
    minus = np.maximum(-arr, 0.0)
    if np.isscalar(u) or arr.ndim == 0:
        return VelocitySplit(float(plus), float(minus))
    return VelocitySplit(plus, minus)


def recover_velocity(
    fields: SpeciesFields, time: float = float("nan")
) -> tuple[np.ndarray, ...]:
    """Per-axis velocity ``mom / rho`` of one species.

    This is the only spot in the package that divides by density.  Any cell
    with ``rho < 0`` (or a non-finite value) aborts with
    :class:`PositivityError` naming the cell; densities are never clamped or
    otherwise repaired.  Cells with ``rho == 0.0`` are genuine vacuum -- a
    fully drained cell underflows to exact zero after enough multiplicative
    decay -- and carry velocity zero (whatever denormal momentum underflow
    left behind is below any physical scale).
    """
    rho = fields.rho
    bad = (rho < 0.0) | ~np.isfinite(rho)
    if bad.any():
        idx = np.unravel_index(int(np.argmax(bad)), rho.shape)
        raise PositivityError(tuple(int(i) for i in idx), float(rho[idx]), time)
    vacuum = rho == 0.0
    if not vacuum.any():
        return tuple(m / rho for m in fields.mom)
    safe = np.where(vacuum, 1.0, rho)
    return tuple(np.where(vacuum, 0.0, m / safe) for m in fields.mom)
