"""Self-gravity of the grid fluid.

In one dimension the potential gradient is the plain cumulative integral
``4 pi G * integral of rho``; no smoothing is needed.  In two and three
dimensions the density is first smoothed with a compact bump of radius
``epsilon**alpha`` (``0 < alpha <= 1/3``) and then convolved with the
free-space Green-function gradient

    2 G * d / |d|^2          (2-d, so that  laplacian(Phi) = 4 pi G rho)
    G * d / |d|^3            (3-d)

sampled at cell-center offsets with a zero self-cell.  On a torus the kernel
is summed over the 3^dim nearest periodic images and the mean density is
subtracted from the source, which fixes the additive constant so the field
has zero spatial average.

The production path evaluates the (exactly equivalent) combined kernel
``mollifier * green`` with FFTs; kernels are cached per (domain, config).
Everything is deterministic: no threading, no iteration-order dependence.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.fft
import scipy.ndimage
import scipy.signal

from .grid import DomainSpec, FluidState, Topology
from .transport import RhsOutput, SpeciesRates

__all__ = [
    "BoundaryMode",
    "GravityConfig",
    "GravityField",
    "DegenerateMollifierError",
    "mollifier_kernel",
    "mollify_density",
    "grad_phi_1d",
    "grad_phi_nd",
    "compute_field",
    "apply_gravity_source",
    "gradient_bound",
    "velocity_bound_rate",
]

FOUR_PI = 4.0 * math.pi

# Normalization constants of the bump (1 - s^2)^3 on the unit ball, so the
# continuum profile integrates to one in each dimension.
_BUMP_NORM = {1: 35.0 / 32.0, 2: 4.0 / math.pi, 3: 315.0 / (64.0 * math.pi)}


class BoundaryMode(str, enum.Enum):
    """How the potential treats the edge of the box."""

    TORUS_MEAN_SUBTRACTED = "torus-mean-subtracted"
    FREE_SPACE = "free-space"


class DegenerateMollifierError(ValueError):
    """Smoothing radius fell below one cell; the kernel cannot resolve it."""


@dataclass(frozen=True)
class GravityConfig:
    """Gravity switches shared by solvers and diagnostics.

    ``alpha`` sets the smoothing radius ``epsilon**alpha`` used in 2-d/3-d;
    values above 1/3 would let the smoothing scale shrink too fast relative
    to the grid for the field bounds to hold, so they are rejected.
    """

    G: float = 1.0
    alpha: float = 0.25
    enabled: bool = True
    boundary: BoundaryMode = BoundaryMode.TORUS_MEAN_SUBTRACTED

    def __post_init__(self):
        object.__setattr__(self, "boundary", BoundaryMode(self.boundary))
        if self.enabled:
            if not (math.isfinite(self.G) and self.G > 0):
                raise ValueError(f"G must be positive, got {self.G}")
            if not (0.0 < self.alpha <= 1.0 / 3.0):
                raise ValueError(f"alpha must lie in (0, 1/3], got {self.alpha}")


@dataclass
class GravityField:
    """Potential gradient, one array per axis."""

    grad_phi: tuple[np.ndarray, ...]

    def max_gradient_sum(self) -> float:
        """max over cells of sum_a |grad_phi_a|, the monitoring norm."""
        total = np.abs(self.grad_phi[0])
        for g in self.grad_phi[1:]:
            total = total + np.abs(g)
        return float(total.max())


def mollifier_kernel(domain: DomainSpec, cfg: GravityConfig) -> np.ndarray:
    """Discrete smoothing bump of radius ``epsilon**alpha``, unit cell-sum.

    Returns an odd-shaped array of samples of the compact bump
    ``c * (1 - (r/R)^2)^3`` at cell-center offsets, renormalized so that
    ``kernel.sum() * epsilon**dim == 1`` exactly.
    """
    eps, dim = domain.epsilon, domain.dim
    radius = eps**cfg.alpha
    # round() keeps the discrete radius within half a cell of the nominal one
    # on both sides; truncation would bias coarse grids toward a smaller bump.
    half = round(radius / eps)
    if half < 1:
        raise DegenerateMollifierError(
            f"smoothing radius {radius:.3g} is below one cell ({eps:.3g}); "
            "increase alpha or refine the grid"
        )
    offsets = np.arange(-half, half + 1) * eps
    grids = np.meshgrid(*([offsets] * dim), indexing="ij")
    r2 = sum(g * g for g in grids) / (radius * radius)
    kernel = np.where(r2 < 1.0, (1.0 - np.minimum(r2, 1.0)) ** 3, 0.0)
    kernel *= _BUMP_NORM[dim] / radius**dim
    kernel /= kernel.sum() * eps**dim
    return kernel


def mollify_density(
    rho: np.ndarray, domain: DomainSpec, cfg: GravityConfig
) -> np.ndarray:
    """Density convolved with the smoothing bump (used by diagnostics)."""
    kernel = mollifier_kernel(domain, cfg) * domain.cell_volume
    mode = "wrap" if domain.topology is Topology.TORUS else "constant"
    return scipy.ndimage.convolve(rho, kernel, mode=mode)


def _green_gradient_samples(offsets: list[np.ndarray], G: float, dim: int):
    """Kernel arrays g_a at the given per-axis offset coordinates."""
    grids = np.meshgrid(*offsets, indexing="ij")
    r2 = sum(g * g for g in grids)
    with np.errstate(divide="ignore", invalid="ignore"):
        if dim == 2:
            scale = 2.0 * G / r2
        else:
            scale = G / (r2 * np.sqrt(r2))
    scale = np.where(r2 > 0.0, scale, 0.0)
    return [g * scale for g in grids]


@dataclass
class _KernelSet:
    """Cached FFT factors of the combined mollifier*green kernels."""

    ffts: tuple[np.ndarray, ...]
    fshape: tuple[int, ...]
    crop: tuple[slice, ...] | None  # None means circular convolution
    bound: float  # max over offsets of sum_a |K_a| / cell_volume


@lru_cache(maxsize=16)
def _nd_kernels(domain: DomainSpec, cfg: GravityConfig) -> _KernelSet:
    eps, dim = domain.epsilon, domain.dim
    moll = mollifier_kernel(domain, cfg)
    half = moll.shape[0] // 2
    vol = domain.cell_volume

    if domain.topology is Topology.TORUS:
        for a, n in enumerate(domain.cells):
            if 2 * half + 1 > n:
                raise DegenerateMollifierError(
                    f"smoothing kernel ({2 * half + 1} cells) exceeds axis {a} ({n} cells)"
                )
        # Minimal-image displacement per circular offset, then sum the
        # free-space kernel over the 3^dim nearest periodic images.
        disp = []
        for a, n in enumerate(domain.cells):
            k = np.arange(n)
            disp.append(((k + n // 2) % n - n // 2) * eps)
        greens = [np.zeros(domain.cells) for _ in range(dim)]
        extents = domain.extent
        for image in itertools.product((-1.0, 0.0, 1.0), repeat=dim):
            shifted_axes = [disp[a] + image[a] * extents[a] for a in range(dim)]
            for a, g in enumerate(
                _green_gradient_samples(shifted_axes, cfg.G, dim)
            ):
                greens[a] += g
        # Fold the mollifier in circularly (it is small and centered at 0).
        moll_grid = np.zeros(domain.cells)
        idx = np.meshgrid(
            *[np.arange(-half, half + 1) % n for n in domain.cells], indexing="ij"
        )
        np.add.at(moll_grid, tuple(idx), moll)
        fshape = domain.cells
        moll_f = scipy.fft.rfftn(moll_grid)
        combined = []
        bound = np.zeros(domain.cells)
        for g in greens:
            k = scipy.fft.irfftn(scipy.fft.rfftn(g) * moll_f, s=fshape) * vol * vol
            combined.append(k)
            bound += np.abs(k)
        ffts = tuple(scipy.fft.rfftn(k) for k in combined)
        return _KernelSet(ffts, fshape, None, float(bound.max()) / vol)

    # Free space: offsets span every displacement between two grid cells,
    # plus the mollifier halo.
    reach = [n - 1 + half for n in domain.cells]
    offsets = [np.arange(-r, r + 1) * eps for r in reach]
    greens = _green_gradient_samples(offsets, cfg.G, dim)
    fshape = tuple(
        scipy.fft.next_fast_len(n + 2 * r + 1 - 1)
        for n, r in zip(domain.cells, reach)
    )
    combined = []
    bound = None
    for g in greens:
        k = scipy.signal.fftconvolve(g, moll, mode="same") * vol * vol
        combined.append(k)
        bound = np.abs(k) if bound is None else bound + np.abs(k)
    crop = tuple(slice(r, r + n) for n, r in zip(domain.cells, reach))
    ffts = tuple(scipy.fft.rfftn(k, s=fshape) for k in combined)
    return _KernelSet(ffts, fshape, crop, float(bound.max()) / vol)


def grad_phi_1d(
    rho: np.ndarray, domain: DomainSpec, cfg: GravityConfig
) -> GravityField:
    """Potential gradient in one dimension by cumulative integration.

    The integral is taken to each cell *center*, so a cell's own content
    contributes half its mass and an isolated point mass feels no self-force.
    Free space fixes the constant antisymmetrically (``-2 pi G M`` far left,
    ``+2 pi G M`` far right); the torus subtracts the mean density and then
    the mean gradient, so the result sums to zero exactly.
    """
    if domain.dim != 1:
        raise ValueError("grad_phi_1d needs a 1-d domain")
    eps = domain.epsilon
    if cfg.boundary is BoundaryMode.TORUS_MEAN_SUBTRACTED:
        rho_eff = rho - rho.mean()
        cum = (np.cumsum(rho_eff) - 0.5 * rho_eff) * eps
        grad = FOUR_PI * cfg.G * cum
        grad -= grad.mean()
    else:
        cum = (np.cumsum(rho) - 0.5 * rho) * eps
        total = float(np.sum(rho)) * eps
        grad = FOUR_PI * cfg.G * (cum - 0.5 * total)
    return GravityField((grad,))


def grad_phi_nd(
    rho: np.ndarray, domain: DomainSpec, cfg: GravityConfig
) -> GravityField:
    """Potential gradient in 2-d/3-d: smooth, then convolve with the Green
    gradient.

    Implemented as a single FFT convolution with the precomputed combined
    kernel, which is exactly the smoothing convolution followed by the Green
    one.  Direct summation over cell pairs gives the same numbers (tests
    check this); the transform is just faster at realistic grid sizes.
    """
    if domain.dim not in (2, 3):
        raise ValueError("grad_phi_nd needs a 2-d or 3-d domain")
    if rho.shape != domain.cells:
        raise ValueError("density shape does not match domain")
    kset = _nd_kernels(domain, cfg)
    if kset.crop is None:
        rho_eff = rho - rho.mean()
        f = scipy.fft.rfftn(rho_eff)
        grads = tuple(
            scipy.fft.irfftn(f * kf, s=kset.fshape) for kf in kset.ffts
        )
    else:
        f = scipy.fft.rfftn(rho, s=kset.fshape)
        grads = tuple(
            scipy.fft.irfftn(f * kf, s=kset.fshape)[kset.crop] for kf in kset.ffts
        )
    return GravityField(grads)


def compute_field(
    state: FluidState, domain: DomainSpec, cfg: GravityConfig | None
) -> GravityField | None:
    """Field sourced by the summed density of all species; None if disabled."""
    if cfg is None or not cfg.enabled:
        return None
    rho = state.total_rho()
    if domain.dim == 1:
        return grad_phi_1d(rho, domain, cfg)
    return grad_phi_nd(rho, domain, cfg)


def apply_gravity_source(
    rhs: RhsOutput, state: FluidState, field: GravityField | None
) -> RhsOutput:
    """Add ``-rho_s * grad_phi`` to every species' momentum derivatives.

    Each species feels the shared field with its own density; density and
    energy derivatives are untouched.  Returns a new RhsOutput.
    """
    if field is None:
        return rhs
    out = []
    for fields, rates in zip(state.species, rhs.species):
        mom = tuple(
            dm - fields.rho * g for dm, g in zip(rates.mom, field.grad_phi)
        )
        out.append(SpeciesRates(rates.rho, mom, rates.energy))
    return RhsOutput(out)


def gradient_bound(domain: DomainSpec, cfg: GravityConfig, total_mass: float) -> float:
    """Rigorous bound on ``max_x sum_a |grad_phi_a(x)|`` for nonnegative
    density of the given total mass.

    1-d uses the exact cumulative-integral bounds; in 2-d/3-d the bound is
    ``max_offset sum_a |K_a|``  times the total cell sum of the source, with a
    factor 2 on the torus because mean subtraction can double the absolute
    cell sum.  Monitors compare against this; it can never be exceeded
    without a bug.
    """
    if domain.dim == 1:
        if cfg.boundary is BoundaryMode.TORUS_MEAN_SUBTRACTED:
            return FOUR_PI * cfg.G * total_mass
        return 0.5 * FOUR_PI * cfg.G * total_mass
    kset = _nd_kernels(domain, cfg)
    factor = 2.0 if cfg.boundary is BoundaryMode.TORUS_MEAN_SUBTRACTED else 1.0
    return kset.bound * total_mass * factor


def velocity_bound_rate(
    domain: DomainSpec, cfg: GravityConfig, total_mass: float
) -> float:
    """Rate K with ``max|u(t)| <= max|u(0)| + K t`` along monitored runs.

    Twice the gradient bound: a kick can act on a cell whose density one
    step later has dropped by at most half under the step-size limits, which
    is exactly the slack the factor 2 covers.
    """
    return 2.0 * gradient_bound(domain, cfg, total_mass)
