"""Point-mass reference dynamics and conversions to and from grid fields.

The fluid solver should reproduce point-mass orbits when the density is a
set of well-separated concentrations.  This module provides the reference:
direct-summation pairwise forces (with the same force normalization the grid
solver uses: ``2 G m / r`` in 2-d, ``G m / r^2`` in 3-d), an RK4 particle
integrator, a deposit step that turns bodies into grid fields over a thin
uniform background, and a blob finder that turns density concentrations back
into effective bodies.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
import scipy.ndimage

from .grid import DomainSpec, FluidState, SpeciesFields, Topology

__all__ = [
    "Body",
    "Softening",
    "SingularityError",
    "nbody_rhs",
    "rk4_body_step",
    "integrate_bodies",
    "BodyTrajectory",
    "bodies_to_fields",
    "extract_bodies",
    "write_bodies_csv",
    "read_bodies_csv",
]


class SingularityError(RuntimeError):
    """Two unsoftened bodies coincide; the force is undefined."""


@dataclass
class Body:
    """A point mass with position and velocity (2-d or 3-d)."""

    m: float
    r: np.ndarray
    U: np.ndarray

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=np.float64)
        self.U = np.asarray(self.U, dtype=np.float64)
        if self.r.shape != self.U.shape or self.r.ndim != 1:
            raise ValueError("position and velocity must be equal-length vectors")
        if self.r.size not in (2, 3):
            raise ValueError("bodies live in 2 or 3 dimensions")
        if not (math.isfinite(self.m) and self.m > 0):
            raise ValueError(f"mass must be positive, got {self.m}")

    @property
    def dim(self) -> int:
        return self.r.size


@dataclass(frozen=True)
class Softening:
    """Plummer-style force softening length; zero means bare forces."""

    length: float = 0.0

    def __post_init__(self):
        if self.length < 0 or not math.isfinite(self.length):
            raise ValueError(f"softening length must be >= 0, got {self.length}")


def _pack(bodies: list[Body]):
    dim = bodies[0].dim
    if any(b.dim != dim for b in bodies):
        raise ValueError("all bodies must share one dimension")
    m = np.array([b.m for b in bodies])
    r = np.array([b.r for b in bodies])
    u = np.array([b.U for b in bodies])
    return m, r, u, dim


def nbody_rhs(
    bodies: list[Body], G: float, softening: Softening = Softening()
) -> tuple[np.ndarray, np.ndarray]:
    """Velocities and accelerations of every body under pairwise attraction.

    2-d: ``a_i = -sum_j 2 G m_j d_ij / (|d_ij|^2 + s^2)``;
    3-d: ``a_i = -sum_j G m_j d_ij / (|d_ij|^2 + s^2)^{3/2}``
    with ``d_ij = r_i - r_j``.  Accumulation order is fixed (ascending body
    index), so results are bitwise reproducible.
    """
    m, r, u, dim = _pack(bodies)
    d = r[:, None, :] - r[None, :, :]  # d[i, j] = r_i - r_j
    dist2 = np.einsum("ijk,ijk->ij", d, d)
    s2 = softening.length**2
    if s2 == 0.0:
        off = ~np.eye(len(bodies), dtype=bool)
        if np.any(dist2[off] == 0.0):
            i, j = np.argwhere((dist2 == 0.0) & off)[0]
            raise SingularityError(
                f"bodies {i} and {j} coincide and softening is zero"
            )
    denom = dist2 + s2
    np.fill_diagonal(denom, 1.0)  # diagonal numerator is 0 anyway
    if dim == 2:
        w = 2.0 * G * m[None, :] / denom
    else:
        w = G * m[None, :] / denom**1.5
    acc = -(d * w[:, :, None]).sum(axis=1)
    return u.copy(), acc


def rk4_body_step(
    bodies: list[Body], G: float, softening: Softening, dt: float
) -> list[Body]:
    """One classical RK4 step of the particle system."""
    m, r0, u0, _ = _pack(bodies)

    def deriv(r, u):
        staged = [Body(mi, ri, ui) for mi, ri, ui in zip(m, r, u)]
        return nbody_rhs(staged, G, softening)

    k1r, k1u = deriv(r0, u0)
    k2r, k2u = deriv(r0 + 0.5 * dt * k1r, u0 + 0.5 * dt * k1u)
    k3r, k3u = deriv(r0 + 0.5 * dt * k2r, u0 + 0.5 * dt * k2u)
    k4r, k4u = deriv(r0 + dt * k3r, u0 + dt * k3u)
    r = r0 + dt / 6.0 * (k1r + 2 * k2r + 2 * k3r + k4r)
    u = u0 + dt / 6.0 * (k1u + 2 * k2u + 2 * k3u + k4u)
    return [Body(mi, ri, ui) for mi, ri, ui in zip(m, r, u)]


@dataclass
class BodyTrajectory:
    """Sampled particle history: times, positions and velocities per sample."""

    times: np.ndarray  # (n_samples,)
    positions: np.ndarray  # (n_samples, n_bodies, dim)
    velocities: np.ndarray  # (n_samples, n_bodies, dim)

    def momentum(self, sample: int, masses: np.ndarray) -> np.ndarray:
        return (masses[:, None] * self.velocities[sample]).sum(axis=0)


def integrate_bodies(
    bodies: list[Body],
    G: float,
    softening: Softening,
    dt: float,
    n_steps: int,
    t0: float = 0.0,
) -> tuple[list[Body], BodyTrajectory]:
    """RK4-integrate the system for ``n_steps`` fixed steps, keeping every
    intermediate sample."""
    if dt <= 0 or n_steps < 0:
        raise ValueError("need dt > 0 and n_steps >= 0")
    current = [Body(b.m, b.r, b.U) for b in bodies]
    times = [t0]
    pos = [np.array([b.r for b in current])]
    vel = [np.array([b.U for b in current])]
    for k in range(n_steps):
        current = rk4_body_step(current, G, softening, dt)
        times.append(t0 + (k + 1) * dt)
        pos.append(np.array([b.r for b in current]))
        vel.append(np.array([b.U for b in current]))
    traj = BodyTrajectory(np.array(times), np.array(pos), np.array(vel))
    return current, traj


def bodies_to_fields(
    bodies: list[Body],
    domain: DomainSpec,
    floor_density: float | None = None,
) -> FluidState:
    """Deposit bodies into grid fields over a uniform quiet background.

    Each body's mass and momentum land entirely in the cell containing its
    position (top-hat deposition).  The background keeps every cell strictly
    positive so velocity recovery never divides by zero, but defaults to a
    dynamically negligible value (1e-12 of the lightest body's cell density):
    a noticeable ambient medium would drag on the bodies and sink their
    orbits.  Bodies outside the box are rejected.
    """
    m, r, u, dim = _pack(bodies)
    if dim != domain.dim:
        raise ValueError(f"bodies are {dim}-d but the domain is {domain.dim}-d")
    eps = domain.epsilon
    if floor_density is None:
        floor = 1e-12 * m.min() / domain.cell_volume
    else:
        floor = float(floor_density)
    if floor <= 0:
        raise ValueError("background floor density must be positive")

    rho = np.full(domain.cells, floor)
    mom = [np.zeros(domain.cells) for _ in range(dim)]
    inv_vol = 1.0 / domain.cell_volume
    for bi in range(len(bodies)):
        idx = []
        for a in range(dim):
            i = int(math.floor((r[bi, a] - domain.origin[a]) / eps))
            if domain.topology is Topology.TORUS:
                i %= domain.cells[a]
            elif not (0 <= i < domain.cells[a]):
                raise ValueError(
                    f"body {bi} at {r[bi]} lies outside the open box"
                )
            idx.append(i)
        idx = tuple(idx)
        rho[idx] += m[bi] * inv_vol
        for a in range(dim):
            mom[a][idx] += m[bi] * u[bi, a] * inv_vol
    return FluidState([SpeciesFields(rho, tuple(mom))])


def _merge_periodic_labels(labels: np.ndarray, domain: DomainSpec) -> np.ndarray:
    """Union components that touch across periodic faces."""
    n_labels = labels.max()
    parent = list(range(n_labels + 1))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    for axis in range(labels.ndim):
        first = np.take(labels, 0, axis=axis).ravel()
        last = np.take(labels, -1, axis=axis).ravel()
        for a, b in zip(first, last):
            if a and b:
                union(int(a), int(b))
    out = np.zeros_like(labels)
    remap = {}
    for lbl in range(1, n_labels + 1):
        root = find(lbl)
        remap.setdefault(root, len(remap) + 1)
    for lbl in range(1, n_labels + 1):
        out[labels == lbl] = remap[find(lbl)]
    return out


def extract_bodies(
    state: FluidState, domain: DomainSpec, threshold: float
) -> list[Body]:
    """Turn density concentrations into effective bodies.

    Cells with summed density strictly above ``threshold`` are grouped into
    face-connected components (periodic across torus seams).  Each component
    becomes a body with the component's total mass, its mass-weighted
    centroid (unwrapped around the component's densest cell on a torus) and
    the velocity of its total momentum.  Sorted by descending mass.
    """
    rho = state.total_rho()
    mom = [sum(s.mom[a] for s in state.species) for a in range(domain.dim)]
    mask = rho > threshold
    if not mask.any():
        return []
    labels, n_found = scipy.ndimage.label(mask)
    if domain.topology is Topology.TORUS and n_found > 1:
        labels = _merge_periodic_labels(labels, domain)

    eps, vol = domain.epsilon, domain.cell_volume
    bodies = []
    for lbl in range(1, labels.max() + 1):
        member = labels == lbl
        if not member.any():
            continue
        cells = np.argwhere(member)
        masses = rho[member] * vol
        total = float(masses.sum())
        peak = cells[int(np.argmax(rho[member]))]
        coords = cells.astype(np.float64)
        if domain.topology is Topology.TORUS:
            for a, n in enumerate(domain.cells):
                delta = coords[:, a] - peak[a]
                coords[:, a] = peak[a] + (delta + n / 2) % n - n / 2
        centroid_cells = (masses[:, None] * coords).sum(axis=0) / total
        position = np.array(
            [
                domain.origin[a] + (centroid_cells[a] + 0.5) * eps
                for a in range(domain.dim)
            ]
        )
        if domain.topology is Topology.TORUS:
            for a in range(domain.dim):
                span = domain.extent[a]
                position[a] = (
                    (position[a] - domain.origin[a]) % span + domain.origin[a]
                )
        velocity = np.array([float((m[member]).sum()) for m in mom]) * vol / total
        bodies.append(Body(total, position, velocity))
    bodies.sort(key=lambda b: -b.m)
    return bodies


def write_bodies_csv(bodies: list[Body], path) -> None:
    """CSV with columns m,x,y[,z],u,v[,w]."""
    dim = bodies[0].dim
    header = ["m", *"xyz"[:dim], *"uvw"[:dim]]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for b in bodies:
            # float() first: repr of a numpy scalar is not parseable text.
            writer.writerow(
                [repr(float(b.m))]
                + [repr(float(x)) for x in b.r]
                + [repr(float(x)) for x in b.U]
            )


def read_bodies_csv(path) -> list[Body]:
    """Inverse of :func:`write_bodies_csv`; infers 2-d vs 3-d from the header."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty bodies file")
    header = [h.strip() for h in rows[0]]
    if header[:2] != ["m", "x"] or len(header) % 2 == 0:
        raise ValueError(f"{path}: expected header m,x,y[,z],u,v[,w]")
    dim = (len(header) - 1) // 2
    bodies = []
    for row in rows[1:]:
        if not row:
            continue
        vals = [float(v) for v in row]
        bodies.append(Body(vals[0], vals[1 : 1 + dim], vals[1 + dim :]))
    return bodies
