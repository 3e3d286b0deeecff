"""Tests for the self-gravity solvers.

The FFT production path is cross-checked against direct summation over cell
pairs (the defining formula), and in 1-d against the left-minus-right mass
bookkeeping that the cumulative integral is supposed to implement.
"""

import math

import numpy as np
import pytest

from dustflow.grid import DomainSpec, FluidState, SpeciesFields, Topology
from dustflow.gravity import (
    BoundaryMode,
    DegenerateMollifierError,
    GravityConfig,
    GravityField,
    apply_gravity_source,
    compute_field,
    grad_phi_1d,
    grad_phi_nd,
    gradient_bound,
    mollifier_kernel,
    mollify_density,
    velocity_bound_rate,
)
from dustflow.transport import transport_rhs

FREE = BoundaryMode.FREE_SPACE


class TestGravityConfig:
    @pytest.mark.parametrize("alpha", [0.0, -0.1, 1.0 / 3.0 + 1e-9, 0.5])
    def test_rejects_bad_alpha(self, alpha):
        with pytest.raises(ValueError):
            GravityConfig(alpha=alpha)

    def test_accepts_boundary_alpha(self):
        assert GravityConfig(alpha=1.0 / 3.0).alpha == 1.0 / 3.0

    @pytest.mark.parametrize("G", [0.0, -1.0, float("inf"), float("nan")])
    def test_rejects_bad_G(self, G):
        with pytest.raises(ValueError):
            GravityConfig(G=G)

    def test_disabled_config_skips_validation(self):
        cfg = GravityConfig(G=-1.0, alpha=2.0, enabled=False)
        assert not cfg.enabled

    def test_boundary_accepts_strings(self):
        cfg = GravityConfig(boundary="free-space")
        assert cfg.boundary is BoundaryMode.FREE_SPACE


class TestMollifier:
    @pytest.mark.parametrize(
        "cells,eps",
        [((64,), 0.1), ((24, 24), 0.2), ((12, 12, 12), 0.3)],
    )
    def test_unit_cell_sum(self, cells, eps):
        domain = DomainSpec(cells, eps)
        kernel = mollifier_kernel(domain, GravityConfig(alpha=1.0 / 3.0))
        assert kernel.sum() * eps ** domain.dim == pytest.approx(1.0, abs=1e-12)

    def test_shape_uses_rounded_radius(self):
        # radius eps**alpha = 0.794 spans 1.59 cells; rounding gives half
        # width 2, so the stencil is 5 cells across (truncation would give 3).
        domain = DomainSpec((32,), 0.5)
        kernel = mollifier_kernel(domain, GravityConfig(alpha=1.0 / 3.0))
        assert kernel.shape == (5,)

    def test_nonnegative_peaked_symmetric(self):
        domain = DomainSpec((24, 24), 0.2)
        kernel = mollifier_kernel(domain, GravityConfig(alpha=0.25))
        assert np.all(kernel >= 0.0)
        c = kernel.shape[0] // 2
        assert kernel[c, c] == kernel.max() > 0.0
        np.testing.assert_array_equal(kernel, kernel[::-1, ::-1])
        np.testing.assert_array_equal(kernel, kernel.T)

    def test_subcell_radius_rejected(self):
        # eps = 4 with alpha = 1/3 gives radius 1.59, less than half a cell.
        domain = DomainSpec((8, 8), 4.0)
        with pytest.raises(DegenerateMollifierError):
            mollifier_kernel(domain, GravityConfig(alpha=1.0 / 3.0))

    def test_kernel_wider_than_torus_rejected(self):
        # radius 0.1**(1/3) = 0.46 spans 4.6 cells of width 0.1; a 4-cell
        # torus cannot hold the 11-cell stencil.
        domain = DomainSpec((4, 4), 0.1)
        rho = np.ones((4, 4))
        with pytest.raises(DegenerateMollifierError):
            grad_phi_nd(rho, domain, GravityConfig(alpha=1.0 / 3.0))

    def test_mollify_conserves_torus_mass(self):
        rng = np.random.default_rng(21)
        domain = DomainSpec((20, 20), 0.2)
        rho = rng.random((20, 20))
        smooth = mollify_density(rho, domain, GravityConfig(alpha=0.25))
        assert np.all(smooth >= 0.0)
        assert math.fsum(smooth.ravel()) == pytest.approx(
            math.fsum(rho.ravel()), rel=1e-13
        )


def _free_space_direct(rho, domain, cfg):
    """Direct-summation oracle: mollify by scatter, then sum pair forces.

    The mollified density lives on a grid padded by the kernel half width, so
    mass smoothed past the box edge still attracts, exactly as in the
    production kernel's reach.
    """
    eps, dim = domain.epsilon, domain.dim
    moll = mollifier_kernel(domain, cfg)
    half = moll.shape[0] // 2
    vol = domain.cell_volume
    rho_moll = np.zeros(tuple(n + 2 * half for n in domain.cells))
    for idx in np.ndindex(*domain.cells):
        block = tuple(slice(i, i + 2 * half + 1) for i in idx)
        rho_moll[block] += rho[idx] * moll * vol
    axes = [(np.arange(-half, n + half) + 0.5) * eps for n in domain.cells]
    mesh = np.meshgrid(*axes, indexing="ij")
    sources = np.stack([m.ravel() for m in mesh], axis=1)
    weights = rho_moll.ravel() * vol
    grads = [np.zeros(domain.cells) for _ in range(dim)]
    for idx in np.ndindex(*domain.cells):
        x = np.array([(i + 0.5) * eps for i in idx])
        d = x - sources
        r2 = np.sum(d * d, axis=1)
        keep = r2 > 0.0
        if dim == 2:
            scale = 2.0 * cfg.G / r2[keep]
        else:
            scale = cfg.G / (r2[keep] * np.sqrt(r2[keep]))
        contrib = (weights[keep, None] * d[keep] * scale[:, None]).sum(axis=0)
        for a in range(dim):
            grads[a][idx] = contrib[a]
    return grads


def _torus_direct(rho, domain, cfg):
    """Direct-summation oracle on the torus: mean-subtracted source, circular
    smoothing, and the free-space force summed over the 3^dim nearest images.
    """
    eps, dim = domain.epsilon, domain.dim
    moll = mollifier_kernel(domain, cfg)
    half = moll.shape[0] // 2
    vol = domain.cell_volume
    rho_eff = rho - rho.mean()
    rho_moll = np.zeros(domain.cells)
    for idx in np.ndindex(*domain.cells):
        for off in np.ndindex(*moll.shape):
            dst = tuple((i + o - half) % n for i, o, n in zip(idx, off, domain.cells))
            rho_moll[dst] += rho_eff[idx] * moll[off] * vol
    import itertools

    grads = [np.zeros(domain.cells) for _ in range(dim)]
    for idx in np.ndindex(*domain.cells):
        acc = np.zeros(dim)
        for jdx in np.ndindex(*domain.cells):
            base = [
                ((i - j + n // 2) % n - n // 2) * eps
                for i, j, n in zip(idx, jdx, domain.cells)
            ]
            for image in itertools.product((-1.0, 0.0, 1.0), repeat=dim):
                d = np.array(
                    [b + m * e for b, m, e in zip(base, image, domain.extent)]
                )
                r2 = float(d @ d)
                if r2 == 0.0:
                    continue
                if dim == 2:
                    scale = 2.0 * cfg.G / r2
                else:
                    scale = cfg.G / (r2 * math.sqrt(r2))
                acc += rho_moll[jdx] * vol * d * scale
        for a in range(dim):
            grads[a][idx] = acc[a]
    return grads


class TestFieldAgainstDirectSummation:
    def test_free_space_2d(self):
        rng = np.random.default_rng(22)
        domain = DomainSpec((10, 9), 0.25, Topology.OPEN_BOX)
        cfg = GravityConfig(G=1.5, alpha=1.0 / 3.0, boundary=FREE)
        rho = rng.random((10, 9))
        field = grad_phi_nd(rho, domain, cfg)
        expected = _free_space_direct(rho, domain, cfg)
        scale = max(np.abs(g).max() for g in expected)
        for got, want in zip(field.grad_phi, expected):
            np.testing.assert_allclose(got, want, atol=1e-10 * scale)

    def test_free_space_3d(self):
        rng = np.random.default_rng(23)
        domain = DomainSpec((6, 5, 7), 0.3, Topology.OPEN_BOX)
        cfg = GravityConfig(G=0.7, alpha=1.0 / 3.0, boundary=FREE)
        rho = rng.random((6, 5, 7))
        field = grad_phi_nd(rho, domain, cfg)
        expected = _free_space_direct(rho, domain, cfg)
        scale = max(np.abs(g).max() for g in expected)
        for got, want in zip(field.grad_phi, expected):
            np.testing.assert_allclose(got, want, atol=1e-10 * scale)

    def test_torus_2d(self):
        rng = np.random.default_rng(24)
        domain = DomainSpec((8, 7), 0.25)
        cfg = GravityConfig(G=1.0, alpha=1.0 / 3.0)
        rho = rng.random((8, 7))
        field = grad_phi_nd(rho, domain, cfg)
        expected = _torus_direct(rho, domain, cfg)
        scale = max(np.abs(g).max() for g in expected)
        for got, want in zip(field.grad_phi, expected):
            np.testing.assert_allclose(got, want, atol=1e-10 * scale)


class TestFieldPhysics:
    def test_point_mass_far_field_2d(self):
        # A compact blob attracts like a point of the same mass from outside:
        # |grad phi| = 2 G m / r in two dimensions.
        domain = DomainSpec((33, 33), 0.25, Topology.OPEN_BOX)
        cfg = GravityConfig(G=1.0, alpha=1.0 / 3.0, boundary=FREE)
        rho = np.zeros((33, 33))
        rho[16, 16] = 1.0 / domain.cell_volume  # unit mass
        field = grad_phi_nd(rho, domain, cfg)
        for cells_away in (8, 12):
            r = cells_away * domain.epsilon
            got = field.grad_phi[0][16 + cells_away, 16]
            assert got == pytest.approx(2.0 / r, rel=2e-3)
            assert field.grad_phi[1][16 + cells_away, 16] == pytest.approx(0.0, abs=1e-12)

    def test_point_mass_far_field_3d(self):
        domain = DomainSpec((17, 17, 17), 0.3, Topology.OPEN_BOX)
        cfg = GravityConfig(G=2.0, alpha=1.0 / 3.0, boundary=FREE)
        rho = np.zeros((17, 17, 17))
        rho[8, 8, 8] = 1.0 / domain.cell_volume
        field = grad_phi_nd(rho, domain, cfg)
        r = 6 * domain.epsilon
        got = field.grad_phi[0][14, 8, 8]
        assert got == pytest.approx(2.0 / r**2, rel=2e-3)

    def test_torus_field_has_zero_mean_and_rolls(self):
        rng = np.random.default_rng(25)
        domain = DomainSpec((16, 16), 0.2)
        cfg = GravityConfig(alpha=0.3)
        rho = rng.random((16, 16))
        field = grad_phi_nd(rho, domain, cfg)
        for g in field.grad_phi:
            assert abs(g.mean()) < 1e-13 * np.abs(g).max()
        rolled = grad_phi_nd(np.roll(rho, (3, -5), axis=(0, 1)), domain, cfg)
        for g, gr in zip(field.grad_phi, rolled.grad_phi):
            np.testing.assert_allclose(
                np.roll(g, (3, -5), axis=(0, 1)), gr, atol=1e-12 * np.abs(g).max()
            )

    def test_uniform_torus_density_feels_nothing(self):
        domain = DomainSpec((12, 12), 0.25)
        field = grad_phi_nd(np.full((12, 12), 3.7), domain, GravityConfig())
        for g in field.grad_phi:
            np.testing.assert_allclose(g, 0.0, atol=1e-12)

    def test_deterministic_bitwise(self):
        rng = np.random.default_rng(26)
        domain = DomainSpec((14, 14), 0.2)
        rho = rng.random((14, 14))
        a = grad_phi_nd(rho, domain, GravityConfig())
        b = grad_phi_nd(rho.copy(), domain, GravityConfig())
        for ga, gb in zip(a.grad_phi, b.grad_phi):
            assert ga.tobytes() == gb.tobytes()


class TestGradPhi1d:
    def test_matches_left_right_mass_split(self):
        # In one dimension the pull at a cell is 2 pi G times (mass to the
        # left minus mass to the right), counting half of the cell's own
        # content on each side.
        rng = np.random.default_rng(27)
        eps = 0.125
        rho = rng.random(16)
        domain = DomainSpec((16,), eps, Topology.OPEN_BOX)
        cfg = GravityConfig(G=1.25, boundary=FREE)
        (grad,) = grad_phi_1d(rho, domain, cfg).grad_phi
        for i in range(16):
            left = (rho[:i].sum() + 0.5 * rho[i]) * eps
            right = (rho[i + 1 :].sum() + 0.5 * rho[i]) * eps
            want = 2.0 * math.pi * cfg.G * (left - right)
            assert grad[i] == pytest.approx(want, rel=1e-12, abs=1e-14)

    def test_torus_variant_is_mean_free(self):
        rng = np.random.default_rng(28)
        domain = DomainSpec((32,), 0.1)
        (grad,) = grad_phi_1d(rng.random(32), domain, GravityConfig()).grad_phi
        assert abs(math.fsum(grad)) < 1e-12

    def test_uniform_torus_is_forceless(self):
        domain = DomainSpec((32,), 0.1)
        (grad,) = grad_phi_1d(np.full(32, 2.0), domain, GravityConfig()).grad_phi
        np.testing.assert_allclose(grad, 0.0, atol=1e-14)

    def test_wrong_dim_rejected(self):
        with pytest.raises(ValueError):
            grad_phi_1d(np.ones((4, 4)), DomainSpec((4, 4), 0.25), GravityConfig())
        rho = np.ones(8)
        with pytest.raises(ValueError):
            grad_phi_nd(rho, DomainSpec((8,), 0.25), GravityConfig())


class TestComputeFieldAndSource:
    def test_disabled_or_missing_config_gives_none(self):
        rho = np.ones(8)
        state = FluidState([SpeciesFields(rho, (rho,))])
        domain = DomainSpec((8,), 0.25)
        assert compute_field(state, domain, None) is None
        assert compute_field(state, domain, GravityConfig(enabled=False)) is None

    def test_species_densities_are_summed(self):
        rng = np.random.default_rng(29)
        rho_a = rng.random(24)
        rho_b = rng.random(24)
        domain = DomainSpec((24,), 0.1)
        two = FluidState(
            [SpeciesFields(rho_a, (rho_a,)), SpeciesFields(rho_b, (rho_b,))]
        )
        one = FluidState([SpeciesFields(rho_a + rho_b, (rho_a,))])
        fa = compute_field(two, domain, GravityConfig())
        fb = compute_field(one, domain, GravityConfig())
        np.testing.assert_allclose(fa.grad_phi[0], fb.grad_phi[0], atol=1e-14)

    def test_source_term_arithmetic(self):
        rng = np.random.default_rng(30)
        rho = 0.5 + rng.random((6, 6))
        u = rng.uniform(-1, 1, (6, 6))
        v = rng.uniform(-1, 1, (6, 6))
        energy = rng.random((6, 6))
        domain = DomainSpec((6, 6), 0.5)
        state = FluidState([SpeciesFields(rho, (rho * u, rho * v), energy)])
        rhs = transport_rhs(state, domain)
        gx = rng.standard_normal((6, 6))
        gy = rng.standard_normal((6, 6))
        out = apply_gravity_source(rhs, state, GravityField((gx, gy)))
        np.testing.assert_array_equal(
            out.species[0].mom[0], rhs.species[0].mom[0] - rho * gx
        )
        np.testing.assert_array_equal(
            out.species[0].mom[1], rhs.species[0].mom[1] - rho * gy
        )
        # Density and energy rates pass through untouched.
        assert out.species[0].rho is rhs.species[0].rho
        assert out.species[0].energy is rhs.species[0].energy

    def test_source_with_no_field_is_identity(self):
        rho = np.ones(8)
        state = FluidState([SpeciesFields(rho, (rho,))])
        rhs = transport_rhs(state, DomainSpec((8,), 0.25))
        assert apply_gravity_source(rhs, state, None) is rhs

    def test_each_species_feels_own_density(self):
        rho_a = np.full((4, 4), 1.0)
        rho_b = np.full((4, 4), 3.0)
        zero = np.zeros((4, 4))
        state = FluidState(
            [
                SpeciesFields(rho_a, (zero.copy(), zero.copy())),
                SpeciesFields(rho_b, (zero.copy(), zero.copy())),
            ]
        )
        rhs = transport_rhs(state, DomainSpec((4, 4), 0.25))
        g = np.full((4, 4), 2.0)
        out = apply_gravity_source(rhs, state, GravityField((g, zero)))
        np.testing.assert_array_equal(out.species[0].mom[0], -2.0 * rho_a)
        np.testing.assert_array_equal(out.species[1].mom[0], -2.0 * rho_b)


class TestBounds:
    @pytest.mark.parametrize(
        "cells,topology,boundary",
        [
            ((48,), Topology.TORUS, BoundaryMode.TORUS_MEAN_SUBTRACTED),
            ((48,), Topology.OPEN_BOX, FREE),
            ((14, 14), Topology.TORUS, BoundaryMode.TORUS_MEAN_SUBTRACTED),
            ((14, 14), Topology.OPEN_BOX, FREE),
        ],
    )
    def test_field_never_exceeds_bound(self, cells, topology, boundary):
        rng = np.random.default_rng(31)
        domain = DomainSpec(cells, 0.2, topology)
        cfg = GravityConfig(alpha=1.0 / 3.0, boundary=boundary)
        for _ in range(5):
            rho = rng.random(cells) * rng.choice([0.1, 1.0, 10.0])
            state = FluidState([SpeciesFields(rho, tuple([np.zeros(cells)] * len(cells)))])
            field = compute_field(state, domain, cfg)
            mass = float(rho.sum()) * domain.cell_volume
            bound = gradient_bound(domain, cfg, mass)
            assert field.max_gradient_sum() <= bound * (1.0 + 1e-9)

    def test_velocity_rate_is_twice_gradient_bound(self):
        domain = DomainSpec((16, 16), 0.2)
        cfg = GravityConfig()
        assert velocity_bound_rate(domain, cfg, 3.0) == pytest.approx(
            2.0 * gradient_bound(domain, cfg, 3.0)
        )

    def test_max_gradient_sum(self):
        f = GravityField((np.array([1.0, -3.0]), np.array([2.0, 0.5])))
        assert f.max_gradient_sum() == 3.5
