"""Weak-form residuals, runtime monitors and grid-refinement studies.

The solver does not try to be exactly conservative in the PDE sense; instead
it promises that residuals of the weak form of the transport equations shrink
at known rates as the cell size ``epsilon`` goes to zero.  This module makes
those promises checkable:

* :func:`weak_residual` pairs a state and its time derivative with a smooth
  compactly supported test function and returns the weak defect of each
  equation (continuity, momentum, optional energy, and the potential's
  discrete Poisson identity).
* :func:`monitor` evaluates the a-priori bounds (mass, speed maximum,
  field-gradient bound) that hold for the scheme and reports, never aborts.
* :func:`convergence_study` reruns a scenario over a list of epsilons and
  fits observed orders; non-monotone residual sequences are reported as-is.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .grid import DomainSpec, FluidState, Topology, recover_velocity
from .gravity import (
    FOUR_PI,
    GravityConfig,
    GravityField,
    gradient_bound,
    velocity_bound_rate,
)
from .transport import RhsOutput, shifted

__all__ = [
    "TestFunction",
    "radial_bump",
    "product_bump",
    "translated",
    "default_test_functions",
    "ResidualReport",
    "weak_residual",
    "InitialStats",
    "initial_stats",
    "DiagnosticsRecord",
    "monitor",
    "ConvergenceTable",
    "convergence_study",
    "write_convergence_csv",
]


def _fsum(arr: np.ndarray) -> float:
    """Order-independent compensated sum; used for all conservation sums."""
    return math.fsum(arr.ravel().tolist())


@dataclass
class TestFunction:
    """A smooth test function with analytic gradient.

    ``value`` and each entry of ``grad`` take the cell-center coordinate
    arrays of a domain and return an array of samples.  ``center`` and
    ``radius`` describe the support for placement checks.
    """

    value: any
    grad: tuple
    center: tuple[float, ...]
    radius: float
    name: str = "psi"


def radial_bump(center: tuple[float, ...], radius: float, name: str = "bump") -> TestFunction:
    """C^2 bump ``(1 - (|x-c|/a)^2)^3`` supported on the ball of radius ``a``."""
    c = tuple(float(x) for x in center)
    a = float(radius)

    def value(*mesh):
        s2 = sum((m - ci) ** 2 for m, ci in zip(mesh, c)) / (a * a)
        return np.where(s2 < 1.0, (1.0 - np.minimum(s2, 1.0)) ** 3, 0.0)

    def make_grad(axis):
        def grad(*mesh):
            s2 = sum((m - ci) ** 2 for m, ci in zip(mesh, c)) / (a * a)
            inside = s2 < 1.0
            core = (1.0 - np.minimum(s2, 1.0)) ** 2
            return np.where(inside, -6.0 * core * (mesh[axis] - c[axis]) / (a * a), 0.0)

        return grad

    dim = len(c)
    return TestFunction(value, tuple(make_grad(a_) for a_ in range(dim)), c, a, name)


def product_bump(
    center: tuple[float, ...], radii: tuple[float, ...], name: str = "box-bump"
) -> TestFunction:
    """Tensor product of 1-d bumps; support is the axis-aligned box."""
    c = tuple(float(x) for x in center)
    r = tuple(float(x) for x in radii)

    def factor(m, ci, ai):
        s2 = ((m - ci) / ai) ** 2
        return np.where(s2 < 1.0, (1.0 - np.minimum(s2, 1.0)) ** 3, 0.0)

    def dfactor(m, ci, ai):
        s = (m - ci) / ai
        s2 = s * s
        inside = s2 < 1.0
        return np.where(inside, -6.0 * s / ai * (1.0 - np.minimum(s2, 1.0)) ** 2, 0.0)

    def value(*mesh):
        out = factor(mesh[0], c[0], r[0])
        for a_ in range(1, len(c)):
            out = out * factor(mesh[a_], c[a_], r[a_])
        return out

    def make_grad(axis):
        def grad(*mesh):
            out = None
            for a_ in range(len(c)):
                f = (
                    dfactor(mesh[a_], c[a_], r[a_])
                    if a_ == axis
                    else factor(mesh[a_], c[a_], r[a_])
                )
                out = f if out is None else out * f
            return out

        return grad

    return TestFunction(
        value, tuple(make_grad(a_) for a_ in range(len(c))), c, max(r), name
    )


def translated(psi: TestFunction, shift: tuple[float, ...], name: str | None = None) -> TestFunction:
    """The same test function moved by ``shift``."""
    s = tuple(float(x) for x in shift)

    def value(*mesh):
        return psi.value(*(m - ds for m, ds in zip(mesh, s)))

    def make_grad(axis):
        def grad(*mesh):
            return psi.grad[axis](*(m - ds for m, ds in zip(mesh, s)))

        return grad

    center = tuple(ci + ds for ci, ds in zip(psi.center, s))
    return TestFunction(
        value,
        tuple(make_grad(a_) for a_ in range(len(s))),
        center,
        psi.radius,
        name or f"{psi.name}+shift",
    )


def default_test_functions(domain: DomainSpec) -> list[TestFunction]:
    """A small standard family: one central bump, one off-center, one squat."""
    lo = domain.origin
    ext = domain.extent
    center = tuple(o + 0.5 * e for o, e in zip(lo, ext))
    quarter = tuple(o + 0.6 * e for o, e in zip(lo, ext))
    r = 0.3 * min(ext)
    out = [
        radial_bump(center, r, "center"),
        radial_bump(quarter, r, "offset"),
        product_bump(center, tuple(0.35 * e for e in ext), "wide"),
    ]
    return out


@dataclass
class ResidualReport:
    """Weak residuals of one state/derivative pair against one test function.

    Momentum residuals are per axis; ``r_energy`` and ``r_poisson`` are None
    when the state has no energy field or gravity is off.  Multi-species
    states report the sum over species (each species obeys the same equations
    with its own fields).
    """

    r_rho: float
    r_mom: tuple[float, ...]
    r_energy: float | None
    r_poisson: float | None
    epsilon: float
    time: float
    psi_name: str = "psi"

    def max_abs_mom(self) -> float:
        return max(abs(v) for v in self.r_mom)


def _check_support(psi_v: np.ndarray, psi_name: str) -> None:
    scale = float(np.max(np.abs(psi_v)))
    if scale == 0.0:
        raise ValueError(f"test function {psi_name!r} vanishes on the whole grid")
    for axis in range(psi_v.ndim):
        for edge in (0, -1):
            sl = [slice(None)] * psi_v.ndim
            sl[axis] = edge
            if np.max(np.abs(psi_v[tuple(sl)])) > 1e-12 * scale:
                raise ValueError(
                    f"test function {psi_name!r} does not vanish on the boundary; "
                    "shrink its support"
                )


def weak_residual(
    state: FluidState,
    rhs: RhsOutput,
    field: GravityField | None,
    psi: TestFunction,
    domain: DomainSpec,
    gravity_cfg: GravityConfig | None = None,
) -> ResidualReport:
    """Weak defect of each equation at the given state.

    Continuity: ``sum [ drho/dt * psi - rho u . grad(psi) ] * eps^dim``;
    momentum adds the flux ``rho u_a u_b`` and, with gravity, the source
    ``rho * grad_phi_a * psi``; the Poisson residual compares the centered
    divergence of the field against ``4 pi G`` times the *raw* density
    (mean-subtracted on the torus) -- smoothing is part of what the residual
    is supposed to measure.  All sums are compensated.
    """
    mesh = domain.center_mesh()
    vol = domain.cell_volume
    psi_v = psi.value(*mesh)
    _check_support(psi_v, psi.name)
    psi_g = [g(*mesh) for g in psi.grad]

    r_rho = 0.0
    r_mom = [0.0] * domain.dim
    r_energy = None
    for fields, rates in zip(state.species, rhs.species):
        vel = recover_velocity(fields, state.time)
        acc = rates.rho * psi_v
        for a in range(domain.dim):
            acc = acc - fields.mom[a] * psi_g[a]
        r_rho += _fsum(acc) * vol
        for a in range(domain.dim):
            acc = rates.mom[a] * psi_v
            for b in range(domain.dim):
                acc = acc - fields.mom[a] * vel[b] * psi_g[b]
            if field is not None:
                acc = acc + fields.rho * field.grad_phi[a] * psi_v
            r_mom[a] += _fsum(acc) * vol
        if fields.energy is not None:
            acc = rates.energy * psi_v
            for b in range(domain.dim):
                acc = acc - fields.energy * vel[b] * psi_g[b]
            r_energy = (r_energy or 0.0) + _fsum(acc) * vol

    r_poisson = None
    if field is not None and gravity_cfg is not None:
        eps = domain.epsilon
        div = np.zeros_like(psi_v)
        for a, g in enumerate(field.grad_phi):
            div += (shifted(g, a, -1, domain.topology) - shifted(g, a, +1, domain.topology)) / (2 * eps)
        source = state.total_rho()
        if gravity_cfg.boundary.value.startswith("torus"):
            source = source - source.mean()
        r_poisson = _fsum((div - FOUR_PI * gravity_cfg.G * source) * psi_v) * vol

    return ResidualReport(
        r_rho,
        tuple(r_mom),
        r_energy,
        r_poisson,
        domain.epsilon,
        state.time,
        psi.name,
    )


@dataclass(frozen=True)
class InitialStats:
    """Quantities frozen at t=0 that the runtime bounds refer to."""

    mass0: float
    u_max0: float
    grad_bound: float  # 0 when gravity is off
    velocity_rate: float  # K in  max|u(t)| <= max|u(0)| + K t


def initial_stats(
    state: FluidState, domain: DomainSpec, cfg: GravityConfig | None
) -> InitialStats:
    mass = sum(_fsum(s.rho) for s in state.species) * domain.cell_volume
    u_max = 0.0
    for s in state.species:
        for v in recover_velocity(s, state.time):
            u_max = max(u_max, float(np.max(np.abs(v))))
    if cfg is not None and cfg.enabled:
        gb = gradient_bound(domain, cfg, mass)
        vr = velocity_bound_rate(domain, cfg, mass)
    else:
        gb = 0.0
        vr = 0.0
    return InitialStats(mass, u_max, gb, vr)


@dataclass
class DiagnosticsRecord:
    """One row of run diagnostics; ``flags`` bits mark violated bounds.

    bit 0: mass bound, bit 1: velocity bound, bit 2: field-gradient bound.
    ``flags == 0`` means every monitored inequality held.
    """

    step: int
    t: float
    dt: float
    mass_total: float
    momentum: tuple[float, ...]
    min_rho: float
    max_speed: float
    max_gradphi: float
    mass_ok: bool
    velocity_ok: bool
    gradphi_ok: bool
    residuals: dict | None = None

    @property
    def flags(self) -> int:
        return (
            (0 if self.mass_ok else 1)
            | (0 if self.velocity_ok else 2)
            | (0 if self.gradphi_ok else 4)
        )


def monitor(
    state: FluidState,
    field: GravityField | None,
    domain: DomainSpec,
    stats: InitialStats,
    step: int = 0,
    dt: float = 0.0,
) -> DiagnosticsRecord:
    """Evaluate the a-priori bounds at one instant.  Reports, never raises.

    Mass may only decrease (open box) or must stay within 1e-10 relative
    (torus); the speed maximum obeys ``max|u(0)|`` without gravity and
    ``max|u(0)| + K t`` with it; the field gradient stays under the kernel
    bound.  Slack on every comparison is 1e-8 relative, plus 1e-6 absolute
    on the velocity bound with gravity.
    """
    vol = domain.cell_volume
    mass = sum(_fsum(s.rho) for s in state.species) * vol
    momentum = tuple(
        sum(_fsum(s.mom[a]) for s in state.species) * vol for a in range(domain.dim)
    )
    min_rho = min(float(s.rho.min()) for s in state.species)
    max_speed = 0.0
    for s in state.species:
        for v in recover_velocity(s, state.time):
            max_speed = max(max_speed, float(np.max(np.abs(v))))
    max_grad = field.max_gradient_sum() if field is not None else 0.0

    mass_ok = mass <= stats.mass0 * (1.0 + 1e-10)
    if domain.topology is Topology.TORUS:
        mass_ok = mass_ok and mass >= stats.mass0 * (1.0 - 1e-10)

    if stats.velocity_rate > 0.0:
        vel_cap = (stats.u_max0 + stats.velocity_rate * state.time) * (1 + 1e-8) + 1e-6
    else:
        vel_cap = stats.u_max0 * (1.0 + 1e-8) + 1e-30
    velocity_ok = max_speed <= vel_cap

    gradphi_ok = True
    if field is not None:
        gradphi_ok = max_grad <= stats.grad_bound * (1.0 + 1e-8) + 1e-12

    return DiagnosticsRecord(
        step,
        state.time,
        dt,
        mass,
        momentum,
        min_rho,
        max_speed,
        max_grad,
        mass_ok,
        velocity_ok,
        gradphi_ok,
    )


@dataclass
class ConvergenceTable:
    """Residual magnitudes per epsilon and the orders fitted from them."""

    eps_list: list[float]
    t_samples: list[float]
    # residuals[(t, equation)] -> list aligned with eps_list (max |R| over psi)
    residuals: dict[tuple[float, str], list[float]]
    orders: dict[tuple[float, str], float] = dc_field(default_factory=dict)

    def fit_orders(self) -> None:
        for key, vals in self.residuals.items():
            arr = np.asarray(vals)
            if np.any(arr <= 0.0):
                self.orders[key] = float("nan")
                continue
            slope = np.polyfit(np.log(self.eps_list), np.log(arr), 1)[0]
            self.orders[key] = float(slope)

    def monotone(self, t: float, equation: str) -> bool:
        vals = self.residuals[(t, equation)]
        return all(a >= b for a, b in zip(vals, vals[1:])) or all(
            a <= b for a, b in zip(vals, vals[1:])
        )

    def order(self, equation: str, t: float | None = None) -> float:
        t = self.t_samples[-1] if t is None else t
        return self.orders[(t, equation)]

    def window_order(self, equation: str) -> float:
        """Order fitted to the per-epsilon max of |R| over all sample times.

        A residual can pass through a sign change at one particular time on
        one particular grid, which makes single-time orders erratic; the
        envelope over a small window of times is the quantity that actually
        shrinks at the advertised rate.
        """
        stack = [
            self.residuals[(t, equation)]
            for t in self.t_samples
            if (t, equation) in self.residuals
        ]
        if not stack:
            raise KeyError(f"no residuals recorded for {equation!r}")
        vals = np.asarray(stack).max(axis=0)
        if np.any(vals <= 0.0):
            return float("nan")
        return float(np.polyfit(np.log(self.eps_list), np.log(vals), 1)[0])


def convergence_study(
    scenario,
    eps_list: list[float],
    t_samples: list[float] | float,
    psi_factory=None,
    solver=None,
) -> ConvergenceTable:
    """Run ``scenario`` at every epsilon and collect weak residuals.

    ``scenario`` is a ScenarioSpec; the grid for each epsilon keeps the
    scenario's physical box, so cell counts scale like 1/epsilon.  At every
    requested sample time the state and a fresh derivative evaluation are
    paired with each test function; the per-equation magnitude is the max
    over the test-function set.  Orders come from a least-squares line in
    log-log; deteriorating (non-monotone) sequences are kept verbatim.
    """
    # Imported here: scenarios/integrate import this module for monitoring.
    from .integrate import SolverConfig, run
    from .scenarios import build_scenario, scenario_domain
    from .transport import transport_rhs
    from .gravity import apply_gravity_source, compute_field

    if isinstance(t_samples, (int, float)):
        t_samples = [float(t_samples)]
    t_samples = sorted(float(t) for t in t_samples)

    residuals: dict[tuple[float, str], list[float]] = {}
    for eps in sorted(eps_list, reverse=True):
        domain = scenario_domain(scenario, eps)
        state, gravity_cfg, _meta = build_scenario(scenario, domain)
        cfg = solver or SolverConfig(t_end=max(t_samples))
        psis = (psi_factory or default_test_functions)(domain)
        for t in t_samples:
            stage_cfg = SolverConfig(
                integrator=cfg.integrator,
                cfl=cfg.cfl,
                t_end=t,
                dt_max=cfg.dt_max,
                seed=cfg.seed,
            )
            result = run(state, domain, gravity_cfg, stage_cfg)
            state = result.final_state
            field = compute_field(state, domain, gravity_cfg)
            rhs = transport_rhs(state, domain)
            rhs = apply_gravity_source(rhs, state, field)
            worst: dict[str, float] = {}
            for psi in psis:
                rep = weak_residual(state, rhs, field, psi, domain, gravity_cfg)
                worst["continuity"] = max(
                    worst.get("continuity", 0.0), abs(rep.r_rho)
                )
                worst["momentum"] = max(worst.get("momentum", 0.0), rep.max_abs_mom())
                if rep.r_energy is not None:
                    worst["energy"] = max(worst.get("energy", 0.0), abs(rep.r_energy))
                if rep.r_poisson is not None:
                    worst["poisson"] = max(
                        worst.get("poisson", 0.0), abs(rep.r_poisson)
                    )
            for eq, val in worst.items():
                residuals.setdefault((t, eq), []).append(val)

    # Entries were appended from coarse to fine; store eps the same way.
    table = ConvergenceTable(
        sorted(eps_list, reverse=True), list(t_samples), residuals
    )
    table.fit_orders()
    return table


def write_convergence_csv(table: ConvergenceTable, path) -> None:
    """CSV with columns epsilon,R_rho,R_mom,R_poisson and order footer rows.

    With several sample times the blocks are stacked and separated by a
    ``# t = ...`` comment line.
    """
    lines = []
    for t in table.t_samples:
        if len(table.t_samples) > 1:
            lines.append(f"# t = {t!r}")
        lines.append("epsilon,R_rho,R_mom,R_poisson")
        rho = table.residuals.get((t, "continuity"), [])
        mom = table.residuals.get((t, "momentum"), [])
        poi = table.residuals.get((t, "poisson"), None)
        for i, eps in enumerate(table.eps_list):
            p = "" if poi is None else repr(poi[i])
            lines.append(f"{eps!r},{rho[i]!r},{mom[i]!r},{p}")
        o_rho = table.orders.get((t, "continuity"), float("nan"))
        o_mom = table.orders.get((t, "momentum"), float("nan"))
        o_poi = table.orders.get((t, "poisson"), None)
        p = "" if o_poi is None else f"{o_poi:.6g}"
        lines.append(f"order,{o_rho:.6g},{o_mom:.6g},{p}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
