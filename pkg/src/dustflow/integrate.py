"""Time integration: step-size control, steppers, and the run loop.

Three steppers are provided.  Forward Euler inherits the scheme's structural
guarantees (positivity and the velocity maximum principle hold step by step
when ``dt * max|u| <= epsilon``).  Classical RK4 trades those exact per-step
properties for accuracy; the gravity field is recomputed at every stage.  The
third advances 2-d states with the exact finite-dt parcel fluxes and applies
gravity as a first-order kick after the transport substep.

``run`` drives choose_dt/step to ``t_end``, evaluates the gravity field once
per step (shared by the step, the dt choice and the diagnostics), records a
DiagnosticsRecord each step and collects snapshots on a fixed time cadence.
A positivity failure aborts with the offending cell in the exception.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .grid import (
    DomainSpec,
    FluidState,
    PositivityError,
    SpeciesFields,
    recover_velocity,
)
from .gravity import GravityConfig, GravityField, apply_gravity_source, compute_field
from .transport import (
    RhsOutput,
    exact_transport_step_2d,
    transport_rhs,
)
from .verify import DiagnosticsRecord, InitialStats, initial_stats, monitor

__all__ = [
    "Integrator",
    "SolverConfig",
    "RunResult",
    "choose_dt",
    "step",
    "run",
]

_SPEED_FLOOR = 1e-30


class Integrator(str, enum.Enum):
    EULER = "euler"
    RK4 = "rk4"
    EXACT_TRANSPORT_2D = "exact-2d"


# cfl defaults: RK4 runs comfortably at half the locality limit; the two
# single-stage steppers stay just under it.
_DEFAULT_CFL = {
    Integrator.EULER: 0.9,
    Integrator.RK4: 0.5,
    Integrator.EXACT_TRANSPORT_2D: 0.9,
}


@dataclass(frozen=True)
class SolverConfig:
    """Integration settings; frozen so runs are reproducible by value."""

    t_end: float = 1.0
    integrator: Integrator = Integrator.RK4
    cfl: float | None = None  # None -> per-integrator default
    dt_max: float | None = None
    snapshot_every: float | None = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "integrator", Integrator(self.integrator))
        if self.cfl is not None and not (0.0 < self.cfl <= 1.0):
            raise ValueError(f"cfl must lie in (0, 1], got {self.cfl}")
        if self.t_end < 0 or not math.isfinite(self.t_end):
            raise ValueError(f"t_end must be finite and nonnegative, got {self.t_end}")
        if self.dt_max is not None and self.dt_max <= 0:
            raise ValueError(f"dt_max must be positive, got {self.dt_max}")
        if self.snapshot_every is not None and self.snapshot_every <= 0:
            raise ValueError("snapshot_every must be positive")

    @property
    def effective_cfl(self) -> float:
        return self.cfl if self.cfl is not None else _DEFAULT_CFL[self.integrator]


@dataclass
class RunResult:
    """Everything a run produces: states on the snapshot cadence plus the
    per-step diagnostics stream."""

    snapshots: list[FluidState]
    diagnostics: list[DiagnosticsRecord]
    final_state: FluidState
    stats: InitialStats


def _max_speed(state: FluidState) -> float:
    u = 0.0
    for s in state.species:
        for v in recover_velocity(s, state.time):
            u = max(u, float(np.max(np.abs(v))))
    return u


def choose_dt(
    state: FluidState,
    field: GravityField | None,
    domain: DomainSpec,
    cfg: SolverConfig,
) -> float:
    """Largest step allowed by transport locality and the gravity kick.

    ``min(cfl * eps / U, cfl * sqrt(eps / Gamma), dt_max)`` with U the largest
    per-axis speed and Gamma the largest field-gradient component, both
    floored at 1e-30 so a quiescent state simply yields dt_max (or a huge
    step for the caller to clip).
    """
    eps = domain.epsilon
    cfl = cfg.effective_cfl
    u_max = max(_max_speed(state), _SPEED_FLOOR)
    dt = cfl * eps / u_max
    if field is not None:
        gamma = max(
            max(float(np.max(np.abs(g))) for g in field.grad_phi), _SPEED_FLOOR
        )
        dt = min(dt, cfl * math.sqrt(eps / gamma))
    if cfg.dt_max is not None:
        dt = min(dt, cfg.dt_max)
    return dt


def _axpy(state: FluidState, dt: float, rhs: RhsOutput, new_time: float) -> FluidState:
    species = []
    for s, r in zip(state.species, rhs.species):
        species.append(
            SpeciesFields(
                s.rho + dt * r.rho,
                tuple(m + dt * dm for m, dm in zip(s.mom, r.mom)),
                None if s.energy is None else s.energy + dt * r.energy,
            )
        )
    return FluidState(species, new_time)


def _combine_rk4(
    state: FluidState, dt: float, ks: list[RhsOutput], new_time: float
) -> FluidState:
    w = (dt / 6.0, dt / 3.0, dt / 3.0, dt / 6.0)
    species = []
    for i, s in enumerate(state.species):
        rho = s.rho + sum(wj * k.species[i].rho for wj, k in zip(w, ks))
        mom = tuple(
            m + sum(wj * k.species[i].mom[a] for wj, k in zip(w, ks))
            for a, m in enumerate(s.mom)
        )
        energy = None
        if s.energy is not None:
            energy = s.energy + sum(wj * k.species[i].energy for wj, k in zip(w, ks))
        species.append(SpeciesFields(rho, mom, energy))
    return FluidState(species, new_time)


def _assert_positive(state: FluidState) -> None:
    # rho == 0.0 is allowed: a fully drained cell is vacuum, not a defect.
    for s in state.species:
        m = float(s.rho.min())
        if not (m >= 0.0) or not np.all(np.isfinite(s.rho)):
            bad = ~((s.rho >= 0.0) & np.isfinite(s.rho))
            idx = np.unravel_index(int(np.argmax(bad)), s.rho.shape)
            raise PositivityError(
                tuple(int(i) for i in idx), float(s.rho[idx]), state.time
            )


def _full_rhs(
    state: FluidState, domain: DomainSpec, field: GravityField | None
) -> RhsOutput:
    rhs = transport_rhs(state, domain)
    return apply_gravity_source(rhs, state, field)


def step(
    state: FluidState,
    domain: DomainSpec,
    gravity: GravityConfig | None,
    cfg: SolverConfig,
    dt: float,
    field: GravityField | None = None,
) -> FluidState:
    """Advance by one step of the configured integrator.

    ``field`` may carry a gravity field already evaluated at ``state`` (it is
    recomputed when absent, and always recomputed at interior RK4 stages).
    ``gravity=None`` means no gravity at all.  The returned state has been
    positivity-checked.
    """
    if field is None:
        field = compute_field(state, domain, gravity)
    t_new = state.time + dt

    if cfg.integrator is Integrator.EULER:
        new = _axpy(state, dt, _full_rhs(state, domain, field), t_new)
    elif cfg.integrator is Integrator.RK4:
        k1 = _full_rhs(state, domain, field)
        s2 = _axpy(state, 0.5 * dt, k1, state.time + 0.5 * dt)
        k2 = _full_rhs(s2, domain, compute_field(s2, domain, gravity))
        s3 = _axpy(state, 0.5 * dt, k2, state.time + 0.5 * dt)
        k3 = _full_rhs(s3, domain, compute_field(s3, domain, gravity))
        s4 = _axpy(state, dt, k3, t_new)
        k4 = _full_rhs(s4, domain, compute_field(s4, domain, gravity))
        new = _combine_rk4(state, dt, [k1, k2, k3, k4], t_new)
    elif cfg.integrator is Integrator.EXACT_TRANSPORT_2D:
        if domain.dim != 2:
            raise ValueError("the exact transport stepper only works on 2-d domains")
        new = exact_transport_step_2d(state, domain, dt)
        kick = compute_field(new, domain, gravity)
        if kick is not None:
            for s in new.species:
                for a in range(2):
                    s.mom[a][...] = s.mom[a] - dt * s.rho * kick.grad_phi[a]
    else:  # pragma: no cover
        raise ValueError(f"unknown integrator {cfg.integrator}")

    _assert_positive(new)
    return new


def run(
    initial: FluidState,
    domain: DomainSpec,
    gravity: GravityConfig | None,
    cfg: SolverConfig,
) -> RunResult:
    """Integrate from ``initial`` to ``cfg.t_end``.

    The gravity field is evaluated once per step and shared between the dt
    choice, the first stage and the diagnostics of the *previous* state.  The
    final step is clipped to land exactly on ``t_end``; a snapshot of the
    initial and final states is always kept, with intermediate ones on the
    ``snapshot_every`` cadence.  With ``t_end <= initial.time`` the loop body
    never runs and the result holds just the initial snapshot.
    """
    stats = initial_stats(initial, domain, gravity)
    state = initial.copy()
    field = compute_field(state, domain, gravity)

    snapshots = [state.copy()]
    records = [monitor(state, field, domain, stats, step=0, dt=0.0)]
    next_snap = (
        None if cfg.snapshot_every is None else state.time + cfg.snapshot_every
    )

    n = 0
    t_end = cfg.t_end
    while state.time < t_end * (1.0 - 1e-15) - 1e-300:
        dt = min(choose_dt(state, field, domain, cfg), t_end - state.time)
        state = step(state, domain, gravity, cfg, dt, field=field)
        n += 1
        field = compute_field(state, domain, gravity)
        records.append(monitor(state, field, domain, stats, step=n, dt=dt))
        if next_snap is not None and state.time >= next_snap * (1.0 - 1e-12):
            snapshots.append(state.copy())
            while next_snap <= state.time * (1.0 + 1e-12):
                next_snap += cfg.snapshot_every

    if state.time > initial.time and snapshots[-1].time != state.time:
        snapshots.append(state.copy())
    return RunResult(snapshots, records, state, stats)
