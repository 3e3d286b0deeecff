"""Command-line front end.

Subcommands:

* ``run`` -- build a scenario, integrate it, write ``.wapf`` snapshots and a
  ``diagnostics.csv`` into the output directory.
* ``convergence`` -- grid-refinement study over a list of epsilons, written
  as ``convergence.csv`` with fitted orders in footer rows.
* ``nbody-compare`` -- run the fluid from a deposited set of bodies and the
  point-mass reference side by side, report position gaps in cell units.
* ``star-fraction`` -- fraction of a snapshot's mass within a given cell
  radius of the density maximum.

A flat ``key = value`` config file can prefill any option of the invoked
subcommand (explicit flags win); scenario parameters are set with repeated
``--param name=value`` flags or ``param.name`` config keys.

Exit status is 0 on success.  Any failure prints exactly one line to stderr
of the form ``error category=<category>: <message>`` (categories: usage,
config, io, format, positivity, numerics, internal) and exits nonzero.
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import sys
from pathlib import Path

import numpy as np

from .grid import DomainSpec, PositivityError, Topology
from .gravity import BoundaryMode, GravityConfig, compute_field
from .integrate import Integrator, SolverConfig, run as run_solver
from .nbody import (
    Softening,
    bodies_to_fields,
    extract_bodies,
    integrate_bodies,
    read_bodies_csv,
)
from .scenarios import (
    DEFAULT_T_END,
    ScenarioName,
    ScenarioSpec,
    build_scenario,
    scenario_domain,
    _GEOMETRY,
)
from .snapshots import Snapshot, SnapshotFormatError, read_snapshot, write_snapshot
from .transport import StepRejectedError
from .verify import convergence_study, write_convergence_csv

__all__ = ["main", "cli_main"]


class _UsageError(Exception):
    pass


class _ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems on our single error line."""

    def error(self, message):
        raise _UsageError(message)


def _parse_cells(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(p) for p in text.split(","))
    except ValueError as exc:
        raise _ConfigError(f"bad cell counts {text!r}") from exc


def _parse_eps_list(text: str) -> list[float]:
    try:
        vals = [float(p) for p in text.split(",")]
    except ValueError as exc:
        raise _ConfigError(f"bad epsilon list {text!r}") from exc
    if len(vals) < 2:
        raise _ConfigError("need at least two epsilons for a study")
    return vals


def _load_config(path: str) -> dict[str, str]:
    out: dict[str, str] = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise _ConfigError(f"cannot read config file {path}: {exc}") from exc
    for ln, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise _ConfigError(f"{path}:{ln}: expected 'key = value', got {line!r}")
        key, value = body.split("=", 1)
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def _merge_config(args: argparse.Namespace, parser_opts: dict[str, type], config: dict):
    """Fill options the command line left at None from the config file."""
    params = {}
    for key, raw in config.items():
        if key.startswith("param."):
            params[key[len("param."):]] = raw
            continue
        if key not in parser_opts:
            raise _ConfigError(f"unknown config key {key!r}")
        if getattr(args, key) is None:
            caster = parser_opts[key]
            try:
                setattr(args, key, caster(raw))
            except (_ConfigError, _UsageError):
                raise
            except Exception as exc:
                raise _ConfigError(f"bad value for {key!r}: {raw!r}") from exc
    return params


def _parse_params(pairs: list[str] | None, from_config: dict[str, str]) -> dict:
    out: dict[str, float] = {}
    for name, raw in from_config.items():
        try:
            out[name] = float(raw)
        except ValueError as exc:
            raise _ConfigError(f"parameter {name!r} must be numeric, got {raw!r}") from exc
    for pair in pairs or []:
        if "=" not in pair:
            raise _UsageError(f"--param expects name=value, got {pair!r}")
        name, raw = pair.split("=", 1)
        try:
            out[name.strip()] = float(raw)
        except ValueError as exc:
            raise _UsageError(f"parameter {name!r} must be numeric, got {raw!r}") from exc
    return out


def _scenario_choices() -> list[str]:
    return [s.value for s in ScenarioName]


def _build_domain(spec: ScenarioSpec, cells, epsilon) -> DomainSpec:
    dim, extent, origin, topo = _GEOMETRY[spec.name]
    if cells is not None and len(cells) == 1:
        cells = cells * dim
    if epsilon is None:
        n = cells if cells is not None else (128,) * dim
        epsilon = extent[0] / n[0]
        return DomainSpec(n, epsilon, topo, origin)
    if cells is None:
        return scenario_domain(spec, epsilon)
    return DomainSpec(cells, epsilon, topo, origin)


def _write_diagnostics(records, dim: int, path: Path) -> None:
    mom_cols = ",".join(f"mom_{ax}" for ax in "xyz"[:dim])
    lines = [
        f"step,t,dt,mass_total,{mom_cols},min_rho,max_speed,max_gradphi,flags"
    ]
    for r in records:
        mom = ",".join(repr(v) for v in r.momentum)
        lines.append(
            f"{r.step},{r.t!r},{r.dt!r},{r.mass_total!r},{mom},"
            f"{r.min_rho!r},{r.max_speed!r},{r.max_gradphi!r},{r.flags}"
        )
    path.write_text("\n".join(lines) + "\n")


def _cmd_run(args) -> int:
    if args.scenario is None:
        raise _UsageError("--scenario is required (flag or config file)")
    params = _parse_params(args.param, args.config_params)
    spec = ScenarioSpec(args.scenario, params, args.seed if args.seed is not None else 0)
    domain = _build_domain(spec, args.cells, args.epsilon)
    state, gravity, meta = build_scenario(spec, domain)
    if gravity.enabled:
        overrides = {}
        if args.G is not None:
            overrides["G"] = args.G
        if args.alpha is not None:
            overrides["alpha"] = args.alpha
        if overrides:
            gravity = dataclasses.replace(gravity, **overrides)
    t_end = args.t_end if args.t_end is not None else DEFAULT_T_END[spec.name]
    solver = SolverConfig(
        t_end=t_end,
        integrator=args.integrator if args.integrator is not None else Integrator.RK4,
        cfl=args.cfl,
        snapshot_every=args.snapshot_every,
        seed=spec.seed,
    )
    if solver.integrator is Integrator.EXACT_TRANSPORT_2D and domain.dim != 2:
        raise _UsageError("--integrator exact-2d needs a 2-d scenario")

    out = Path(args.out if args.out is not None else "out")
    out.mkdir(parents=True, exist_ok=True)
    result = run_solver(state, domain, gravity, solver)
    for i, snap_state in enumerate(result.snapshots):
        write_snapshot(Snapshot(domain, snap_state), out / f"snapshot_{i:04d}.wapf")
    _write_diagnostics(result.diagnostics, domain.dim, out / "diagnostics.csv")
    worst = max(r.flags for r in result.diagnostics)
    print(
        f"scenario={spec.name.value} steps={result.diagnostics[-1].step} "
        f"t={result.final_state.time!r} snapshots={len(result.snapshots)} "
        f"out={out} worst_flags={worst}"
    )
    return 0


def _cmd_convergence(args) -> int:
    if args.scenario is None:
        raise _UsageError("--scenario is required (flag or config file)")
    if args.eps_list is None:
        raise _UsageError("--eps-list is required (flag or config file)")
    params = _parse_params(args.param, args.config_params)
    spec = ScenarioSpec(args.scenario, params, args.seed if args.seed is not None else 0)
    t_samples = [float(p) for p in args.t_sample.split(",")] if args.t_sample else [0.3]
    solver = SolverConfig(
        t_end=max(t_samples),
        integrator=args.integrator if args.integrator is not None else Integrator.RK4,
        cfl=args.cfl,
    )
    table = convergence_study(spec, args.eps_list, t_samples, solver=solver)
    out = Path(args.out if args.out is not None else "out")
    out.mkdir(parents=True, exist_ok=True)
    write_convergence_csv(table, out / "convergence.csv")
    for (t, eq), order in sorted(table.orders.items()):
        print(f"t={t!r} equation={eq} order={order:.4f}")
    return 0


def _cmd_nbody_compare(args) -> int:
    bodies = read_bodies_csv(args.bodies)
    dim = bodies[0].dim
    if dim != 2:
        raise _UsageError("nbody-compare currently runs 2-d body sets")
    cells = args.cells if args.cells is not None else (128,) * dim
    if len(cells) == 1:
        cells = cells * dim
    com = sum(b.m * b.r for b in bodies) / sum(b.m for b in bodies)
    epsilon = args.epsilon if args.epsilon is not None else 2 * math.pi / cells[0]
    origin = tuple(com[a] - 0.5 * cells[a] * epsilon for a in range(dim))
    domain = DomainSpec(cells, epsilon, Topology.OPEN_BOX, origin)
    gravity = GravityConfig(
        G=args.G if args.G is not None else 1.0,
        alpha=args.alpha if args.alpha is not None else 0.25,
        boundary=BoundaryMode.FREE_SPACE,
    )
    t_end = args.t_end if args.t_end is not None else 1.0
    state = bodies_to_fields(bodies, domain)
    # The deposit background is near-vacuum, where only the exact stepper
    # keeps densities nonnegative; RK4 is still selectable explicitly.
    solver = SolverConfig(
        t_end=t_end,
        integrator=args.integrator
        if args.integrator is not None
        else Integrator.EXACT_TRANSPORT_2D,
        cfl=args.cfl,
    )
    result = run_solver(state, domain, gravity, solver)

    n_steps = max(1, int(args.reference_steps or 2000))
    softening = Softening(args.softening if args.softening is not None else 0.0)
    final_bodies, _traj = integrate_bodies(
        bodies, gravity.G, softening, t_end / n_steps, n_steps
    )

    threshold = 10.0 * epsilon  # well above the deposit background
    found = extract_bodies(result.final_state, domain, threshold)
    out = Path(args.out if args.out is not None else "out")
    out.mkdir(parents=True, exist_ok=True)
    lines = ["body,ref_x,ref_y,fluid_x,fluid_y,gap,gap_cells"]
    worst = 0.0
    for i, ref in enumerate(final_bodies):
        if not found:
            raise _ConfigError("no density concentrations found to compare against")
        gaps = [float(np.linalg.norm(f.r - ref.r)) for f in found]
        j = int(np.argmin(gaps))
        gap = gaps[j]
        worst = max(worst, gap)
        f = found[j]
        lines.append(
            f"{i},{ref.r[0]!r},{ref.r[1]!r},{f.r[0]!r},{f.r[1]!r},"
            f"{gap!r},{gap / epsilon!r}"
        )
    (out / "nbody_compare.csv").write_text("\n".join(lines) + "\n")
    print(f"bodies={len(final_bodies)} max_gap_cells={worst / epsilon!r}")
    return 0


def _cmd_star_fraction(args) -> int:
    snap = read_snapshot(args.snapshot)
    rho = snap.state.total_rho()
    domain = snap.domain
    n = int(args.radius_cells)
    if n < 0:
        raise _UsageError("--radius-cells must be >= 0")
    peak = np.unravel_index(int(np.argmax(rho)), rho.shape)
    window = rho
    for axis, center in enumerate(peak):
        idx = np.arange(center - n, center + n + 1)
        if domain.topology is Topology.TORUS:
            idx %= rho.shape[axis]
        else:
            idx = idx[(idx >= 0) & (idx < rho.shape[axis])]
        window = np.take(window, idx, axis=axis)
    total = float(rho.sum())
    fraction = float(window.sum()) / total if total > 0 else 0.0
    print(f"star_fraction={fraction!r}")
    return 0


def _add_common_run_opts(p: _Parser) -> dict[str, type]:
    p.add_argument("--cells", type=_parse_cells, default=None)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--cfl", type=float, default=None)
    p.add_argument("--G", type=float, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument(
        "--integrator",
        type=Integrator,
        choices=list(Integrator),
        default=None,
    )
    p.add_argument("--param", action="append", default=None)
    p.add_argument("--config", default=None)
    return {
        "cells": _parse_cells,
        "epsilon": float,
        "cfl": float,
        "G": float,
        "alpha": float,
        "seed": int,
        "integrator": Integrator,
    }


def _build_parser():
    parser = _Parser(prog="dustflow", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    opt_registry: dict[str, dict[str, type]] = {}

    p_run = sub.add_parser("run", help="integrate a scenario")
    p_run.add_argument("--scenario", choices=_scenario_choices(), default=None)
    opts = _add_common_run_opts(p_run)
    p_run.add_argument("--t-end", dest="t_end", type=float, default=None)
    p_run.add_argument(
        "--snapshot-every", dest="snapshot_every", type=float, default=None
    )
    p_run.add_argument("--out", default=None)
    opts.update({"scenario": str, "t_end": float, "snapshot_every": float, "out": str})
    p_run.set_defaults(func=_cmd_run)
    opt_registry["run"] = opts

    p_con = sub.add_parser("convergence", help="grid-refinement study")
    p_con.add_argument("--scenario", choices=_scenario_choices(), default=None)
    p_con.add_argument(
        "--eps-list", dest="eps_list", type=_parse_eps_list, default=None
    )
    opts = _add_common_run_opts(p_con)
    p_con.add_argument("--t-sample", dest="t_sample", default=None)
    p_con.add_argument("--out", default=None)
    opts.update({"scenario": str, "eps_list": _parse_eps_list, "t_sample": str, "out": str})
    p_con.set_defaults(func=_cmd_convergence)
    opt_registry["convergence"] = opts

    p_nb = sub.add_parser("nbody-compare", help="fluid vs point-mass reference")
    p_nb.add_argument("--bodies", required=True)
    opts = _add_common_run_opts(p_nb)
    p_nb.add_argument("--t-end", dest="t_end", type=float, default=None)
    p_nb.add_argument("--softening", type=float, default=None)
    p_nb.add_argument("--reference-steps", dest="reference_steps", type=int, default=None)
    p_nb.add_argument("--out", default=None)
    opts.update(
        {"t_end": float, "softening": float, "reference_steps": int, "out": str}
    )
    p_nb.set_defaults(func=_cmd_nbody_compare)
    opt_registry["nbody-compare"] = opts

    p_sf = sub.add_parser("star-fraction", help="mass share near the density peak")
    p_sf.add_argument("--snapshot", required=True)
    p_sf.add_argument("--radius-cells", dest="radius_cells", type=int, required=True)
    p_sf.set_defaults(func=_cmd_star_fraction)
    opt_registry["star-fraction"] = {"snapshot": str, "radius_cells": int}

    return parser, opt_registry


def main(argv: list[str] | None = None) -> int:
    """Entry point; returns the process exit status instead of calling exit."""
    parser, opt_registry = _build_parser()
    try:
        args = parser.parse_args(argv)
        config = _load_config(args.config) if getattr(args, "config", None) else {}
        args.config_params = {
            k[len("param."):]: v for k, v in config.items() if k.startswith("param.")
        }
        non_param = {k: v for k, v in config.items() if not k.startswith("param.")}
        _merge_config(args, opt_registry[args.command], non_param)
        return args.func(args)
    except _UsageError as exc:
        print(f"error category=usage: {exc}", file=sys.stderr)
        return 2
    except _ConfigError as exc:
        print(f"error category=config: {exc}", file=sys.stderr)
        return 1
    except SnapshotFormatError as exc:
        print(f"error category=format: {exc}", file=sys.stderr)
        return 1
    except PositivityError as exc:
        print(f"error category=positivity: {exc}", file=sys.stderr)
        return 1
    except StepRejectedError as exc:
        print(f"error category=numerics: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError) as exc:
        print(f"error category=config: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error category=io: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - last resort
        print(f"error category=internal: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def cli_main(argv: list[str] | None = None) -> int:
    """Alias kept for callers that import the entry point by this name."""
    return main(argv)


if __name__ == "__main__":
    sys.exit(main())
