"""Self-describing binary snapshots and a CSV exporter.

Layout of the ``.wapf`` format, version 1, all integers and floats
little-endian:

    magic      4 bytes  b"WAPF"
    version    u32      1
    dim        u32
    cells      u32 * dim
    epsilon    f64
    time       f64
    species    u32
    flags      u32      bit 0: energy arrays present
    topology   u32      0 torus, 1 open box
    origin     f64 * dim
    arrays     per species: density, then one momentum array per axis,
               then the energy array if flagged -- each cells-many f64,
               x varying fastest.

Reading needs no external configuration and a write/read round trip is
bit-identical.  Truncated or corrupt files raise
:class:`SnapshotFormatError` naming the section that failed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .grid import DomainSpec, FluidState, SpeciesFields, Topology

__all__ = ["Snapshot", "SnapshotFormatError", "write_snapshot", "read_snapshot",
           "export_snapshot_csv"]

MAGIC = b"WAPF"
FORMAT_VERSION = 1
_TOPO_CODE = {Topology.TORUS: 0, Topology.OPEN_BOX: 1}
_TOPO_FROM_CODE = {v: k for k, v in _TOPO_CODE.items()}


class SnapshotFormatError(RuntimeError):
    """The bytes on disk are not a well-formed snapshot."""


@dataclass
class Snapshot:
    """A state frozen at one time together with its grid description."""

    domain: DomainSpec
    state: FluidState

    def __post_init__(self):
        if self.state.species[0].rho.shape != self.domain.cells:
            raise ValueError("state arrays do not match the domain's cells")

    @property
    def time(self) -> float:
        return self.state.time


def _has_energy(state: FluidState) -> bool:
    flags = {s.energy is not None for s in state.species}
    if len(flags) != 1:
        raise ValueError("species disagree about having an energy field")
    return flags.pop()


def write_snapshot(snapshot: Snapshot, path) -> None:
    """Serialize to the version-1 binary layout (see module docstring)."""
    domain, state = snapshot.domain, snapshot.state
    dim = domain.dim
    energy = _has_energy(state)
    header = bytearray()
    header += MAGIC
    header += struct.pack("<II", FORMAT_VERSION, dim)
    header += struct.pack(f"<{dim}I", *domain.cells)
    header += struct.pack("<dd", domain.epsilon, state.time)
    header += struct.pack(
        "<III", len(state.species), 1 if energy else 0, _TOPO_CODE[domain.topology]
    )
    header += struct.pack(f"<{dim}d", *domain.origin)
    with open(path, "wb") as fh:
        fh.write(bytes(header))
        for s in state.species:
            for arr in s.arrays():
                fh.write(np.ascontiguousarray(arr.T, dtype="<f8").tobytes())


def _take(buf: memoryview, n: int, section: str) -> memoryview:
    if len(buf) < n:
        raise SnapshotFormatError(
            f"file truncated in section {section!r}: need {n} bytes, have {len(buf)}"
        )
    return buf[:n]


def read_snapshot(path) -> Snapshot:
    """Parse a ``.wapf`` file back into a :class:`Snapshot`."""
    with open(path, "rb") as fh:
        raw = fh.read()
    buf = memoryview(raw)

    if bytes(_take(buf, 4, "magic")) != MAGIC:
        raise SnapshotFormatError(f"bad magic {bytes(buf[:4])!r}; not a snapshot file")
    buf = buf[4:]
    version, dim = struct.unpack("<II", _take(buf, 8, "version/dim"))
    buf = buf[8:]
    if version != FORMAT_VERSION:
        raise SnapshotFormatError(f"unsupported format version {version}")
    if dim not in (1, 2, 3):
        raise SnapshotFormatError(f"bad dimension {dim}")
    cells = struct.unpack(f"<{dim}I", _take(buf, 4 * dim, "cells"))
    buf = buf[4 * dim:]
    epsilon, time = struct.unpack("<dd", _take(buf, 16, "epsilon/time"))
    buf = buf[16:]
    n_species, flags, topo_code = struct.unpack(
        "<III", _take(buf, 12, "species/flags/topology")
    )
    buf = buf[12:]
    if n_species == 0:
        raise SnapshotFormatError("snapshot declares zero species")
    if topo_code not in _TOPO_FROM_CODE:
        raise SnapshotFormatError(f"unknown topology code {topo_code}")
    origin = struct.unpack(f"<{dim}d", _take(buf, 8 * dim, "origin"))
    buf = buf[8 * dim:]

    domain = DomainSpec(cells, epsilon, _TOPO_FROM_CODE[topo_code], origin)
    energy = bool(flags & 1)
    n_cells = int(np.prod(cells))
    nbytes = 8 * n_cells

    def read_array(section: str):
        nonlocal buf
        chunk = _take(buf, nbytes, section)
        buf = buf[nbytes:]
        flat = np.frombuffer(chunk, dtype="<f8").astype(np.float64)
        return flat.reshape(tuple(reversed(cells))).T

    species = []
    for si in range(n_species):
        rho = read_array(f"species {si} density")
        mom = tuple(read_array(f"species {si} momentum[{a}]") for a in range(dim))
        en = read_array(f"species {si} energy") if energy else None
        species.append(SpeciesFields(rho, mom, en))
    if len(buf):
        raise SnapshotFormatError(f"{len(buf)} unexpected trailing bytes")
    return Snapshot(domain, FluidState(species, time))


def export_snapshot_csv(snapshot: Snapshot, path) -> None:
    """Sibling CSV: cell-center coordinates plus every field, x fastest.

    Columns: x[,y,z], then per species ``s<i>_rho``, ``s<i>_mom_<axis>``...
    and ``s<i>_energy`` when present.
    """
    domain, state = snapshot.domain, snapshot.state
    dim = domain.dim
    mesh = domain.center_mesh()
    cols: list[tuple[str, np.ndarray]] = []
    for a, name in zip(range(dim), "xyz"):
        cols.append((name, mesh[a]))
    for si, s in enumerate(state.species):
        cols.append((f"s{si}_rho", s.rho))
        for a, axis in zip(range(dim), "xyz"):
            cols.append((f"s{si}_mom_{axis}", s.mom[a]))
        if s.energy is not None:
            cols.append((f"s{si}_energy", s.energy))
    header = ",".join(name for name, _ in cols)
    stacked = np.column_stack([arr.ravel(order="F") for _, arr in cols])
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in stacked:
            # float() first: repr of a numpy scalar is not parseable text.
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
