"""Persistence: diagnostics CSV and binary field snapshots.

Snapshot layout (all little-endian)::

    6 bytes   magic b"NLCH1\\0"
    u16       format version (1)
    u8        d
    u8        number of species n+1
    u64       points per axis N
    f64       extent
    f64       time
    f64 * (n+1) * N^d   values, species-major then row-major
"""
from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .grid import TorusGrid
from .model import State

__all__ = ["SnapshotError", "write_snapshot", "read_snapshot", "write_diagnostics",
           "diagnostics_header", "write_fields_csv", "MAGIC", "VERSION"]

MAGIC = b"NLCH1\0"
VERSION = 1
_HEADER = struct.Struct("<HBBQdd")


class SnapshotError(ValueError):
    """A snapshot file is malformed."""


def write_snapshot(state: State, path) -> None:
    g = state.grid
    head = MAGIC + _HEADER.pack(VERSION, g.d, state.species, g.n_points, g.extent, state.time)
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(np.ascontiguousarray(state.u, dtype="<f8").tobytes())


def read_snapshot(path, workers: int = 1) -> State:
    data = Path(path).read_bytes()
    fixed = len(MAGIC) + _HEADER.size
    if len(data) < fixed:
        raise SnapshotError(f"{path}: truncated header, expected at least {fixed} bytes, got {len(data)}")
    if data[:len(MAGIC)] != MAGIC:
        raise SnapshotError(f"{path}: bad magic {data[:len(MAGIC)]!r}")
    version, d, species, n, extent, time = _HEADER.unpack_from(data, len(MAGIC))
    if version != VERSION:
        raise SnapshotError(f"{path}: unsupported version {version}")
    expected = fixed + 8 * species * n ** d
    if len(data) != expected:
        raise SnapshotError(f"{path}: expected {expected} bytes, got {len(data)}")
    grid = TorusGrid(d=d, n_points=n, extent=extent, workers=workers)
    u = np.frombuffer(data, dtype="<f8", offset=fixed).reshape((species,) + grid.shape)
    return State(grid, u.astype(float), time)


def diagnostics_header(species: int, kind: str = "nonlocal") -> list[str]:
    """CSV column names; species-indexed fields expand to name_0 .. name_n."""
    per = lambda name: [f"{name}_{i}" for i in range(species)]
    return (["step", "time", "tau", "energy_total", "energy_entropy",
             "energy_nonlocal" if kind == "nonlocal" else "energy_dirichlet"]
            + per("mass") + ["min_u", "max_u", "simplex_dev"]
            + per("fisher") + ["fisher_floor_hits"] + per("nonlocal_grad_form")
            + ["flux_norm", "mu_h2_sq"] + per("mu_l1") + per("mass_drift_step")
            + ["outer_iterations", "s2_iterations", "linear_iterations",
               "outer_residual", "s2_residual", "linear_residual", "retried"])


_ORDER = ["step", "time", "tau", "energy_total", "energy_entropy", "energy_interaction", "mass",
          "min_u", "max_u", "simplex_dev", "fisher", "fisher_floor_hits", "nonlocal_grad_form",
          "flux_norm", "mu_h2_sq", "mu_l1", "mass_drift_step", "outer_iterations", "s2_iterations",
          "linear_iterations", "outer_residual", "s2_residual", "linear_residual", "retried"]


def _cell(value):
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def _row(rec) -> list[str]:
    out = []
    for name in _ORDER:
        value = getattr(rec, name)
        if isinstance(value, np.ndarray):
            out.extend(_cell(v) for v in value)
        else:
            out.append(_cell(value))
    return out


def write_diagnostics(records, path, kind: str = "nonlocal") -> None:
    """Write records as CSV; floats use repr so they read back exactly."""
    records = list(records)
    species = len(records[0].mass) if records else 2
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(diagnostics_header(species, kind))
        for rec in records:
            w.writerow(_row(rec))


def write_fields_csv(state: State, path) -> None:
    """Debug dump: one row per grid point, coordinates then fractions."""
    g = state.grid
    cols = [c.ravel() for c in g.coords] + [ui.ravel() for ui in state.u]
    names = [f"x{a}" for a in range(g.d)] + [f"u_{i}" for i in range(state.species)]
    np.savetxt(path, np.column_stack(cols), delimiter=",", header=",".join(names), comments="", fmt="%.17g")
