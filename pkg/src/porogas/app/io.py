"""Legacy ASCII VTK snapshots and CSV time series."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..diagnostics import csv_header, record_row
from ..geomech import vertex_average
from ..mesh import SimplicialMesh

VTK_TRIANGLE = 5


@dataclass
class Snapshot:
    mesh: SimplicialMesh
    names: list
    c: np.ndarray
    p: np.ndarray
    phi: np.ndarray
    mu: np.ndarray
    permeability: np.ndarray
    w: np.ndarray
    n: int = 0
    t: float = 0.0

    @classmethod
    def from_state(cls, mesh, names, state, permeability):
        return cls(mesh, list(names), state.c, state.p, state.phi, state.mu, permeability, state.w,
                   state.n, state.t)

    def cell_fields(self) -> dict:
        out = {}
        for i, nm in enumerate(self.names):
            out[f"c_{nm}"] = self.c[:, i]
        out["c_total"] = self.c.sum(axis=1)
        out["pressure"] = self.p
        out["porosity"] = self.phi
        for i, nm in enumerate(self.names):
            out[f"mu_{nm}"] = self.mu[:, i]
        out["permeability"] = self.permeability
        return out


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def write_vtk(snap: Snapshot, path) -> None:
    mesh = snap.mesh
    lines = [
        "# vtk DataFile Version 3.0",
        f"porogas n={snap.n} t={_fmt(snap.t)} SI units, per unit depth",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {mesh.n_vertices} double",
    ]
    lines += [f"{_fmt(x)} {_fmt(y)} 0" for x, y in mesh.vertices]
    nc = mesh.n_cells
    lines.append(f"CELLS {nc} {4 * nc}")
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.cells]
    lines.append(f"CELL_TYPES {nc}")
    lines += [str(VTK_TRIANGLE)] * nc
    lines.append(f"CELL_DATA {nc}")
    for name, vals in snap.cell_fields().items():
        lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        lines += [_fmt(v) for v in vals]
    wv = vertex_average(mesh, snap.w)
    lines.append(f"POINT_DATA {mesh.n_vertices}")
    lines.append("VECTORS displacement double")
    lines += [f"{_fmt(a)} {_fmt(b)} 0" for a, b in wv]
    Path(path).write_text("\n".join(lines) + "\n")


def read_vtk(path) -> dict:
    """Minimal reader for files written by write_vtk."""
    tokens = Path(path).read_text().split("\n")
    out = {"points": None, "cells": None, "cell_types": None, "cell_data": {}, "point_data": {}}
    k = 0
    section = None

    def take(n):
        nonlocal k
        vals = []
        while len(vals) < n:
            vals.extend(tokens[k].split())
            k += 1
        return vals

    while k < len(tokens):
        line = tokens[k].strip()
        k += 1
        if not line:
            continue
        head = line.split()
        key = head[0]
        if key == "POINTS":
            n = int(head[1])
            out["points"] = np.array(take(3 * n), float).reshape(n, 3)
        elif key == "CELLS":
            n, size = int(head[1]), int(head[2])
            raw = np.array(take(size), dtype=np.int64)
            out["cells"] = raw.reshape(n, -1)[:, 1:]
        elif key == "CELL_TYPES":
            out["cell_types"] = np.array(take(int(head[1])), dtype=np.int64)
        elif key == "CELL_DATA":
            section = ("cell_data", int(head[1]))
        elif key == "POINT_DATA":
            section = ("point_data", int(head[1]))
        elif key == "SCALARS":
            name = head[1]
            if tokens[k].strip().startswith("LOOKUP_TABLE"):
                k += 1
            out[section[0]][name] = np.array(take(section[1]), float)
        elif key == "VECTORS":
            out[section[0]][head[1]] = np.array(take(3 * section[1]), float).reshape(-1, 3)
    return out


def write_timeseries(records, names, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(csv_header(names))
        for rec in records:
            writer.writerow([_fmt(v) for v in record_row(rec)])


def read_timeseries(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def diff_csv(a, b, rtol: float = 0.0) -> list[str]:
    """Differences between two time-series files; empty when they agree within rtol."""
    ha, ra = read_timeseries(a)
    hb, rb = read_timeseries(b)
    problems = []
    if ha != hb:
        return [f"headers differ: {ha} vs {hb}"]
    if len(ra) != len(rb):
        problems.append(f"row counts differ: {len(ra)} vs {len(rb)}")
    for r, (x, y) in enumerate(zip(ra, rb), start=1):
        for col, u, v in zip(ha, x, y):
            if u == v:
                continue
            try:
                fu, fv = float(u), float(v)
            except ValueError:
                problems.append(f"row {r}, {col}: {u!r} vs {v!r}")
                continue
            if not math.isclose(fu, fv, rel_tol=rtol, abs_tol=0.0):
                problems.append(f"row {r}, {col}: {u} vs {v}")
    return problems
