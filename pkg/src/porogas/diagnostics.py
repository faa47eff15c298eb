"""Certified per-step quantities: discrete energy, component moles, extrema."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .thermo import helmholtz


@dataclass
class DiagnosticsRecord:
    n: int
    t: float
    tau: float
    energy: float
    masses: np.ndarray
    c_min: np.ndarray
    c_max: np.ndarray
    beta_c_min: float
    beta_c_max: float
    phi_min: float
    phi_max: float
    iterations: int = 0
    X1: float = 0.0
    X2: float = 0.0
    max_residual: float = 0.0
    upwind_mismatch_flux: float = 0.0


@dataclass
class BoundsReport:
    c_min: np.ndarray
    c_max: np.ndarray
    beta_c_min: float
    beta_c_max: float
    phi_min: float
    phi_max: float
    flags: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.flags


def fluid_energy(phi, c, area, eos) -> float:
    return float(np.sum(area * np.asarray(phi) * helmholtz(c, eos)))


def discrete_energy(state, problem) -> float:
    """Fluid free energy + DG elastic energy + pressure storage, in J per unit depth.

    The elastic part is half the DG stiffness quadratic form, i.e. the volume
    strain energy, the jump penalty and the consistency terms together.
    """
    mesh = problem.mesh
    area = mesh.cell_area
    ops = problem.elastic
    storage = float(np.sum(area * np.asarray(state.p) ** 2)) / (2.0 * ops.params.biot_modulus)
    return fluid_energy(state.phi, state.c, area, problem.eos) + ops.elastic_energy(state.w) + storage


def solid_balance(old, new, phi_new, problem) -> float:
    """Solid and storage energy increment minus (phi^{n+1} - phi^n, p^{n+1}); never positive."""
    area = problem.mesh.cell_area
    ops = problem.elastic
    N = ops.params.biot_modulus
    d_el = ops.elastic_energy(new.w) - ops.elastic_energy(old.w)
    d_st = float(np.sum(area * (new.p**2 - old.p**2))) / (2.0 * N)
    work = float(np.sum(area * (np.asarray(phi_new) - old.phi) * new.p))
    return d_el + d_st - work


def component_mass(phi, c, mesh) -> np.ndarray:
    """Moles of each component: sum_K phi c_i |K|."""
    c = np.asarray(c, float)
    weights = np.asarray(phi, float) * mesh.cell_area
    if c.ndim == 1:
        return float(weights @ c)
    return weights @ c


def bounds_report(c, phi, beta_star: float) -> BoundsReport:
    c = np.atleast_2d(np.asarray(c, float))
    phi = np.asarray(phi, float)
    bc = beta_star * c.sum(axis=1)
    flags = []
    for i in range(c.shape[1]):
        bad = np.flatnonzero(~(c[:, i] > 0))
        if bad.size:
            flags.append(f"c[{i}] <= 0 in cell {bad[0]}")
    bad = np.flatnonzero(~(bc < 1))
    if bad.size:
        flags.append(f"beta* c >= 1 in cell {bad[0]}")
    bad = np.flatnonzero(~((phi > 0) & (phi < 1)))
    if bad.size:
        flags.append(f"porosity outside (0, 1) in cell {bad[0]}")
    return BoundsReport(c.min(axis=0), c.max(axis=0), float(bc.min()), float(bc.max()),
                        float(phi.min()), float(phi.max()), flags)


def make_record(state, problem, report=None) -> DiagnosticsRecord:
    b = bounds_report(state.c, state.phi, problem.eos.beta_star)
    rec = DiagnosticsRecord(
        n=state.n,
        t=state.t,
        tau=0.0 if report is None else report.tau,
        energy=discrete_energy(state, problem),
        masses=component_mass(state.phi, state.c, problem.mesh),
        c_min=b.c_min,
        c_max=b.c_max,
        beta_c_min=b.beta_c_min,
        beta_c_max=b.beta_c_max,
        phi_min=b.phi_min,
        phi_max=b.phi_max,
    )
    if report is not None:
        rec.iterations = report.iterations
        rec.X1 = report.X1
        rec.X2 = report.X2
        rec.max_residual = report.max_residual
        rec.upwind_mismatch_flux = report.upwind_mismatch_flux
    return rec


def csv_header(names) -> list[str]:
    cols = ["n", "t", "tau", "energy"]
    cols += [f"mass_{nm}" for nm in names]
    for nm in names:
        cols += [f"min_c_{nm}", f"max_c_{nm}"]
    cols += ["min_beta_c", "max_beta_c", "min_phi", "max_phi", "iters", "X1", "X2", "max_residual",
             "upwind_mismatch_flux"]
    return cols


def record_row(rec: DiagnosticsRecord) -> list:
    row = [rec.n, rec.t, rec.tau, rec.energy, *rec.masses]
    for lo, hi in zip(rec.c_min, rec.c_max):
        row += [lo, hi]
    row += [rec.beta_c_min, rec.beta_c_max, rec.phi_min, rec.phi_max, rec.iterations, rec.X1, rec.X2,
            rec.max_residual, rec.upwind_mismatch_flux]
    return row
