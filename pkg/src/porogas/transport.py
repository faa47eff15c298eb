"""Cell-centred mass balances with explicit upwind flux and implicit penalty.

The unknown of each linear system is the scaled increment
zeta = (c^{l+1} - c^n) / (c^n (1 - beta* c^n)). In that variable the stabilized
potential is mu(c^n) + theta RT zeta, so the penalty acts on the exact jump of
the cellwise potential and the matrix is a symmetric M-matrix:

    diag(phi^l |K| s / tau) + theta RT * L,    s = c^n (1 - beta* c^n),

with L the graph Laplacian weighted by sigma * K_e on every flux-carrying face.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .mesh import FaceSet, SimplicialMesh


class TransportSolveError(RuntimeError):
    pass


class BoundViolation(RuntimeError):
    def __init__(self, message, cell=None):
        super().__init__(message)
        self.cell = cell


@dataclass(frozen=True, eq=False)
class TransportSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    scale: np.ndarray  # s_K, maps zeta to a density increment
    base: np.ndarray  # c^n of the balanced quantity

    @property
    def diagonal(self) -> np.ndarray:
        return self.matrix.diagonal()


def face_permeability(faces: FaceSet, permeability) -> np.ndarray:
    """Arithmetic mean of the adjacent cells (the cell value on open boundaries)."""
    k = np.asarray(permeability, float)
    plus = k[faces.plus]
    minus = k[np.maximum(faces.minus, 0)]
    return np.where(faces.is_boundary, plus, 0.5 * (plus + minus))


def penalty_laplacian(faces: FaceSet, weight, n_cells: int) -> sp.csr_matrix:
    """sum_e weight_e g_e g_e^T, g_e = e_{K+} - e_{K-}; open faces only touch K+."""
    wgt = np.asarray(weight, float)
    inner = ~faces.is_boundary
    p, m, wi = faces.plus[inner], faces.minus[inner], wgt[inner]
    rows = np.concatenate([p, m, p, m, faces.plus[~inner]])
    cols = np.concatenate([p, m, m, p, faces.plus[~inner]])
    vals = np.concatenate([wi, wi, -wi, -wi, wgt[~inner]])
    return sp.coo_matrix((vals, (rows, cols)), shape=(n_cells, n_cells)).tocsr()


def assemble_system(
    mesh: SimplicialMesh,
    faces: FaceSet,
    c_prev,
    mu_prev,
    flux,
    phi_iter,
    phi_prev,
    scale,
    tau: float,
    theta_RT: float,
    penalty_weight,
    mu_ghost=None,
    laplacian=None,
) -> TransportSystem:
    """Balance of one density (a component or the total).

    ``flux`` is c* u h per flux-carrying face for the balanced quantity and
    ``penalty_weight`` is sigma * K_e per face.
    """
    if not tau > 0:
        raise ValueError("time step must be positive")
    phi_iter = np.asarray(phi_iter, float)
    if np.any((phi_iter <= 0) | (phi_iter >= 1)):
        raise ValueError("porosity iterate outside (0, 1)")
    area = mesh.cell_area
    n = mesh.n_cells
    L = penalty_laplacian(faces, penalty_weight, n) if laplacian is None else laplacian
    diag = phi_iter * area * scale / tau
    A = (sp.diags(diag) + theta_RT * L).tocsr()
    jump_prev = faces.jump(mu_prev, mu_ghost)
    rhs = (
        -(phi_iter - np.asarray(phi_prev)) * area * np.asarray(c_prev) / tau
        - faces.divergence(flux, n)
        - faces.divergence(np.asarray(penalty_weight) * jump_prev, n)
    )
    return TransportSystem(A, rhs, np.asarray(scale, float), np.asarray(c_prev, float))


def solve_increment(system: TransportSystem) -> np.ndarray:
    """Scaled increment zeta with a relative residual check."""
    A, b = system.matrix, system.rhs
    if A.nnz == np.count_nonzero(A.diagonal()):
        x = b / A.diagonal()
    else:
        x = spsolve(A.tocsc(), b)
    bnorm = np.abs(b).max()
    if bnorm == 0.0:
        return np.zeros_like(b)
    res = np.abs(A @ x - b).max()
    if not np.all(np.isfinite(x)) or res > 1e-12 * bnorm:
        raise TransportSolveError(f"transport solve residual {res:.3e} vs rhs {bnorm:.3e}")
    return x


def solve_transport(system: TransportSystem) -> np.ndarray:
    return system.base + system.scale * solve_increment(system)


def recover_last_component(c_total, c_first) -> np.ndarray:
    """c_M = c - sum_{i<M} c_i."""
    c_first = np.asarray(c_first, float)
    if c_first.ndim == 1:
        c_first = c_first[:, None]
    return np.asarray(c_total, float) - c_first.sum(axis=1)


def local_residual(
    mesh: SimplicialMesh,
    faces: FaceSet,
    c_new,
    c_prev,
    mu_stab,
    flux,
    phi_new,
    phi_prev,
    tau: float,
    penalty_weight,
    mu_ghost=None,
):
    """Per-cell residual of a balance at given fields, and the mass-rate scale."""
    area = mesh.cell_area
    n = mesh.n_cells
    c_new = np.asarray(c_new, float)
    res = (
        area * (np.asarray(phi_new) * c_new - np.asarray(phi_prev) * np.asarray(c_prev)) / tau
        + faces.divergence(flux, n)
        + faces.divergence(np.asarray(penalty_weight) * faces.jump(mu_stab, mu_ghost), n)
    )
    scale = np.asarray(phi_new) * c_new * area / tau
    return res, scale


def clamp_deltas(delta, c_prev, fraction: float = 0.9):
    """Per-cell delta_i = min(delta, fraction * c_i^n / c^n); returns (nc, M) and a clamp mask."""
    c_prev = np.asarray(c_prev, float)
    ratio = fraction * c_prev / c_prev.sum(axis=1, keepdims=True)
    d = np.broadcast_to(np.asarray(delta, float), ratio.shape)
    out = np.minimum(d, ratio)
    return out, out < d


def check_bounds(c_total, c_comp, c_total_prev, beta_star, delta_1, delta_2, rtol=1e-10):
    """Bound envelope on the total and positivity/ordering of the components."""
    ct = np.asarray(c_total, float)
    cp = np.asarray(c_total_prev, float)
    room = 1.0 - beta_star * cp
    lo = (1.0 - delta_1 * room) * cp
    hi = (1.0 + delta_2 * room) * cp
    slack = rtol * cp
    bad = np.flatnonzero((ct < lo - slack) | (ct > hi + slack))
    if bad.size:
        k = bad[0]
        raise BoundViolation(
            f"total density {ct[k]:.10g} outside [{lo[k]:.10g}, {hi[k]:.10g}] in cell {k}", int(k)
        )
    comp = np.asarray(c_comp, float)
    bad = np.flatnonzero(~(comp > 0).all(axis=1))
    if bad.size:
        raise BoundViolation(f"non-positive component density in cell {bad[0]}", int(bad[0]))
    bad = np.flatnonzero((comp > ct[:, None] * (1 + rtol)).any(axis=1))
    if bad.size:
        raise BoundViolation(f"component density exceeds total in cell {bad[0]}", int(bad[0]))
    bad = np.flatnonzero(~(beta_star * ct < 1.0))
    if bad.size:
        raise BoundViolation(f"beta* c >= 1 in cell {bad[0]}", int(bad[0]))
