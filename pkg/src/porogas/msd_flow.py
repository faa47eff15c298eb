"""Maxwell-Stefan-Darcy face velocities on the lowest-order Raviart-Thomas space.

One normal-flux unknown per flux-carrying face and component. The RT0 mass
matrix is diagonal (lumped) by default, so each component solve is a per-face
division; the consistent mass matrix is available for comparison.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .mesh import FaceSet, SimplicialMesh
from .thermo import kozeny_carman

MILLIDARCY = 9.869233e-16  # m^2


class VelocitySolveError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class FrictionParams:
    diffusivity: np.ndarray  # (M, M), off-diagonal binary coefficients
    permeability: np.ndarray  # (nc,) m^2
    viscosity: np.ndarray  # (M,) Pa s
    phi_r: float

    def __post_init__(self):
        D = np.atleast_2d(np.asarray(self.diffusivity, float))
        object.__setattr__(self, "diffusivity", D)
        object.__setattr__(self, "permeability", np.asarray(self.permeability, float))
        object.__setattr__(self, "viscosity", np.atleast_1d(np.asarray(self.viscosity, float)))
        m = self.viscosity.size
        if D.shape != (m, m):
            raise ValueError(f"diffusivity matrix must be {m}x{m}")
        off = ~np.eye(m, dtype=bool)
        if np.any(D[off] <= 0) or np.any(D != D.T):
            raise ValueError("binary diffusivities must be symmetric and positive")
        if np.any(self.permeability <= 0):
            raise ValueError("permeability must be positive in every cell")
        if np.any(self.viscosity <= 0):
            raise ValueError("viscosities must be positive")
        if not 0 < self.phi_r < 1:
            raise ValueError("reference porosity must lie in (0, 1)")


def mobility_coefficients(c_prev, phi, params: FrictionParams):
    """Fluid-solid coefficients d (nc, M) and friction weights w (nc, M, M)."""
    c_prev = np.asarray(c_prev, float)
    if np.any(c_prev <= 0):
        raise ValueError("molar densities must be positive")
    kappa = kozeny_carman(np.asarray(phi, float), params.phi_r)
    d = params.viscosity[None, :] / (kappa * params.permeability)[:, None]
    ct = c_prev.sum(axis=1)
    cc = c_prev[:, :, None] * c_prev[:, None, :]
    D = params.diffusivity.copy()
    np.fill_diagonal(D, np.inf)
    w = cc / ((ct**2)[:, None, None] * D[None, :, :])
    return d, w


def rt0_local_mass(mesh: SimplicialMesh) -> np.ndarray:
    """Unsigned local RT0 mass matrices (nc, 3, 3) for basis functions h_k/(2|K|)(x - p_k)."""
    p = mesh.vertices[mesh.cells]  # (nc, 3, 2)
    area = mesh.cell_area
    h = mesh.face_length[mesh.cell_faces]  # (nc, 3)
    mids = 0.5 * (p[:, [1, 2, 0]] + p[:, [2, 0, 1]])  # edge midpoints, exact for quadratics
    diff = mids[:, :, None, :] - p[:, None, :, :]  # (nc, q, k, 2)
    integrand = np.einsum("nqkd,nqld->nkl", diff, diff) * (area / 3.0)[:, None, None]
    scale = h / (2.0 * area[:, None])
    return integrand * scale[:, :, None] * scale[:, None, :]


class VelocitySolver:
    """Component-wise RT0 velocity solves over a FaceSet."""

    def __init__(self, mesh: SimplicialMesh, faces: FaceSet, mass: str = "lumped"):
        if mass not in ("lumped", "consistent"):
            raise ValueError(f"unknown mass option {mass!r}")
        self.mesh = mesh
        self.faces = faces
        self.mass = mass
        local = rt0_local_mass(mesh)
        nc = mesh.n_cells
        self.m_plus = local[faces.plus, faces.local_plus, faces.local_plus]
        bnd = faces.is_boundary
        self.m_minus = np.where(
            bnd, 0.0, local[np.maximum(faces.minus, 0), faces.local_minus, faces.local_minus]
        )
        if mass == "consistent":
            slot = -np.ones(mesh.n_faces, dtype=np.int64)
            slot[faces.faces] = np.arange(faces.size)
            # global RT0 orientation relative to each cell's outward normal
            gslot = slot[mesh.cell_faces]
            sgn = mesh.cell_face_sign
            rows, cols, vals, owner = [], [], [], []
            for a in range(3):
                for b in range(3):
                    ok = (gslot[:, a] >= 0) & (gslot[:, b] >= 0)
                    rows.append(gslot[ok, a])
                    cols.append(gslot[ok, b])
                    vals.append((sgn[:, a] * sgn[:, b] * local[:, a, b])[ok])
                    owner.append(np.flatnonzero(ok))
            self._rows = np.concatenate(rows)
            self._cols = np.concatenate(cols)
            self._vals = np.concatenate(vals)
            self._owner = np.concatenate(owner)
            self._unit = self.matrix(np.ones(nc))

    def lumped_weight(self, coef_cells) -> np.ndarray:
        coef = np.asarray(coef_cells, float)
        out = self.m_plus * coef[self.faces.plus]
        inner = ~self.faces.is_boundary
        out[inner] += self.m_minus[inner] * coef[self.faces.minus[inner]]
        return out

    def matrix(self, coef_cells):
        coef = np.asarray(coef_cells, float)
        if self.mass == "lumped":
            return sp.diags(self.lumped_weight(coef)).tocsr()
        n = self.faces.size
        A = sp.coo_matrix(
            (self._vals * coef[self._owner], (self._rows, self._cols)), shape=(n, n)
        )
        return A.tocsr()

    def apply(self, coef_cells, u) -> np.ndarray:
        if self.mass == "lumped":
            return self.lumped_weight(coef_cells) * u
        return self.matrix(coef_cells) @ u

    def norm_sq(self, du) -> float:
        """Unit-coefficient RT0 mass norm, summed over components."""
        du = np.atleast_2d(np.asarray(du, float).T).T
        if self.mass == "lumped":
            m = self.m_plus + self.m_minus
            return float(np.sum(m[:, None] * du**2))
        return float(np.sum(du * (self._unit @ du)))

    def solve_component_velocity(self, i, d, w, u, jump_i, c_up_i):
        """New u_i from mu_i jumps and the current velocities of the other components.

        ``u`` holds the Gauss-Seidel state (components j < i already updated).
        """
        m = d.shape[1]
        others = [j for j in range(m) if j != i]
        coef = d[:, i] + (w[:, i, others].sum(axis=1) if others else 0.0)
        rhs = jump_i * c_up_i * self.faces.length
        for j in others:
            rhs = rhs + self.apply(w[:, i, j], u[:, j])
        if self.mass == "lumped":
            diag = self.lumped_weight(coef)
            if np.any(diag <= 0):
                k = int(np.argmin(diag))
                raise VelocitySolveError(f"non-positive velocity coefficient at face {self.faces.faces[k]}")
            return rhs / diag
        A = self.matrix(coef)
        x = spsolve(A.tocsc(), rhs)
        res = np.abs(A @ x - rhs)
        scale = max(np.abs(rhs).max(), 1e-300)
        if not np.all(np.isfinite(x)) or res.max() > 1e-12 * scale:
            k = int(np.nanargmax(res))
            raise VelocitySolveError(f"velocity solve residual too large at face {self.faces.faces[k]}")
        return x

    def component_sweep(self, d, w, jumps, c_up, u_prev):
        """One ordered Gauss-Seidel pass i = 1..M; returns a new array."""
        u = np.array(u_prev, dtype=float, copy=True)
        for i in range(d.shape[1]):
            u[:, i] = self.solve_component_velocity(i, d, w, u, jumps[:, i], c_up[:, i])
        return u

    def converged_velocity(self, d, w, jumps, c_up, u0=None, tol=1e-14, max_sweeps=500):
        u = np.zeros_like(jumps) if u0 is None else np.array(u0, dtype=float)
        for _ in range(max_sweeps):
            new = self.component_sweep(d, w, jumps, c_up, u)
            change = np.abs(new - u).max()
            u = new
            if change <= tol * max(np.abs(u).max(), 1e-300):
                break
        return u


def dissipation(jumps, c_up, u, length) -> float:
    """sum_i sum_e [mu_i] c_i* u_i h_e; non-negative when flow runs down potential."""
    return float(np.sum(jumps * c_up * u * np.asarray(length)[:, None]))
