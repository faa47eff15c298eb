"""Symmetric interior-penalty DG elasticity with Biot pressure coupling.

Displacements are discontinuous P1 vectors: dof 6K + 2a + d is component d of
local vertex a in cell K. The boundary is traction free; the three rigid-body
modes are removed with Lagrange multipliers (zero mean displacement and zero
mean rotation moment).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, eigsh, splu

from .mesh import SimplicialMesh


class CoercivityError(RuntimeError):
    pass


class PorosityError(RuntimeError):
    def __init__(self, message, cell=None):
        super().__init__(message)
        self.cell = cell


@dataclass(frozen=True)
class ElasticParams:
    lame_lambda: float  # gamma, Pa
    lame_mu: float  # eta (shear), Pa
    biot_alpha: float
    biot_modulus: float  # N, Pa
    penalty: float | None = None  # sigma_1

    def __post_init__(self):
        if not (self.lame_lambda > 0 and self.lame_mu > 0 and self.biot_modulus > 0):
            raise ValueError("Lame parameters and Biot modulus must be positive")
        if not 0 < self.biot_alpha <= 1:
            raise ValueError("Biot constant must lie in (0, 1]")
        if self.penalty is not None and not self.penalty > 0:
            raise ValueError("DG penalty must be positive")

    @property
    def sigma1(self) -> float:
        if self.penalty is not None:
            return float(self.penalty)
        return 10.0 * (self.lame_lambda + 2.0 * self.lame_mu)


def _p1_gradients(mesh: SimplicialMesh):
    """Constant gradients of the barycentric coordinates, (nc, 3, 2)."""
    p = mesh.vertices[mesh.cells]
    area2 = 2.0 * mesh.cell_area
    g = np.empty((mesh.n_cells, 3, 2))
    for a in range(3):
        b, c = (a + 1) % 3, (a + 2) % 3
        g[:, a, 0] = (p[:, b, 1] - p[:, c, 1]) / area2
        g[:, a, 1] = (p[:, c, 0] - p[:, b, 0]) / area2
    return g


def strain_matrices(mesh: SimplicialMesh) -> np.ndarray:
    """Voigt strain (exx, eyy, 2exy) from local dofs, (nc, 3, 6)."""
    g = _p1_gradients(mesh)
    B = np.zeros((mesh.n_cells, 3, 6))
    for a in range(3):
        B[:, 0, 2 * a] = g[:, a, 0]
        B[:, 1, 2 * a + 1] = g[:, a, 1]
        B[:, 2, 2 * a] = g[:, a, 1]
        B[:, 2, 2 * a + 1] = g[:, a, 0]
    return B


def elasticity_tensor(params: ElasticParams) -> np.ndarray:
    lam, mu = params.lame_lambda, params.lame_mu
    return np.array([[lam + 2 * mu, lam, 0.0], [lam, lam + 2 * mu, 0.0], [0.0, 0.0, mu]])


@dataclass(eq=False)
class ElasticOperators:
    mesh: SimplicialMesh
    params: ElasticParams
    stiffness: sp.csr_matrix  # A, (ndof, ndof)
    coupling: sp.csr_matrix  # B, (nc, ndof); A w = B^T p
    constraints: sp.csr_matrix  # C, (3, ndof)
    _lu: object = field(default=None, repr=False)

    @property
    def n_dof(self) -> int:
        return self.stiffness.shape[0]

    def factorize(self):
        if self._lu is None:
            A, C = self.stiffness, self.constraints
            K = sp.bmat([[A, C.T], [C, None]]).tocsc()
            self._lu = splu(K)
        return self._lu

    def solve_load(self, load) -> np.ndarray:
        """Constrained solve of A w = load."""
        lu = self.factorize()
        n = self.n_dof
        rhs = np.concatenate([np.asarray(load, float), np.zeros(3)])
        x = lu.solve(rhs)
        w = x[:n]
        res = self.stiffness @ w + self.constraints.T @ x[n:] - rhs[:n]
        scale = max(np.abs(rhs).max(), np.abs(self.stiffness @ w).max(), 1e-300)
        if not np.all(np.isfinite(w)) or np.abs(res).max() > 1e-10 * scale:
            raise CoercivityError("constrained elasticity solve did not reach tolerance")
        return w

    def elastic_energy(self, w) -> float:
        w = np.asarray(w, float)
        return 0.5 * float(w @ (self.stiffness @ w))


def _face_traces(mesh: SimplicialMesh, faces):
    """Local vertex slots of the two face endpoints in each adjacent cell."""
    fv = mesh.face_vertices[faces]
    out = []
    for side in range(2):
        cells = mesh.face_cells[faces, side]
        ok = cells >= 0
        loc = np.zeros((faces.size, 2), dtype=np.int64)
        cv = mesh.cells[np.maximum(cells, 0)]
        for end in range(2):
            loc[:, end] = np.argmax(cv == fv[:, end, None], axis=1)
        out.append((cells, loc, ok))
    return out


def assemble_dg_elasticity(mesh: SimplicialMesh, params: ElasticParams,
                           check_coercivity: bool | None = None) -> ElasticOperators:
    nc = mesh.n_cells
    ndof = 6 * nc
    Cm = elasticity_tensor(params)
    Bm = strain_matrices(mesh)
    area = mesh.cell_area
    alpha = params.biot_alpha
    sig1 = params.sigma1

    Kloc = np.einsum("nij,jk,nkl->nil", Bm.transpose(0, 2, 1), Cm, Bm) * area[:, None, None]
    dofs = 6 * np.arange(nc)[:, None] + np.arange(6)[None, :]
    rows = [np.repeat(dofs, 6, axis=1).ravel()]
    cols = [np.tile(dofs, (1, 6)).ravel()]
    vals = [Kloc.ravel()]

    div = Bm[:, 0, :] + Bm[:, 1, :]
    b_rows = [np.repeat(np.arange(nc), 6)]
    b_cols = [dofs.ravel()]
    b_vals = [(alpha * area[:, None] * div).ravel()]

    faces = mesh.interior
    nfi = faces.size
    if nfi:
        (cp, locp, _), (cm, locm, _) = _face_traces(mesh, faces)
        n = mesh.face_normal[faces]
        h = mesh.face_length[faces]
        zdofs = np.concatenate(
            [6 * cp[:, None] + np.arange(6), 6 * cm[:, None] + np.arange(6)], axis=1
        )  # (nfi, 12)
        # jump operators at the two face endpoints, (nfi, 2, 12) each
        J = np.zeros((nfi, 2, 2, 12))
        for end in range(2):
            for d in range(2):
                J[np.arange(nfi), end, d, 2 * locp[:, end] + d] = 1.0
                J[np.arange(nfi), end, d, 6 + 2 * locm[:, end] + d] = -1.0
        JP, JQ = J[:, 0], J[:, 1]
        # average traction {sigma n} as a map from the 12 face dofs
        Nmat = np.zeros((nfi, 2, 3))
        Nmat[:, 0, 0] = n[:, 0]
        Nmat[:, 0, 2] = n[:, 1]
        Nmat[:, 1, 1] = n[:, 1]
        Nmat[:, 1, 2] = n[:, 0]
        Sp = np.einsum("fij,jk,fkl->fil", Nmat, Cm, Bm[cp])
        Sm = np.einsum("fij,jk,fkl->fil", Nmat, Cm, Bm[cm])
        T = 0.5 * np.concatenate([Sp, Sm], axis=2)  # (nfi, 2, 12)
        mean_jump = 0.5 * h[:, None, None] * (JP + JQ)  # integral of [v] over e
        G = np.einsum("fdi,fdj->fij", mean_jump, T)  # rows v, cols w
        jj = (
            2.0 * np.einsum("fdi,fdj->fij", JP, JP)
            + np.einsum("fdi,fdj->fij", JP, JQ)
            + np.einsum("fdi,fdj->fij", JQ, JP)
            + 2.0 * np.einsum("fdi,fdj->fij", JQ, JQ)
        ) / 6.0  # (1/h) * (h/6)(...)
        Floc = -(G + G.transpose(0, 2, 1)) + sig1 * jj
        rows.append(np.repeat(zdofs, 12, axis=1).ravel())
        cols.append(np.tile(zdofs, (1, 12)).ravel())
        vals.append(Floc.ravel())
        # pressure face term: -alpha {p} n . int_e [v]
        coup = -alpha * 0.5 * np.einsum("fd,fdi->fi", n, mean_jump)  # (nfi, 12)
        for side_cells in (cp, cm):
            b_rows.append(np.repeat(side_cells, 12))
            b_cols.append(zdofs.ravel())
            b_vals.append(coup.ravel())

    A = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(ndof, ndof)
    ).tocsr()
    A = (0.5 * (A + A.T)).tocsr()
    Bc = sp.coo_matrix(
        (np.concatenate(b_vals), (np.concatenate(b_rows), np.concatenate(b_cols))), shape=(nc, ndof)
    ).tocsr()
    C = rigid_constraints(mesh)
    ops = ElasticOperators(mesh, params, A, Bc, C)
    if check_coercivity is None:
        check_coercivity = ndof <= 20000
    if check_coercivity:
        lam = smallest_constrained_eigenvalue(ops)
        scale = abs(A.diagonal()).max()
        if lam <= 1e-10 * scale:
            raise CoercivityError(
                f"DG stiffness not coercive on the rigid-mode complement: "
                f"smallest eigenvalue estimate {lam:.3e} (diag scale {scale:.3e}); increase the penalty"
            )
    return ops


def rigid_constraints(mesh: SimplicialMesh) -> sp.csr_matrix:
    """Rows: integral of w_x, of w_y, and of (x w_y - y w_x), exact for P1 data."""
    nc = mesh.n_cells
    area = mesh.cell_area
    p = mesh.vertices[mesh.cells]
    C = np.zeros((3, nc, 6))
    for a in range(3):
        C[0, :, 2 * a] = area / 3.0
        C[1, :, 2 * a + 1] = area / 3.0
    # edge-midpoint rule; w(mid_ab) = (w_a + w_b)/2
    for a in range(3):
        b = (a + 1) % 3
        mid = 0.5 * (p[:, a] + p[:, b])
        wgt = area / 3.0 * 0.5
        for v in (a, b):
            C[2, :, 2 * v + 1] += wgt * mid[:, 0]
            C[2, :, 2 * v] -= wgt * mid[:, 1]
    return sp.csr_matrix(C.reshape(3, 6 * nc))


def rigid_modes(mesh: SimplicialMesh) -> np.ndarray:
    """Columns: x-translation, y-translation, rotation, evaluated at the dofs."""
    xy = mesh.vertices[mesh.cells].reshape(-1, 2)
    R = np.zeros((6 * mesh.n_cells, 3))
    R[0::2, 0] = 1.0
    R[1::2, 1] = 1.0
    R[0::2, 2] = -xy[:, 1]
    R[1::2, 2] = xy[:, 0]
    return R


def smallest_constrained_eigenvalue(ops: ElasticOperators) -> float:
    """Smallest eigenvalue of A on the complement of the rigid modes."""
    A = ops.stiffness
    R = rigid_modes(ops.mesh)
    Q, _ = np.linalg.qr(R)
    scale = abs(A.diagonal()).max()
    n = A.shape[0]
    if n <= 1500:
        P = np.eye(n) - Q @ Q.T
        Ad = P @ A.toarray() @ P + scale * (Q @ Q.T)
        return float(np.linalg.eigvalsh(0.5 * (Ad + Ad.T))[0])
    # Lanczos on the constrained inverse
    lu = ops.factorize()

    def inv(x):
        return lu.solve(np.concatenate([np.ravel(x), np.zeros(3)]))[:n]

    op = LinearOperator((n, n), matvec=inv, dtype=float)
    v0 = np.random.default_rng(0).standard_normal(n)
    # smallest |lambda| dominates; a sign change shows up as a negative value
    nu = eigsh(op, k=1, which="LM", v0=v0, tol=1e-8, return_eigenvectors=False)[0]
    return float(1.0 / nu)


def solve_displacement(p, ops: ElasticOperators) -> np.ndarray:
    """Displacement dofs balancing the Biot pressure load."""
    return ops.solve_load(ops.coupling.T @ np.asarray(p, float))


def update_pressure(c_prev, mu_new, f_prev) -> np.ndarray:
    return np.sum(np.asarray(c_prev) * np.asarray(mu_new), axis=-1) - np.asarray(f_prev)


def update_porosity(phi_prev, p_new, p_prev, w_new, w_prev, ops: ElasticOperators,
                    check: bool = True) -> np.ndarray:
    """phi^n + (p - p^n)/N + alpha * (cell divergence minus face correction) of the displacement increment."""
    dw = np.asarray(w_new, float) - np.asarray(w_prev, float)
    vol = ops.coupling @ dw / ops.mesh.cell_area
    phi = np.asarray(phi_prev) + (np.asarray(p_new) - np.asarray(p_prev)) / ops.params.biot_modulus + vol
    if check:
        bad = np.flatnonzero((phi <= 0) | (phi >= 1))
        if bad.size:
            raise PorosityError(f"porosity {phi[bad[0]]:.6g} left (0, 1) in cell {bad[0]}", int(bad[0]))
    return phi


def vertex_average(mesh: SimplicialMesh, w) -> np.ndarray:
    """Vertex-averaged displacement vectors for visualization."""
    w = np.asarray(w, float).reshape(mesh.n_cells, 3, 2)
    acc = np.zeros((mesh.n_vertices, 2))
    cnt = np.zeros(mesh.n_vertices)
    np.add.at(acc, mesh.cells.ravel(), w.reshape(-1, 2))
    np.add.at(cnt, mesh.cells.ravel(), 1.0)
    return acc / cnt[:, None]
