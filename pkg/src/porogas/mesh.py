"""Structured 2D triangulations with oriented faces.

Every face carries a fixed unit normal. For interior faces the normal points
from K+ (the lower cell index) to K-; boundary faces point outward from their
single cell. ``face_cells[:, 1] == -1`` marks a boundary face.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True, eq=False)
class SimplicialMesh:
    vertices: np.ndarray  # (nv, 2)
    cells: np.ndarray  # (nc, 3), counter-clockwise
    face_vertices: np.ndarray  # (nf, 2)
    face_cells: np.ndarray  # (nf, 2), second entry -1 on the boundary
    face_normal: np.ndarray  # (nf, 2)
    face_length: np.ndarray  # (nf,)
    cell_area: np.ndarray  # (nc,)
    cell_faces: np.ndarray  # (nc, 3), local face k is opposite local vertex k
    cell_face_sign: np.ndarray  # (nc, 3), +1 where the face normal leaves the cell
    extent: tuple[float, float] = (1.0, 1.0)
    interior: np.ndarray = field(init=False)
    boundary: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "interior", np.flatnonzero(self.face_cells[:, 1] >= 0))
        object.__setattr__(self, "boundary", np.flatnonzero(self.face_cells[:, 1] < 0))

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def n_faces(self) -> int:
        return self.face_vertices.shape[0]

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.cells].mean(axis=1)

    @property
    def face_midpoints(self) -> np.ndarray:
        return self.vertices[self.face_vertices].mean(axis=1)

    def check(self, atol: float = 1e-12) -> None:
        """Raise ValueError if any structural invariant fails."""
        if np.any(self.cell_area <= 0) or np.any(self.face_length <= 0):
            raise ValueError("non-positive cell area or face length")
        fc = self.face_cells
        inner = fc[self.interior]
        if np.any(inner[:, 0] == inner[:, 1]) or np.any(inner[:, 0] > inner[:, 1]):
            raise ValueError("interior face must join two distinct cells with K+ < K-")
        closure = np.einsum(
            "ck,ck,ckd->cd",
            self.cell_face_sign,
            self.face_length[self.cell_faces],
            self.face_normal[self.cell_faces],
        )
        bad = np.flatnonzero(np.abs(closure).max(axis=1) > atol * max(self.extent))
        if bad.size:
            raise ValueError(f"cell {bad[0]} is not a closed polygon")


def build_structured_triangulation(nx: int, ny: int, Lx: float, Ly: float) -> SimplicialMesh:
    """Split an nx-by-ny grid of rectangles along the lower-left/upper-right diagonal."""
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise ValueError(f"cell counts must be positive integers, got nx={nx}, ny={ny}")
    if not (Lx > 0 and Ly > 0):
        raise ValueError(f"domain lengths must be positive, got Lx={Lx}, Ly={Ly}")
    nx, ny = int(nx), int(ny)
    xs = np.linspace(0.0, Lx, nx + 1)
    ys = np.linspace(0.0, Ly, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (nx + 1) + i

    cells = []
    for j in range(ny):
        for i in range(nx):
            a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            cells.append((a, b, c))
            cells.append((a, c, d))
    cells = np.asarray(cells, dtype=np.int64)
    return mesh_from_cells(vertices, cells, extent=(float(Lx), float(Ly)))


def mesh_from_cells(vertices: np.ndarray, cells: np.ndarray, extent=None) -> SimplicialMesh:
    vertices = np.asarray(vertices, dtype=float)
    cells = np.asarray(cells, dtype=np.int64).copy()
    p = vertices[cells]
    cross = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - (
        p[:, 1, 1] - p[:, 0, 1]
    ) * (p[:, 2, 0] - p[:, 0, 0])
    flip = cross < 0
    cells[flip] = cells[flip][:, [0, 2, 1]]
    area = 0.5 * np.abs(cross)

    # local face k is opposite local vertex k
    local = np.array([[1, 2], [2, 0], [0, 1]])
    edges = {}
    for k, cell in enumerate(cells):
        for loc in range(3):
            a, b = cell[local[loc]]
            edges.setdefault((min(a, b), max(a, b)), []).append((k, loc))
    keys = sorted(edges)
    nf = len(keys)
    face_vertices = np.asarray(keys, dtype=np.int64).reshape(nf, 2)
    face_cells = -np.ones((nf, 2), dtype=np.int64)
    cell_faces = np.zeros((len(cells), 3), dtype=np.int64)
    for f, key in enumerate(keys):
        owners = sorted(edges[key])
        if len(owners) > 2:
            raise ValueError(f"edge {key} shared by more than two cells")
        for slot, (k, loc) in enumerate(owners):
            face_cells[f, slot] = k
            cell_faces[k, loc] = f

    t = vertices[face_vertices[:, 1]] - vertices[face_vertices[:, 0]]
    length = np.hypot(t[:, 0], t[:, 1])
    normal = np.column_stack([t[:, 1], -t[:, 0]]) / length[:, None]
    centroids = p.mean(axis=1)
    mid = vertices[face_vertices].mean(axis=1)
    # orient away from K+
    outward = np.einsum("fd,fd->f", normal, mid - centroids[face_cells[:, 0]])
    normal[outward < 0] *= -1.0

    sign = np.where(face_cells[cell_faces, 0] == np.arange(len(cells))[:, None], 1.0, -1.0)
    if extent is None:
        extent = tuple(float(v) for v in vertices.max(axis=0) - vertices.min(axis=0))
    return SimplicialMesh(
        vertices=vertices,
        cells=cells,
        face_vertices=face_vertices,
        face_cells=face_cells,
        face_normal=normal,
        face_length=length,
        cell_area=area,
        cell_faces=cell_faces,
        cell_face_sign=sign,
        extent=extent,
    )


def _require_interior(mesh: SimplicialMesh, faces) -> np.ndarray:
    faces = np.asarray(faces, dtype=np.int64)
    if np.any(mesh.face_cells[faces, 1] < 0):
        raise ValueError("two-sided trace requested on a boundary face")
    return faces


def jump(mesh: SimplicialMesh, cell_values, faces=None) -> np.ndarray:
    """psi(K+) - psi(K-) on interior faces (all interior faces by default)."""
    faces = mesh.interior if faces is None else _require_interior(mesh, faces)
    v = np.asarray(cell_values)
    fc = mesh.face_cells[faces]
    return v[fc[:, 0]] - v[fc[:, 1]]


def average(mesh: SimplicialMesh, cell_values, faces=None) -> np.ndarray:
    faces = mesh.interior if faces is None else _require_interior(mesh, faces)
    v = np.asarray(cell_values)
    fc = mesh.face_cells[faces]
    return 0.5 * (v[fc[:, 0]] + v[fc[:, 1]])


def upwind_trace(mesh: SimplicialMesh, cell_values, normal_flux, faces=None) -> np.ndarray:
    """K+ value where the normal flux is >= 0, K- value otherwise."""
    faces = mesh.interior if faces is None else _require_interior(mesh, faces)
    v = np.asarray(cell_values)
    fc = mesh.face_cells[faces]
    return np.where(np.asarray(normal_flux) >= 0.0, v[fc[:, 0]], v[fc[:, 1]])


def cell_divergence(mesh: SimplicialMesh, face_values) -> np.ndarray:
    """Sum over faces of sign * value, per cell (no length weighting)."""
    out = np.zeros(mesh.n_cells)
    fc = mesh.face_cells
    np.add.at(out, fc[:, 0], face_values)
    inner = fc[:, 1] >= 0
    np.add.at(out, fc[inner, 1], -np.asarray(face_values)[inner])
    return out


@dataclass(frozen=True, eq=False)
class FaceSet:
    """Faces that carry flux: all interior faces, then any open boundary faces.

    ``minus[k] == -1`` marks a boundary face whose outer state lives in a ghost
    array at position ``ghost[k]``.
    """

    faces: np.ndarray
    plus: np.ndarray
    minus: np.ndarray
    ghost: np.ndarray
    length: np.ndarray
    local_plus: np.ndarray
    local_minus: np.ndarray

    @property
    def size(self) -> int:
        return self.faces.size

    @property
    def is_boundary(self) -> np.ndarray:
        return self.minus < 0

    def pair(self, cell_values, ghost_values=None):
        v = np.asarray(cell_values)
        plus = v[self.plus]
        minus = v[np.maximum(self.minus, 0)].copy()
        b = self.is_boundary
        if b.any():
            if ghost_values is None:
                raise ValueError("ghost values required for open boundary faces")
            minus[b] = np.asarray(ghost_values)[self.ghost[b]]
        return plus, minus

    def jump(self, cell_values, ghost_values=None):
        p, m = self.pair(cell_values, ghost_values)
        return p - m

    def upwind(self, cell_values, normal_flux, ghost_values=None):
        p, m = self.pair(cell_values, ghost_values)
        flux = np.asarray(normal_flux)
        if p.ndim > flux.ndim:
            flux = flux[..., None]
        return np.where(flux >= 0.0, p, m)

    def divergence(self, face_values, n_cells: int) -> np.ndarray:
        """Per cell: sum of sign * value (outward from plus, inward to minus)."""
        fv = np.asarray(face_values, dtype=float)
        out = np.zeros((n_cells,) + fv.shape[1:])
        np.add.at(out, self.plus, fv)
        inner = ~self.is_boundary
        np.add.at(out, self.minus[inner], -fv[inner])
        return out


def _local_index(mesh: SimplicialMesh, cells, faces):
    loc = np.zeros(len(faces), dtype=np.int64)
    ok = cells >= 0
    cf = mesh.cell_faces[cells[ok]]
    loc[ok] = np.argmax(cf == faces[ok, None], axis=1)
    return loc


def build_faceset(mesh: SimplicialMesh, open_boundary=None) -> FaceSet:
    inner = mesh.interior
    bnd = np.asarray([] if open_boundary is None else open_boundary, dtype=np.int64)
    if bnd.size and np.any(mesh.face_cells[bnd, 1] >= 0):
        raise ValueError("open boundary list contains interior faces")
    faces = np.concatenate([inner, bnd])
    plus = mesh.face_cells[faces, 0]
    minus = np.concatenate([mesh.face_cells[inner, 1], -np.ones(bnd.size, dtype=np.int64)])
    ghost = np.concatenate([-np.ones(inner.size, dtype=np.int64), np.arange(bnd.size)])
    return FaceSet(
        faces=faces,
        plus=plus,
        minus=minus,
        ghost=ghost,
        length=mesh.face_length[faces],
        local_plus=_local_index(mesh, plus, faces),
        local_minus=_local_index(mesh, minus, faces),
    )
