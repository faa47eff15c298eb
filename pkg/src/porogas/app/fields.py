"""Permeability generators and ASCII raster ingestion."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from ..mesh import SimplicialMesh
from ..msd_flow import MILLIDARCY


class RasterError(ValueError):
    pass


def value_noise(points, extent, seed: int, scale: float = 25.0, octaves: int = 4,
                persistence: float = 0.5) -> np.ndarray:
    """Seeded lattice value noise in [0, 1] with smoothstep-bilinear interpolation."""
    rng = np.random.default_rng(seed)
    pts = np.asarray(points, float)
    total = np.zeros(len(pts))
    amp, norm = 1.0, 0.0
    for o in range(octaves):
        spacing = scale / 2**o
        nx = int(np.ceil(extent[0] / spacing)) + 2
        ny = int(np.ceil(extent[1] / spacing)) + 2
        lattice = rng.random((ny, nx))
        gx = pts[:, 0] / spacing
        gy = pts[:, 1] / spacing
        i0 = np.clip(np.floor(gx).astype(int), 0, nx - 2)
        j0 = np.clip(np.floor(gy).astype(int), 0, ny - 2)
        tx = gx - i0
        ty = gy - j0
        sx = tx * tx * (3 - 2 * tx)
        sy = ty * ty * (3 - 2 * ty)
        v00 = lattice[j0, i0]
        v10 = lattice[j0, i0 + 1]
        v01 = lattice[j0 + 1, i0]
        v11 = lattice[j0 + 1, i0 + 1]
        total += amp * ((v00 * (1 - sx) + v10 * sx) * (1 - sy) + (v01 * (1 - sx) + v11 * sx) * sy)
        norm += amp
        amp *= persistence
    field = total / norm
    lo, hi = field.min(), field.max()
    return (field - lo) / (hi - lo) if hi > lo else np.zeros_like(field)


def gen_permeability(spec: dict, mesh: SimplicialMesh, seed: int = 0) -> np.ndarray:
    """Per-cell permeability in m^2 from a permeability table (values in md)."""
    kind = spec["kind"]
    x = mesh.centroids
    if kind == "uniform":
        md = np.full(mesh.n_cells, float(spec["value_md"]))
    elif kind == "channels":
        md = np.full(mesh.n_cells, float(spec.get("background_md", 1.0)))
        strips = spec.get("strips", [(0.0, 80.0, 65.0, 70.0), (0.0, 80.0, 35.0, 40.0)])
        for x0, x1, y0, y1 in strips:
            inside = (x[:, 0] >= x0) & (x[:, 0] <= x1) & (x[:, 1] >= y0) & (x[:, 1] <= y1)
            md[inside] = float(spec.get("channel_md", 200.0))
    elif kind == "noise":
        v = value_noise(x, mesh.extent, seed, spec.get("scale", 25.0), spec.get("octaves", 4),
                        spec.get("persistence", 0.5))
        lo, hi = np.log(spec["min_md"]), np.log(spec["max_md"])
        md = np.exp(lo + v * (hi - lo))
    elif kind == "raster":
        md = read_raster_field(spec["path"], mesh) * float(spec.get("scale_md", 1.0))
        if np.any(md <= 0):
            raise RasterError(f"{spec['path']}: permeability values must be positive")
    else:
        raise ValueError(f"unknown permeability kind {kind!r}")
    return md * MILLIDARCY


def parse_raster(text: str, source: str = "<raster>") -> np.ndarray:
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise RasterError(f"{source}: empty file")
    head = lines[0].split()
    try:
        rows, cols = (int(v) for v in head)
    except ValueError:
        raise RasterError(f"{source}: malformed header {lines[0]!r}, expected 'rows cols'") from None
    if rows < 1 or cols < 1:
        raise RasterError(f"{source}: header dimensions must be positive")
    values = []
    for ln in lines[1:]:
        values.extend(ln.split())
    if len(values) != rows * cols:
        raise RasterError(f"{source}: expected {rows * cols} values, found {len(values)}")
    out = np.empty(rows * cols)
    for k, tok in enumerate(values):
        try:
            out[k] = float(tok)
        except ValueError:
            raise RasterError(
                f"{source}: non-numeric entry {tok!r} at row {k // cols}, column {k % cols}"
            ) from None
    return out.reshape(rows, cols)


def sample_raster(grid: np.ndarray, mesh: SimplicialMesh) -> np.ndarray:
    """Nearest pixel centre for each cell centroid; row 0 lies along y = 0."""
    rows, cols = grid.shape
    x = mesh.centroids
    lo = mesh.vertices.min(axis=0)
    Lx, Ly = mesh.extent
    ci = np.clip(np.floor((x[:, 0] - lo[0]) / Lx * cols).astype(int), 0, cols - 1)
    ri = np.clip(np.floor((x[:, 1] - lo[1]) / Ly * rows).astype(int), 0, rows - 1)
    return grid[ri, ci]


def read_raster_field(path, mesh: SimplicialMesh) -> np.ndarray:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise RasterError(f"cannot read {path}: {exc}") from exc
    return sample_raster(parse_raster(text, str(path)), mesh)


def write_raster(grid, path) -> None:
    grid = np.atleast_2d(np.asarray(grid, float))
    lines = [f"{grid.shape[0]} {grid.shape[1]}"]
    lines += [" ".join(format(v, ".17g") for v in row) for row in grid]
    Path(path).write_text("\n".join(lines) + "\n")


def cells_to_grid(values, nx: int, ny: int) -> np.ndarray:
    """Average the two triangles of each structured square into an ny-by-nx grid."""
    v = np.asarray(values, float).reshape(ny, nx, 2)
    return v.mean(axis=2)
