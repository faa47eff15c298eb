"""Report figures rendered next to the CSV time series."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "figure.constrained_layout.use": True,
}


def _save(fig, path):
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return Path(path)


def render_report(records, names, out_dir, stem: str = "timeseries") -> list[Path]:
    """Energy, density extrema, step size and mass drift panels as PNG files."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if not records:
        return []
    t = np.array([r.t for r in records])
    energy = np.array([r.energy for r in records])
    tau = np.array([r.tau for r in records])
    cmin = np.array([r.c_min for r in records])
    cmax = np.array([r.c_max for r in records])
    mass = np.array([r.masses for r in records])
    paths = []
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 3, figsize=(10, 3))
        axes[0].plot(t, energy, color="k")
        axes[0].set_xlabel("t [s]")
        axes[0].set_ylabel("discrete energy [J/m]")
        for i, nm in enumerate(names):
            line = axes[1].plot(t, cmin[:, i], label=f"min {nm}")[0]
            axes[1].plot(t, cmax[:, i], ls="--", color=line.get_color(), label=f"max {nm}")
        axes[1].set_xlabel("t [s]")
        axes[1].set_ylabel("molar density [mol/m$^3$]")
        axes[1].legend(fontsize=7)
        if len(t) > 1:
            axes[2].step(t[1:], tau[1:], where="post", color="C3")
        axes[2].set_xlabel("t [s]")
        axes[2].set_ylabel(r"$\tau$ [s]")
        paths.append(_save(fig, out_dir / f"{stem}_summary.png"))

        fig, ax = plt.subplots(figsize=(4.5, 3))
        ref = np.where(mass[0] != 0, mass[0], 1.0)
        for i, nm in enumerate(names):
            ax.plot(t, (mass[:, i] - mass[0, i]) / abs(ref[i]), label=nm)
        ax.set_xlabel("t [s]")
        ax.set_ylabel("relative mass change")
        ax.legend(fontsize=7)
        paths.append(_save(fig, out_dir / f"{stem}_mass.png"))
    return paths


def render_field(mesh, values, path, label: str = "") -> Path:
    """Flat-shaded map of a cell field."""
    import matplotlib.tri as mtri

    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.2, 3.6))
        tri = mtri.Triangulation(mesh.vertices[:, 0], mesh.vertices[:, 1], mesh.cells)
        pc = ax.tripcolor(tri, facecolors=np.asarray(values, float), cmap="viridis")
        ax.set_aspect("equal")
        ax.set_xlabel("x [m]")
        ax.set_ylabel("y [m]")
        ax.grid(False)
        fig.colorbar(pc, ax=ax, label=label)
        return _save(fig, path)
