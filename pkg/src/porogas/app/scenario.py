"""Turn a validated ScenarioConfig into a Problem, controls and initial fields."""
from __future__ import annotations

import numpy as np

from ..geomech import ElasticParams, assemble_dg_elasticity
from ..mesh import SimplicialMesh, build_structured_triangulation
from ..msd_flow import FrictionParams
from ..stepper import BoundaryData, Problem, TimeStepControls
from ..thermo import ComponentSpec, MixtureSpec
from .config import ConfigError, ScenarioConfig
from .fields import gen_permeability


def mixture_of(cfg: ScenarioConfig) -> MixtureSpec:
    comps = tuple(
        ComponentSpec(c.name, c.Tc, c.Pc, c.omega, c.molar_weight, c.viscosity) for c in cfg.components
    )
    return MixtureSpec(comps, cfg.interaction, cfg.temperature)


def controls_of(cfg: ScenarioConfig) -> TimeStepControls:
    return TimeStepControls(**cfg.controls)


def initial_fields(cfg: ScenarioConfig, mesh: SimplicialMesh):
    x = mesh.centroids
    names = cfg.names
    c = np.tile([cfg.c_init[nm] for nm in names], (mesh.n_cells, 1)).astype(float)
    phi = np.full(mesh.n_cells, cfg.phi_init)
    for reg in cfg.regions:
        x0, x1, y0, y1 = reg.box
        inside = (x[:, 0] >= x0) & (x[:, 0] <= x1) & (x[:, 1] >= y0) & (x[:, 1] <= y1)
        for nm, val in reg.c.items():
            c[inside, names.index(nm)] = val
        if reg.phi is not None:
            phi[inside] = reg.phi
    return c, phi


def boundary_faces(mesh: SimplicialMesh, edge: str, span=None, tol=1e-9):
    mid = mesh.face_midpoints[mesh.boundary]
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    scale = tol * max(mesh.extent)
    if edge == "left":
        on, along = np.abs(mid[:, 0] - lo[0]) < scale, mid[:, 1]
    elif edge == "right":
        on, along = np.abs(mid[:, 0] - hi[0]) < scale, mid[:, 1]
    elif edge == "bottom":
        on, along = np.abs(mid[:, 1] - lo[1]) < scale, mid[:, 0]
    else:
        on, along = np.abs(mid[:, 1] - hi[1]) < scale, mid[:, 0]
    if span is not None:
        on &= (along >= span[0]) & (along <= span[1])
    return mesh.boundary[on]


def boundary_of(cfg: ScenarioConfig, mesh: SimplicialMesh):
    if cfg.boundary_mode == "closed":
        return None
    names = cfg.names
    faces, data = [], []
    seen = set()
    for ent in cfg.dirichlet:
        fs = boundary_faces(mesh, ent["edge"], ent["span"])
        row = np.full(len(names), np.nan)
        for nm, val in ent["c"].items():
            row[names.index(nm)] = val
        for f in fs:
            if f in seen:
                raise ConfigError(f"boundary.dirichlet: face {f} ({ent['edge']}) listed twice")
            seen.add(f)
            faces.append(f)
            data.append(row)
    if not faces:
        raise ConfigError("boundary.dirichlet: no boundary faces selected")
    order = np.argsort(faces)
    return BoundaryData(np.asarray(faces, dtype=np.int64)[order], np.asarray(data)[order])


def build_problem(cfg: ScenarioConfig, seed: int | None = None):
    """Problem, mesh-level permeability (m^2) and initial (c, phi)."""
    mesh = build_structured_triangulation(cfg.nx, cfg.ny, cfg.Lx, cfg.Ly)
    mix = mixture_of(cfg)
    eos = mix.eos()
    seed = cfg.seed if seed is None else seed
    perm = gen_permeability(cfg.permeability, mesh, seed)
    friction = FrictionParams(cfg.diffusivity, perm, [c.viscosity for c in cfg.components], cfg.phi_r)
    elastic = assemble_dg_elasticity(
        mesh, ElasticParams(cfg.lame_lambda, cfg.lame_mu, cfg.biot_alpha, cfg.biot_modulus, cfg.elastic_penalty)
    )
    problem = Problem(mesh, eos, cfg.names, friction, elastic, cfg.transport_penalty,
                      boundary_of(cfg, mesh), cfg.mass)
    c0, phi0 = initial_fields(cfg, mesh)
    return problem, perm, c0, phi0
