"""Scenario configuration: TOML ingestion, defaults and validation.

See README.md for the full grammar. Every violation is collected and reported
together, each under its dotted field path.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

BAR = 1e5


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems) if not isinstance(problems, str) else [problems]
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.problems))


@dataclass
class ComponentConfig:
    name: str
    Tc: float
    Pc: float  # Pa
    omega: float
    molar_weight: float
    viscosity: float


@dataclass
class Region:
    box: tuple  # (x0, x1, y0, y1)
    c: dict
    phi: float | None = None


@dataclass
class ScenarioConfig:
    nx: int
    ny: int
    Lx: float
    Ly: float
    components: list
    interaction: np.ndarray
    temperature: float
    c_init: dict
    phi_init: float
    regions: list
    permeability: dict
    lame_lambda: float
    lame_mu: float
    biot_alpha: float
    biot_modulus: float
    elastic_penalty: float | None
    phi_r: float
    diffusivity: np.ndarray
    transport_penalty: float
    mass: str
    controls: dict
    boundary_mode: str = "closed"
    dirichlet: list = field(default_factory=list)
    t_end: float | None = None
    max_steps: int | None = None
    vtk_every: int = 0
    seed: int = 0
    source: str | None = None

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.components]


EDGES = ("left", "right", "bottom", "top")

CONTROL_KEYS = {
    "delta": None,
    "delta_1": float,
    "delta_2": float,
    "delta_i1": float,
    "delta_i2": float,
    "epsilon": float,
    "tau_max": float,
    "tol_x_rel": float,
    "tol_x_abs": float,
    "max_iterations": int,
    "upwind_update_iterations": int,
    "max_upwind_flips": int,
    "theta_safety": float,
    "theta_min": float,
    "delta_clamp": float,
    "retry_halving": bool,
}


def parse_toml(text: str, source: str = "<string>") -> dict:
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: parse error: {exc}") from exc


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    cfg = config_from_dict(parse_toml(text, str(path)), base_dir=path.parent)
    cfg.source = str(path)
    return cfg


def load_field_spec(path):
    """Mesh dimensions, permeability table and seed from a gen-perm spec file.

    The file uses the [mesh], [permeability] and optional [run] seed entries of
    the scenario grammar; a full scenario file is also accepted.
    """
    path = Path(path)
    try:
        doc = parse_toml(path.read_text(), str(path))
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    r = _Reader()
    mesh = doc.get("mesh", {})
    nx, ny = (r.get(mesh, k, "mesh", int, check=lambda v: v >= 1, msg="must be >= 1") for k in ("nx", "ny"))
    Lx, Ly = (r.get(mesh, k, "mesh", float, check=_positive, msg="must be positive") for k in ("Lx", "Ly"))
    spec = _permeability(r, doc.get("permeability", {}), path.parent)
    seed = r.get(doc.get("run", {}), "seed", "run", int, default=0)
    if r.problems:
        raise ConfigError(r.problems)
    return (nx, ny, Lx, Ly), spec, seed


class _Reader:
    def __init__(self):
        self.problems = []

    def get(self, table, key, path, kind=float, default=..., check=None, msg=None):
        full = f"{path}.{key}" if path else key
        if not isinstance(table, dict) or key not in table:
            if default is ...:
                self.problems.append(f"{full}: required")
                return None
            return default
        raw = table[key]
        try:
            if kind is int:
                if isinstance(raw, bool) or not float(raw).is_integer():
                    raise ValueError
                val = int(raw)
            elif kind is float:
                if isinstance(raw, bool):
                    raise ValueError
                val = float(raw)
            elif kind is bool:
                if not isinstance(raw, bool):
                    raise ValueError
                val = raw
            elif kind is str:
                if not isinstance(raw, str):
                    raise ValueError
                val = raw
            else:
                val = raw
        except (TypeError, ValueError):
            self.problems.append(f"{full}: expected {getattr(kind, '__name__', kind)}, got {raw!r}")
            return None
        if check is not None and not check(val):
            self.problems.append(f"{full}: {msg or 'invalid value'} (got {raw!r})")
            return None
        return val


def _positive(v):
    return v > 0


def _unit(v):
    return 0 < v < 1


def _matrix(reader, raw, m, path, diag_ok=True):
    try:
        a = np.asarray(raw, dtype=float)
    except (TypeError, ValueError):
        reader.problems.append(f"{path}: expected a {m}x{m} numeric matrix")
        return None
    if a.shape != (m, m):
        reader.problems.append(f"{path}: expected shape {m}x{m}, got {a.shape}")
        return None
    if not np.array_equal(a, a.T):
        reader.problems.append(f"{path}: must be symmetric")
        return None
    return a


def config_from_dict(doc: dict, base_dir=None) -> ScenarioConfig:
    r = _Reader()
    mesh = doc.get("mesh", {})
    nx = r.get(mesh, "nx", "mesh", int, check=lambda v: v >= 1, msg="must be >= 1")
    ny = r.get(mesh, "ny", "mesh", int, check=lambda v: v >= 1, msg="must be >= 1")
    Lx = r.get(mesh, "Lx", "mesh", float, check=_positive, msg="must be positive")
    Ly = r.get(mesh, "Ly", "mesh", float, check=_positive, msg="must be positive")

    comps = []
    raw_comps = doc.get("components")
    if not isinstance(raw_comps, list) or not raw_comps:
        r.problems.append("components: at least one [[components]] table required")
        raw_comps = []
    for k, tab in enumerate(raw_comps):
        p = f"components[{k}]"
        name = r.get(tab, "name", p, str)
        Tc = r.get(tab, "Tc", p, float, check=_positive, msg="must be positive")
        if isinstance(tab, dict) and "Pc_bar" in tab:
            Pc = r.get(tab, "Pc_bar", p, float, check=_positive, msg="must be positive")
            Pc = None if Pc is None else Pc * BAR
        else:
            Pc = r.get(tab, "Pc", p, float, check=_positive, msg="must be positive")
        omega = r.get(tab, "omega", p, float)
        mw = r.get(tab, "molar_weight", p, float, default=0.0, check=lambda v: v >= 0, msg="must be >= 0")
        visc = r.get(tab, "viscosity", p, float, check=_positive, msg="must be positive")
        comps.append(ComponentConfig(name, Tc, Pc, omega, mw, visc))
    names = [c.name for c in comps]
    if len(set(names)) != len(names):
        r.problems.append("components: names must be unique")
    m = len(comps)

    mix = doc.get("mixture", {})
    T = r.get(mix, "temperature", "mixture", float, check=_positive, msg="must be positive")
    inter = np.zeros((m, m))
    if isinstance(mix, dict) and "interaction" in mix and m:
        a = _matrix(r, mix["interaction"], m, "mixture.interaction")
        if a is not None:
            if np.any(np.diag(a) != 0):
                r.problems.append("mixture.interaction: diagonal must be zero")
            inter = a

    init = doc.get("initial", {})
    phi_init = r.get(init, "phi", "initial", float, check=_unit, msg="must lie in (0, 1)")
    c_init = _densities(r, init.get("c") if isinstance(init, dict) else None, names, "initial.c", True)
    regions = []
    for k, reg in enumerate(init.get("regions", []) if isinstance(init, dict) else []):
        p = f"initial.regions[{k}]"
        box = reg.get("box") if isinstance(reg, dict) else None
        if not (isinstance(box, list) and len(box) == 4 and all(isinstance(v, (int, float)) for v in box)):
            r.problems.append(f"{p}.box: expected [x0, x1, y0, y1]")
            continue
        if not (box[0] < box[1] and box[2] < box[3]):
            r.problems.append(f"{p}.box: empty box")
        cc = _densities(r, reg.get("c"), names, f"{p}.c", False)
        phi = r.get(reg, "phi", p, float, default=None, check=_unit, msg="must lie in (0, 1)")
        regions.append(Region(tuple(float(v) for v in box), cc or {}, phi))

    perm = _permeability(r, doc.get("permeability", {}), base_dir)

    el = doc.get("elastic", {})
    lam = r.get(el, "lame_lambda", "elastic", float, check=_positive, msg="must be positive")
    mu = r.get(el, "lame_mu", "elastic", float, check=_positive, msg="must be positive")
    alpha = r.get(el, "biot_alpha", "elastic", float, default=1.0,
                  check=lambda v: 0 < v <= 1, msg="must lie in (0, 1]")
    N = r.get(el, "biot_modulus", "elastic", float, check=_positive, msg="must be positive")
    pen1 = r.get(el, "penalty", "elastic", float, default=None, check=_positive, msg="must be positive")

    fl = doc.get("flow", {})
    phi_r = r.get(fl, "phi_r", "flow", float, check=_unit, msg="must lie in (0, 1)")
    sigma = r.get(fl, "penalty", "flow", float, check=_positive, msg="must be positive")
    mass = r.get(fl, "mass", "flow", str, default="lumped",
                 check=lambda v: v in ("lumped", "consistent"), msg="must be 'lumped' or 'consistent'")
    D = None
    if isinstance(fl, dict) and "diffusivity" in fl and m:
        D = _matrix(r, fl["diffusivity"], m, "flow.diffusivity")
        if D is not None and m > 1 and np.any(D[~np.eye(m, dtype=bool)] <= 0):
            r.problems.append("flow.diffusivity: off-diagonal entries must be positive")
    elif m > 1:
        r.problems.append("flow.diffusivity: required for more than one component")
    if D is None:
        D = np.ones((m, m))

    controls = _controls(r, doc.get("controls", {}))
    mode, dirichlet = _boundary(r, doc.get("boundary", {}), names)

    run = doc.get("run", {})
    t_end = r.get(run, "t_end", "run", float, default=None, check=_positive, msg="must be positive")
    max_steps = r.get(run, "max_steps", "run", int, default=None, check=lambda v: v >= 0, msg="must be >= 0")
    vtk_every = r.get(run, "vtk_every", "run", int, default=0, check=lambda v: v >= 0, msg="must be >= 0")
    seed = r.get(run, "seed", "run", int, default=0)
    if t_end is None and max_steps is None and not r.problems:
        r.problems.append("run: one of t_end or max_steps is required")

    known = {"mesh", "components", "mixture", "initial", "permeability", "elastic", "flow", "controls",
             "boundary", "run"}
    for key in doc:
        if key not in known:
            r.problems.append(f"{key}: unknown section")
    if r.problems:
        raise ConfigError(r.problems)
    return ScenarioConfig(
        nx=nx, ny=ny, Lx=Lx, Ly=Ly, components=comps, interaction=inter, temperature=T,
        c_init=c_init, phi_init=phi_init, regions=regions, permeability=perm,
        lame_lambda=lam, lame_mu=mu, biot_alpha=alpha, biot_modulus=N, elastic_penalty=pen1,
        phi_r=phi_r, diffusivity=D, transport_penalty=sigma, mass=mass, controls=controls,
        boundary_mode=mode, dirichlet=dirichlet, t_end=t_end, max_steps=max_steps,
        vtk_every=vtk_every, seed=seed,
    )


def _densities(r, raw, names, path, complete):
    if not isinstance(raw, dict):
        r.problems.append(f"{path}: expected a table of component densities")
        return None
    out = {}
    for key, val in raw.items():
        if key not in names:
            r.problems.append(f"{path}.{key}: unknown component")
            continue
        v = r.get(raw, key, path, float, check=_positive, msg="must be positive")
        if v is not None:
            out[key] = v
    if complete:
        for nm in names:
            if nm not in raw:
                r.problems.append(f"{path}.{nm}: required")
    return out


def _permeability(r, tab, base_dir):
    if not isinstance(tab, dict):
        r.problems.append("permeability: expected a table")
        return {}
    kind = r.get(tab, "kind", "permeability", str,
                 check=lambda v: v in ("uniform", "channels", "noise", "raster"),
                 msg="must be one of uniform, channels, noise, raster")
    out = {"kind": kind}
    p = "permeability"
    if kind == "uniform":
        out["value_md"] = r.get(tab, "value_md", p, float, check=_positive, msg="must be positive")
    elif kind == "channels":
        out["channel_md"] = r.get(tab, "channel_md", p, float, default=200.0, check=_positive, msg="must be positive")
        out["background_md"] = r.get(tab, "background_md", p, float, default=1.0, check=_positive, msg="must be positive")
        strips = tab.get("strips", [[0.0, 80.0, 65.0, 70.0], [0.0, 80.0, 35.0, 40.0]])
        if not (isinstance(strips, list) and all(isinstance(s, list) and len(s) == 4 for s in strips)):
            r.problems.append(f"{p}.strips: expected a list of [x0, x1, y0, y1] boxes")
            strips = []
        out["strips"] = [tuple(float(v) for v in s) for s in strips]
    elif kind == "noise":
        out["min_md"] = r.get(tab, "min_md", p, float, check=_positive, msg="must be positive")
        out["max_md"] = r.get(tab, "max_md", p, float, check=_positive, msg="must be positive")
        out["scale"] = r.get(tab, "scale", p, float, default=25.0, check=_positive, msg="must be positive")
        out["octaves"] = r.get(tab, "octaves", p, int, default=4, check=lambda v: 1 <= v <= 12, msg="must lie in [1, 12]")
        out["persistence"] = r.get(tab, "persistence", p, float, default=0.5, check=_unit, msg="must lie in (0, 1)")
        if out["min_md"] and out["max_md"] and out["min_md"] > out["max_md"]:
            r.problems.append(f"{p}.min_md: must not exceed max_md")
    elif kind == "raster":
        path = r.get(tab, "path", p, str)
        if path is not None and base_dir is not None and not Path(path).is_absolute():
            path = str(Path(base_dir) / path)
        out["path"] = path
        out["scale_md"] = r.get(tab, "scale_md", p, float, default=1.0, check=_positive, msg="must be positive")
    return out


def _controls(r, tab):
    if not isinstance(tab, dict):
        r.problems.append("controls: expected a table")
        return {}
    out = {}
    for key in tab:
        if key not in CONTROL_KEYS:
            r.problems.append(f"controls.{key}: unknown key")
    if "delta" in tab:
        d = r.get(tab, "delta", "controls", float, check=_unit, msg="must lie in (0, 1)")
        if d is not None:
            for k in ("delta_1", "delta_2", "delta_i1", "delta_i2"):
                out[k] = d
    for key, kind in CONTROL_KEYS.items():
        if key == "delta" or key not in tab:
            continue
        check, msg = None, None
        if key.startswith("delta"):
            check, msg = _unit, "must lie in (0, 1)"
        elif key in ("upwind_update_iterations", "max_upwind_flips"):
            check, msg = (lambda v: v >= 0), "must be non-negative"
        elif kind in (float, int):
            check, msg = _positive, "must be positive"
        v = r.get(tab, key, "controls", kind, check=check, msg=msg)
        if v is not None:
            out[key] = v
    return out


def _boundary(r, tab, names):
    if not isinstance(tab, dict):
        r.problems.append("boundary: expected a table")
        return "closed", []
    mode = r.get(tab, "mode", "boundary", str, default="closed",
                 check=lambda v: v in ("closed", "dirichlet"), msg="must be 'closed' or 'dirichlet'")
    entries = []
    raw = tab.get("dirichlet", [])
    if mode == "dirichlet" and not raw:
        r.problems.append("boundary.dirichlet: at least one edge entry required in dirichlet mode")
    for k, ent in enumerate(raw if isinstance(raw, list) else []):
        p = f"boundary.dirichlet[{k}]"
        edge = r.get(ent, "edge", p, str, check=lambda v: v in EDGES, msg=f"must be one of {EDGES}")
        span = ent.get("span") if isinstance(ent, dict) else None
        if span is not None and not (isinstance(span, list) and len(span) == 2 and span[0] < span[1]):
            r.problems.append(f"{p}.span: expected [start, end] along the edge")
            span = None
        cc = _densities(r, ent.get("c") if isinstance(ent, dict) else None, names, f"{p}.c", False)
        if cc is not None and not cc:
            r.problems.append(f"{p}.c: at least one component datum required")
        entries.append({"edge": edge, "span": span, "c": cc or {}})
    if mode == "closed" and raw:
        r.problems.append("boundary.dirichlet: entries given but boundary.mode is 'closed'")
    return mode, entries
