"""Thermodynamic property checks run against a configured mixture."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..thermo import EoSParams, chemical_potentials, estimate_theta, helmholtz, pr_pressure, pressure


@dataclass
class CheckResult:
    name: str
    worst: float
    tol: float

    @property
    def ok(self) -> bool:
        return bool(np.isfinite(self.worst) and self.worst <= self.tol)

    def line(self) -> str:
        return f"{'PASS' if self.ok else 'FAIL'} {self.name}: worst {self.worst:.3e} (tol {self.tol:.1e})"


def sample_states(eos: EoSParams, n: int, seed: int = 0, fill: float = 0.9) -> np.ndarray:
    """Random admissible densities: total c uniform in (0, fill/beta*), Dirichlet fractions."""
    rng = np.random.default_rng(seed)
    m = eos.n_components
    cmax = fill / eos.beta_star if eos.beta_star > 0 else 1e4
    ct = rng.uniform(1e-3, 1.0, n) * cmax
    frac = rng.dirichlet(np.ones(m), n)
    frac = np.maximum(frac, 1e-3)
    frac /= frac.sum(axis=1, keepdims=True)
    return ct[:, None] * frac


def richardson_gradient(c, eos: EoSParams, rel: float = 1e-3) -> np.ndarray:
    """Central differences of f at steps h and h/2, combined to fourth order."""
    c = np.atleast_2d(np.asarray(c, float))
    out = np.empty_like(c)
    for j in range(c.shape[1]):
        h = rel * c[:, j]

        def d(step):
            cp = c.copy()
            cm = c.copy()
            cp[:, j] += step
            cm[:, j] -= step
            return (helmholtz(cp, eos, False) - helmholtz(cm, eos, False)) / (2 * step)

        out[:, j] = (4 * d(h / 2) - d(h)) / 3
    return out


def run_thermo_checks(eos: EoSParams, n: int = 200, seed: int = 0) -> list[CheckResult]:
    c = sample_states(eos, n, seed)
    mu = chemical_potentials(c, eos)
    fd = richardson_gradient(c, eos)
    scale = np.maximum(np.abs(fd), eos.RT)
    grad = float(np.max(np.abs(mu - fd) / scale))

    p = pressure(c, eos)
    pc = pr_pressure(c, eos)
    pres = float(np.max(np.abs(p - pc) / np.maximum(np.abs(pc), 1.0)))

    theta, cells = estimate_theta(c, eos, return_cells=True)
    theta_ok = 0.0 if np.all(np.isfinite(cells)) and theta > 0 else np.inf

    return [
        CheckResult("chemical potential matches gradient of f", grad, 1e-6),
        CheckResult("pressure identity matches closed-form PR pressure", pres, 1e-8),
        CheckResult("stabilization parameter finite and positive", theta_ok, 0.0),
    ]
