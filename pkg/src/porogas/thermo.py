"""Peng-Robinson mixture thermodynamics in molar-density variables.

All functions take densities shaped (..., M) and broadcast over leading axes,
so a whole mesh worth of cells is evaluated in one call.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

R_GAS = 8.314
OMEGA_A = 0.45724
OMEGA_B = 0.07780
SQRT2 = np.sqrt(2.0)
DOMAIN_MARGIN = 1e-12


class ThermoDomainError(ValueError):
    """Raised when a state leaves {c_i > 0, beta* c < 1}."""

    def __init__(self, message, cell=None):
        super().__init__(message)
        self.cell = cell


@dataclass(frozen=True)
class ComponentSpec:
    name: str
    Tc: float  # K
    Pc: float  # Pa
    omega: float
    molar_weight: float  # kg/mol
    viscosity: float  # Pa s

    def __post_init__(self):
        if not (self.Tc > 0 and self.Pc > 0 and self.viscosity > 0):
            raise ValueError(f"component {self.name}: Tc, Pc and viscosity must be positive")


@dataclass(frozen=True, eq=False)
class MixtureSpec:
    components: tuple
    interaction: np.ndarray | None = None
    temperature: float = 300.0

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise ValueError("mixture needs at least one component")
        object.__setattr__(self, "components", comps)
        m = len(comps)
        k = np.zeros((m, m)) if self.interaction is None else np.asarray(self.interaction, float)
        if k.shape != (m, m):
            raise ValueError(f"interaction matrix must be {m}x{m}")
        if not np.allclose(k, k.T, atol=0, rtol=0) or np.any(np.diag(k) != 0):
            raise ValueError("interaction matrix must be symmetric with zero diagonal")
        object.__setattr__(self, "interaction", k)
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.components]

    def eos(self) -> "EoSParams":
        a, b = zip(*(pure_params(c, self.temperature) for c in self.components))
        return EoSParams(np.array(a), np.array(b), self.interaction, self.temperature)


@dataclass(frozen=True, eq=False)
class EoSParams:
    """Evaluated PR constants at fixed temperature."""

    alpha: np.ndarray
    beta: np.ndarray
    interaction: np.ndarray
    temperature: float
    a_matrix: np.ndarray = field(init=False)

    def __post_init__(self):
        alpha = np.asarray(self.alpha, float)
        beta = np.asarray(self.beta, float)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)
        k = np.asarray(self.interaction, float)
        object.__setattr__(self, "interaction", k)
        a = np.sqrt(np.outer(alpha, alpha)) * (1.0 - k)
        object.__setattr__(self, "a_matrix", 0.5 * (a + a.T))

    @property
    def n_components(self) -> int:
        return self.alpha.size

    @property
    def beta_star(self) -> float:
        return float(self.beta.max())

    @property
    def RT(self) -> float:
        return R_GAS * self.temperature


def ideal_params(n_components: int, temperature: float) -> EoSParams:
    z = np.zeros(n_components)
    return EoSParams(z, z.copy(), np.zeros((n_components, n_components)), temperature)


def chi(omega):
    w = np.asarray(omega, dtype=float)
    low = 0.37464 + 1.54226 * w - 0.26992 * w**2
    high = 0.379642 + 1.485030 * w - 0.164423 * w**2 + 0.016666 * w**3
    out = np.where(w <= 0.49, low, high)
    return float(out) if out.ndim == 0 else out


def pure_params(spec: ComponentSpec, T: float) -> tuple[float, float]:
    if not T > 0:
        raise ValueError("temperature must be positive")
    bracket = 1.0 + chi(spec.omega) * (1.0 - np.sqrt(T / spec.Tc))
    alpha = OMEGA_A * R_GAS**2 * spec.Tc**2 / spec.Pc * bracket**2
    beta = OMEGA_B * R_GAS * spec.Tc / spec.Pc
    return float(alpha), float(beta)


def check_admissible(c, eos: EoSParams) -> None:
    c = np.asarray(c, dtype=float)
    cc = c.reshape(-1, c.shape[-1])
    bad = np.flatnonzero(~(cc > 0).all(axis=1))
    if bad.size:
        raise ThermoDomainError(f"non-positive molar density in cell {bad[0]}", int(bad[0]))
    bc = eos.beta_star * cc.sum(axis=1)
    bad = np.flatnonzero(~(bc < 1.0 - DOMAIN_MARGIN))
    if bad.size:
        raise ThermoDomainError(
            f"beta*c = {bc[bad[0]]:.6g} outside (0, 1) in cell {bad[0]}", int(bad[0])
        )


def mixing(c, eos: EoSParams):
    """Mixture (alpha, beta) from the quadratic/linear mixing rules."""
    c = np.asarray(c, dtype=float)
    ct = c.sum(axis=-1)
    if np.any(ct <= 0):
        raise ValueError("mixing rule needs a non-empty composition")
    A = np.einsum("...i,ij,...j->...", c, eos.a_matrix, c)
    B = c @ eos.beta
    return A / ct**2, B / ct


def _log_ratio_over_B(B):
    """L(B)/B with L = ln((1+(1-r2)B)/(1+(1+r2)B)), finite as B -> 0."""
    small = np.abs(B) < 1e-8
    Bs = np.where(small, 1.0, B)
    exact = (np.log1p((1.0 - SQRT2) * Bs) - np.log1p((1.0 + SQRT2) * Bs)) / Bs
    series = -2.0 * SQRT2 + 2.0 * SQRT2 * B
    return np.where(small, series, exact)


def _mu_bracket(B):
    """(-L/B - 2 r2/(1+2B-B^2)) / B, finite as B -> 0."""
    small = np.abs(B) < 1e-5
    Bs = np.where(small, 1.0, B)
    exact = (-_log_ratio_over_B(Bs) - 2.0 * SQRT2 / (1.0 + 2.0 * Bs - Bs**2)) / Bs
    series = 2.0 * SQRT2 - (20.0 * SQRT2 / 3.0) * B
    return np.where(small, series, exact)


def helmholtz(c, eos: EoSParams, check: bool = True):
    c = np.asarray(c, dtype=float)
    if check:
        check_admissible(c, eos)
    RT = eos.RT
    ct = c.sum(axis=-1)
    A = np.einsum("...i,ij,...j->...", c, eos.a_matrix, c)
    B = c @ eos.beta
    ideal = RT * np.sum(c * (np.log(c) - 1.0), axis=-1)
    repulsion = -ct * RT * np.log1p(-B)
    attraction = A / (2.0 * SQRT2) * _log_ratio_over_B(B)
    return ideal + repulsion + attraction


def chemical_potentials(c, eos: EoSParams, check: bool = True):
    c = np.asarray(c, dtype=float)
    if check:
        check_admissible(c, eos)
    RT = eos.RT
    ct = c.sum(axis=-1)[..., None]
    A = np.einsum("...i,ij,...j->...", c, eos.a_matrix, c)[..., None]
    B = (c @ eos.beta)[..., None]
    dA = 2.0 * c @ eos.a_matrix
    b = eos.beta
    mu = RT * np.log(c) - RT * np.log1p(-B) + ct * RT * b / (1.0 - B)
    mu = mu + dA / (2.0 * SQRT2) * _log_ratio_over_B(B)
    mu = mu + A * b / (2.0 * SQRT2) * _mu_bracket(B)
    return mu


def pressure(c, eos: EoSParams, check: bool = True):
    """p = sum_i c_i mu_i - f."""
    c = np.asarray(c, dtype=float)
    mu = chemical_potentials(c, eos, check)
    return np.sum(c * mu, axis=-1) - helmholtz(c, eos, check=False)


def pr_pressure(c, eos: EoSParams):
    """Closed-form PR pressure cRT/(1-Bc) - alpha c^2/(1+2Bc-(Bc)^2)."""
    c = np.asarray(c, dtype=float)
    ct = c.sum(axis=-1)
    A = np.einsum("...i,ij,...j->...", c, eos.a_matrix, c)
    B = c @ eos.beta
    return ct * eos.RT / (1.0 - B) - A / (1.0 + 2.0 * B - B**2)


def stabilization_weight(c_total_prev, theta: float, beta_star: float, RT: float):
    """theta RT / (c (1 - beta* c)): slope of the stabilized potential."""
    s = np.asarray(c_total_prev, float) * (1.0 - beta_star * np.asarray(c_total_prev, float))
    if np.any(s <= 0):
        raise ThermoDomainError("beta* c outside (0, 1) in stabilization weight")
    return theta * RT / s


def stabilized_mu(c_prev, c_new, theta: float, eos: EoSParams, mu_prev=None):
    """mu(c^n) + theta RT (c^{n+1} - c^n) / (c^n (1 - beta* c^n)), per component."""
    c_prev = np.asarray(c_prev, float)
    if mu_prev is None:
        mu_prev = chemical_potentials(c_prev, eos)
    w = stabilization_weight(c_prev.sum(axis=-1), theta, eos.beta_star, eos.RT)
    return mu_prev + w[..., None] * (np.asarray(c_new, float) - c_prev)


def stabilized_mu_total(c_prev, c_total_new, theta: float, eos: EoSParams, mu_prev=None):
    c_prev = np.asarray(c_prev, float)
    if mu_prev is None:
        mu_prev = chemical_potentials(c_prev, eos)
    ct = c_prev.sum(axis=-1)
    w = stabilization_weight(ct, theta, eos.beta_star, eos.RT)
    return mu_prev.sum(axis=-1) + w * (np.asarray(c_total_new, float) - ct)


def hessian_fd(c, eos: EoSParams):
    """Symmetrized central-difference Hessian of f from the analytic gradient."""
    c = np.atleast_2d(np.asarray(c, float))
    n, m = c.shape
    H = np.empty((n, m, m))
    for j in range(m):
        h = 1e-5 * np.maximum(c[:, j], 1.0)
        h = np.minimum(h, 0.5 * c[:, j])
        cp = c.copy()
        cm = c.copy()
        cp[:, j] += h
        cm[:, j] -= h
        H[:, :, j] = (chemical_potentials(cp, eos, False) - chemical_potentials(cm, eos, False)) / (
            2.0 * h[:, None]
        )
    return 0.5 * (H + np.swapaxes(H, 1, 2))


def gershgorin_bound(H):
    d = np.diagonal(H, axis1=-2, axis2=-1)
    radius = np.abs(H).sum(axis=-1) - np.abs(d)
    return (d + radius).max(axis=-1)


def estimate_theta(c, eos: EoSParams, safety: float = 1.1, theta_min: float = 1e-6,
                   return_cells: bool = False):
    """Smallest theta with theta RT/(c(1-beta* c)) >= safety * rowbound(f''/2) in every cell."""
    c = np.atleast_2d(np.asarray(c, float))
    check_admissible(c, eos)
    bound = 0.5 * gershgorin_bound(hessian_fd(c, eos))
    ct = c.sum(axis=1)
    per_cell = safety * bound * ct * (1.0 - eos.beta_star * ct) / eos.RT
    if not np.all(np.isfinite(per_cell)):
        bad = int(np.flatnonzero(~np.isfinite(per_cell))[0])
        raise ThermoDomainError(f"degenerate Hessian estimate in cell {bad}", bad)
    theta = max(float(per_cell.max()), theta_min)
    return (theta, per_cell) if return_cells else theta


def kozeny_carman(phi, phi_r):
    phi = np.asarray(phi, float)
    if np.any((phi <= 0) | (phi >= 1)) or not (0 < phi_r < 1):
        raise ValueError("porosities must lie in (0, 1)")
    out = (phi / phi_r) ** 3 * ((1.0 - phi_r) / (1.0 - phi)) ** 2
    return float(out) if out.ndim == 0 else out
