"""Time stepping: stabilization parameter, bound-preserving step size and the
linear fixed-point iteration coupling transport, elasticity and velocities."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import diagnostics as diag
from .geomech import ElasticOperators, PorosityError, solve_displacement, update_porosity, update_pressure
from .mesh import FaceSet, SimplicialMesh, build_faceset, jump
from .msd_flow import FrictionParams, VelocitySolver, dissipation, mobility_coefficients
from .thermo import (
    EoSParams,
    ThermoDomainError,
    check_admissible,
    chemical_potentials,
    estimate_theta,
    helmholtz,
    pressure,
)
from .transport import (
    BoundViolation,
    assemble_system,
    check_bounds,
    clamp_deltas,
    face_permeability,
    local_residual,
    penalty_laplacian,
    recover_last_component,
    solve_increment,
)

log = logging.getLogger(__name__)
EPS = np.finfo(float).eps


class StepFailure(RuntimeError):
    """The step could not be completed (no convergence, step-size regime violated)."""

    def __init__(self, message, state=None, history=None):
        super().__init__(message)
        self.state = state
        self.history = history or []


class InvariantViolation(RuntimeError):
    """A certified property (bounds, mass, energy) failed."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


@dataclass
class TimeStepControls:
    delta_1: float = 0.3
    delta_2: float = 0.3
    delta_i1: float = 0.3
    delta_i2: float = 0.3
    epsilon: float = 1e-30
    tau_max: float = 1000.0
    tol_x_rel: float = 1e-12
    tol_x_floor: float = 1e-30
    tol_x_abs: float | None = None
    max_iterations: int = 50
    theta_safety: float = 1.1
    theta_min: float = 1e-6
    delta_clamp: float = 0.9
    max_upwind_flips: int = 2
    upwind_update_iterations: int | None = 1
    retry_halving: bool = False
    max_halvings: int = 8

    def __post_init__(self):
        for name in ("delta_1", "delta_2", "delta_i1", "delta_i2", "delta_clamp"):
            v = np.asarray(getattr(self, name), float)
            if np.any((v <= 0) | (v >= 1)):
                raise ValueError(f"{name} must lie in (0, 1)")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not self.tau_max > 0:
            raise ValueError("tau_max must be positive")
        if not (self.tol_x_rel > 0 and self.tol_x_floor > 0):
            raise ValueError("iteration tolerances must be positive")
        if int(self.max_upwind_flips) < 0:
            raise ValueError("max_upwind_flips must be non-negative")
        if self.upwind_update_iterations is not None and int(self.upwind_update_iterations) < 0:
            raise ValueError("upwind_update_iterations must be non-negative")
        if int(self.max_iterations) < 1:
            raise ValueError("max_iterations must be at least 1")
        if not self.theta_safety > 0:
            raise ValueError("theta_safety must be positive")


@dataclass(eq=False)
class BoundaryData:
    """Prescribed densities on open boundary faces; NaN means mirror the interior cell."""

    faces: np.ndarray
    datum: np.ndarray  # (nb, M)


@dataclass(eq=False)
class Problem:
    mesh: SimplicialMesh
    eos: EoSParams
    names: list
    friction: FrictionParams
    elastic: ElasticOperators
    sigma: float  # transport penalty
    boundary: BoundaryData | None = None
    mass: str = "lumped"

    @property
    def n_components(self) -> int:
        return self.eos.n_components

    @property
    def closed(self) -> bool:
        return self.boundary is None or len(self.boundary.faces) == 0


@dataclass(eq=False)
class SimulationState:
    c: np.ndarray  # (nc, M)
    phi: np.ndarray
    p: np.ndarray
    mu: np.ndarray  # (nc, M)
    u: np.ndarray  # (nf, M) normal fluxes, zero on closed boundary faces
    w: np.ndarray
    t: float = 0.0
    n: int = 0

    @property
    def c_total(self) -> np.ndarray:
        return self.c.sum(axis=1)

    def copy(self) -> "SimulationState":
        return SimulationState(
            self.c.copy(), self.phi.copy(), self.p.copy(), self.mu.copy(), self.u.copy(),
            self.w.copy(), self.t, self.n,
        )


@dataclass
class StepReport:
    tau: float
    theta: float
    iterations: int
    history: list  # [(X1, X2)] per iteration
    max_residual: float = 0.0
    contraction: float | None = None
    dissipation: float = 0.0
    solid_balance: float = 0.0
    stability_violations: int = 0
    stability_worst: float = -np.inf
    clamped_cells: int = 0
    bound_checks: int = 0
    halvings: int = 0
    upwind_mismatch: int = 0  # face/component pairs whose final velocity runs against c*
    upwind_mismatch_flux: float = 0.0  # their share of the total advective flux
    upwind_plus: np.ndarray | None = None  # (n_active_faces, M): True where c* is the plus-side value
    energy: float = 0.0
    warnings: list = field(default_factory=list)

    @property
    def X1(self) -> float:
        return self.history[-1][0] if self.history else 0.0

    @property
    def X2(self) -> float:
        return self.history[-1][1] if self.history else 0.0


def contraction_ratio(history) -> float | None:
    """Geometric ratio from a log-linear fit of X1 + X2 over the iterations."""
    x = np.array([a + b for a, b in history], float)
    ok = x > 0
    if ok.sum() < 2:
        return None
    idx = np.flatnonzero(ok)
    slope = np.polyfit(idx, np.log(x[ok]), 1)[0]
    return float(np.exp(slope))


class Stepper:
    def __init__(self, problem: Problem, controls: TimeStepControls | None = None, strict: bool = False):
        self.problem = problem
        self.controls = controls or TimeStepControls()
        self.strict = strict
        mesh = problem.mesh
        bnd = problem.boundary
        self.faces: FaceSet = build_faceset(mesh, None if bnd is None else bnd.faces)
        self.velocity = VelocitySolver(mesh, self.faces, problem.mass)
        self.K_face = face_permeability(self.faces, problem.friction.permeability)
        self.penalty = problem.sigma * self.K_face
        self.laplacian = penalty_laplacian(self.faces, self.penalty, mesh.n_cells)
        self.E0 = None

    # -- helpers -----------------------------------------------------------
    def ghost_states(self, c):
        bnd = self.problem.boundary
        if self.problem.closed:
            return None, None
        c = np.asarray(c, float)
        inner = c[self.faces.plus[self.faces.is_boundary]]
        gc = np.where(np.isnan(bnd.datum), inner, bnd.datum)
        return gc, chemical_potentials(gc, self.problem.eos)

    def active_u(self, u_faces):
        return np.asarray(u_faces)[self.faces.faces]

    def full_u(self, u_active):
        out = np.zeros((self.problem.mesh.n_faces, u_active.shape[1]))
        out[self.faces.faces] = u_active
        return out

    def energy(self, state: SimulationState) -> float:
        return diag.discrete_energy(state, self.problem)

    def initial_state(self, c0, phi0, t0: float = 0.0) -> SimulationState:
        pb = self.problem
        c0 = np.array(c0, dtype=float)
        phi0 = np.array(phi0, dtype=float)
        check_admissible(c0, pb.eos)
        if np.any((phi0 <= 0) | (phi0 >= 1)):
            raise ValueError("initial porosity must lie in (0, 1)")
        mu0 = chemical_potentials(c0, pb.eos)
        p0 = pressure(c0, pb.eos)
        w0 = solve_displacement(p0, pb.elastic)
        gc, gmu = self.ghost_states(c0)
        d, wf = mobility_coefficients(c0, phi0, pb.friction)
        jumps = self.faces.jump(mu0, gmu)
        ua = np.zeros_like(jumps)
        for _ in range(50):
            cup = self.faces.upwind(c0, ua, gc)
            new = self.velocity.converged_velocity(d, wf, jumps, cup, ua)
            same = np.array_equal(np.sign(new), np.sign(ua))
            ua = new
            if same:
                break
        state = SimulationState(c0, phi0, p0, mu0, self.full_u(ua), w0, t0, 0)
        self.E0 = self.energy(state)
        return state

    # -- step size ---------------------------------------------------------
    def compute_adaptive_tau(self, c_prev, mu_prev, phi_iter, phi_prev, u_active, d1, d2,
                             ghost_c=None, ghost_mu=None):
        """Largest step keeping every density inside its delta envelope.

        ``d1``/``d2`` are (nc, M) per-cell component deltas. The total density
        uses the controls' delta_1/delta_2.
        """
        pb, ctl, fs = self.problem, self.controls, self.faces
        mesh = pb.mesh
        n = mesh.n_cells
        c_prev = np.asarray(c_prev, float)
        ct = c_prev.sum(axis=1)
        s = ct * (1.0 - pb.eos.beta_star * ct)
        area = mesh.cell_area
        dphi = phi_iter - phi_prev
        h = fs.length
        inner = ~fs.is_boundary
        mp = fs.minus[inner]

        def spread(pos_plus, pos_minus):
            out = np.zeros(n)
            np.add.at(out, fs.plus, pos_plus)
            np.add.at(out, mp, pos_minus[inner])
            return out

        cp, cm = fs.pair(c_prev, ghost_c)
        out_tot = np.zeros(n)
        in_tot = np.zeros(n)
        taus = []
        m = pb.n_components
        for i in range(m):
            u = u_active[:, i]
            # outflow from plus: u>0 carries c_plus; outflow from minus: u<0 carries c_minus
            out_i = spread(np.maximum(u, 0) * cp[:, i] * h, np.maximum(-u, 0) * cm[:, i] * h)
            in_i = spread(np.maximum(-u, 0) * cm[:, i] * h, np.maximum(u, 0) * cp[:, i] * h)
            out_tot += out_i
            in_tot += in_i
            J = self.penalty * fs.jump(mu_prev[:, i], None if ghost_mu is None else ghost_mu[:, i])
            pos = spread(np.maximum(J, 0), np.maximum(-J, 0))
            neg = spread(np.maximum(-J, 0), np.maximum(J, 0))
            num_lo = (phi_iter * s * d1[:, i] - dphi * c_prev[:, i]) * area
            num_hi = (phi_iter * s * d2[:, i] + dphi * c_prev[:, i]) * area
            taus.append(self._tau_pair(num_lo, num_hi, out_i + pos, in_i + neg, f"component {pb.names[i]}"))
        Jt = self.penalty * fs.jump(mu_prev.sum(axis=1), None if ghost_mu is None else ghost_mu.sum(axis=1))
        pos = spread(np.maximum(Jt, 0), np.maximum(-Jt, 0))
        neg = spread(np.maximum(-Jt, 0), np.maximum(Jt, 0))
        num_lo = (phi_iter * s * ctl.delta_1 - dphi * ct) * area
        num_hi = (phi_iter * s * ctl.delta_2 + dphi * ct) * area
        taus.append(self._tau_pair(num_lo, num_hi, out_tot + pos, in_tot + neg, "total density"))
        return float(min(min(taus), ctl.tau_max))

    def _tau_pair(self, num_lo, num_hi, den_lo, den_hi, what):
        eps = self.controls.epsilon
        for num in (num_lo, num_hi):
            bad = np.flatnonzero(num <= 0)
            if bad.size:
                raise StepFailure(
                    f"step-size numerator non-positive for {what} in cell {bad[0]}: "
                    "porosity change too large for the chosen delta"
                )
        return min((num_lo / (den_lo + eps)).min(), (num_hi / (den_hi + eps)).min())

    # -- fixed-point iteration ----------------------------------------------
    def prepare(self, state: SimulationState):
        pb, ctl = self.problem, self.controls
        try:
            check_admissible(state.c, pb.eos)
        except ThermoDomainError as exc:
            raise InvariantViolation(f"state at step {state.n} not admissible: {exc}", state) from exc
        theta = estimate_theta(state.c, pb.eos, ctl.theta_safety, ctl.theta_min)
        d1, clamp1 = clamp_deltas(ctl.delta_i1, state.c, ctl.delta_clamp)
        d2, clamp2 = clamp_deltas(ctl.delta_i2, state.c, ctl.delta_clamp)
        n_clamped = int(np.any(clamp1 | clamp2, axis=1).sum())
        return theta, d1, d2, n_clamped

    def iterate_time_step(self, state: SimulationState, tau: float, theta: float, d1, d2):
        pb, ctl, fs = self.problem, self.controls, self.faces
        mesh = pb.mesh
        eos = pb.eos
        m = pb.n_components
        area = mesh.cell_area
        c_n = state.c
        ct_n = c_n.sum(axis=1)
        s = ct_n * (1.0 - eos.beta_star * ct_n)
        W = theta * eos.RT
        mu_n = chemical_potentials(c_n, eos)
        f_n = helmholtz(c_n, eos)
        gc, gmu = self.ghost_states(c_n)
        gmu_tot = None if gmu is None else gmu.sum(axis=1)
        h = fs.length

        phi_l = state.phi.copy()
        ua = self.active_u(state.u)
        c_l = c_n.copy()
        history = []
        tol = None
        ratio_cap = 1.0 / (1.0 - (1.0 - eos.beta_star * ct_n)[:, None] * d1)
        checks = 0
        # upwind orientation per face/component follows u^l only for the first
        # updates, then stays fixed so the rest of the step is a fixed linear map;
        # a face that flips max_upwind_flips times is frozen earlier
        orient = ua >= 0
        flips = np.zeros(ua.shape, dtype=np.int64)
        for l in range(int(ctl.max_iterations)):
            bad = np.flatnonzero((phi_l[:, None] / state.phi[:, None] >= ratio_cap).any(axis=1))
            if bad.size:
                raise StepFailure(f"porosity ratio regime violated in cell {bad[0]}", state, history)
            if l and (ctl.upwind_update_iterations is None or l <= ctl.upwind_update_iterations):
                turned = (ua >= 0) != orient
                turned &= flips < ctl.max_upwind_flips
                flips += turned
                orient ^= turned
            cup = fs.upwind(c_n, np.where(orient, 1.0, -1.0), gc)
            flux = cup * ua * h[:, None]
            sys_t = assemble_system(mesh, fs, ct_n, mu_n.sum(axis=1), flux.sum(axis=1), phi_l,
                                    state.phi, s, tau, W, self.penalty, gmu_tot, self.laplacian)
            ct_new = ct_n + s * solve_increment(sys_t)
            c_new = np.empty_like(c_n)
            for i in range(m - 1):
                sys_i = assemble_system(mesh, fs, c_n[:, i], mu_n[:, i], flux[:, i], phi_l, state.phi,
                                        s, tau, W, self.penalty, None if gmu is None else gmu[:, i],
                                        self.laplacian)
                c_new[:, i] = c_n[:, i] + s * solve_increment(sys_i)
            c_new[:, m - 1] = recover_last_component(ct_new, c_new[:, : m - 1])
            try:
                check_bounds(ct_new, c_new, ct_n, eos.beta_star, ctl.delta_1, ctl.delta_2)
            except BoundViolation as exc:
                raise InvariantViolation(f"bound envelope violated at iterate {l + 1}: {exc}", state) from exc
            checks += 1
            mu_new = mu_n + (W / s)[:, None] * (c_new - c_n)
            p_new = update_pressure(c_n, mu_new, f_n)
            w_new = solve_displacement(p_new, pb.elastic)
            try:
                phi_new = update_porosity(state.phi, p_new, state.p, w_new, state.w, pb.elastic)
            except PorosityError as exc:
                raise InvariantViolation(str(exc), state) from exc
            d, wf = mobility_coefficients(c_n, phi_new, pb.friction)
            jumps = fs.jump(mu_new, gmu)
            ua_new = self.velocity.component_sweep(d, wf, jumps, cup, ua)

            dc = c_new - c_l
            X1 = float(np.sum(area[:, None] * dc**2) + np.sum(jump(mesh, dc) ** 2))
            X2 = self.velocity.norm_sq(ua_new - ua)
            history.append((X1, X2))
            if tol is None:
                tol = ctl.tol_x_rel * max(X1 + X2, ctl.tol_x_floor)
                tol = max(tol, self._roundoff_tol(c_n, ua_new))
            if X1 + X2 <= tol:
                new_state = SimulationState(c_new, phi_l, p_new, mu_new, self.full_u(ua),
                                            w_new, state.t + tau, state.n + 1)
                extras = dict(flux=flux, cup=cup, jumps=jumps, u_last=ua_new, phi_last=phi_new,
                              mu_n=mu_n, f_n=f_n, gmu=gmu, checks=checks,
                              orient=orient.copy(), mismatch=int(np.sum((ua >= 0) != orient)),
                              mismatch_flux=float(np.sum(np.abs(flux) * ((ua >= 0) != orient))
                                                  / max(np.sum(np.abs(flux)), 1e-300)))
                return new_state, history, extras
            c_l, phi_l, ua = c_new, phi_new, ua_new
        raise StepFailure(
            f"fixed-point iteration did not converge in {ctl.max_iterations} iterations "
            f"(last X1+X2 = {sum(history[-1]):.3e}, tolerance {tol:.3e}); "
            "try a smaller tau_max or larger penalties",
            state,
            history,
        )

    def _roundoff_tol(self, c, ua):
        if self.controls.tol_x_abs is not None:
            return self.controls.tol_x_abs
        area = self.problem.mesh.cell_area
        scale = float(np.sum(area[:, None] * c**2)) + self.velocity.norm_sq(ua)
        return (64.0 * EPS) ** 2 * scale

    def step(self, state: SimulationState, t_end: float | None = None):
        theta, d1, d2, n_clamped = self.prepare(state)
        if n_clamped:
            log.debug("step %d: per-cell delta clamp active in %d cells", state.n + 1, n_clamped)
        gc, gmu = self.ghost_states(state.c)
        mu_n = chemical_potentials(state.c, self.problem.eos)
        tau = self.compute_adaptive_tau(state.c, mu_n, state.phi, state.phi, self.active_u(state.u),
                                        d1, d2, gc, gmu)
        if t_end is not None:
            tau = min(tau, max(t_end - state.t, 0.0)) or tau
        halvings = 0
        while True:
            try:
                new_state, history, extras = self.iterate_time_step(state, tau, theta, d1, d2)
                break
            except (StepFailure, InvariantViolation) as exc:
                if not self.controls.retry_halving or halvings >= self.controls.max_halvings:
                    raise
                halvings += 1
                tau *= 0.5
                log.warning("step %d: retry with tau=%.4g after: %s", state.n + 1, tau, exc)
        report = StepReport(tau=tau, theta=theta, iterations=len(history), history=history,
                            clamped_cells=n_clamped, halvings=halvings, bound_checks=extras["checks"],
                            upwind_mismatch=extras["mismatch"], upwind_mismatch_flux=extras["mismatch_flux"],
                            upwind_plus=extras["orient"])
        if halvings:
            report.warnings.append("off-protocol: step size halved after a failed attempt")
        self._certify(state, new_state, report, extras)
        return new_state, report

    # -- certification -------------------------------------------------------
    def _certify(self, old: SimulationState, new: SimulationState, report: StepReport, extras):
        pb, fs = self.problem, self.faces
        mesh = pb.mesh
        m = pb.n_components
        tau = report.tau
        closed = pb.closed
        c_n, c_new = old.c, new.c
        gmu = extras["gmu"]
        worst = 0.0
        for i in range(m):
            res, scale = local_residual(mesh, fs, c_new[:, i], c_n[:, i], new.mu[:, i], extras["flux"][:, i],
                                        new.phi, old.phi, tau, self.penalty,
                                        None if gmu is None else gmu[:, i])
            worst = max(worst, float(np.max(np.abs(res) / scale)))
        report.max_residual = worst
        report.contraction = contraction_ratio(report.history)
        report.dissipation = dissipation(extras["jumps"], extras["cup"], extras["u_last"], fs.length)
        report.solid_balance = diag.solid_balance(old, new, extras["phi_last"], pb)

        # stabilization inequality per cell
        f_new = helmholtz(c_new, pb.eos)
        lhs = f_new - extras["f_n"]
        rhs = np.sum(new.mu * (c_new - c_n), axis=1) + 1e-10 * np.abs(extras["f_n"])
        excess = lhs - rhs
        report.stability_worst = float(excess.max())
        report.stability_violations = int(np.sum(excess > 0))
        if report.stability_violations:
            report.warnings.append(f"stabilization inequality failed in {report.stability_violations} cells")

        problems = []
        if worst > 1e-10:
            problems.append(f"local residual {worst:.3e} above 1e-10")
        E_old = self.energy(old)
        E_new = self.energy(new)
        report.energy = E_new
        if self.E0 is None:
            self.E0 = E_old
        # boundary inflow changes both totals; the local residual covers the open case
        if closed:
            m_old = diag.component_mass(old.phi, c_n, mesh)
            m_new = diag.component_mass(new.phi, c_new, mesh)
            drift = np.abs(m_new - m_old) / np.abs(m_old)
            if np.any(drift > 1e-10):
                problems.append(f"component mass drift {drift.max():.3e}")
            if E_new > E_old + 1e-12 * abs(self.E0):
                problems.append(f"energy increased by {E_new - E_old:.3e} J")
        scale = max(abs(self.E0), 1.0)
        if report.dissipation < -1e-10 * scale:
            problems.append(f"negative dissipation {report.dissipation:.3e}")
        if report.solid_balance > 1e-10 * abs(E_new):
            problems.append(f"solid energy balance {report.solid_balance:.3e} positive")
        if problems:
            msg = f"step {new.n}: " + "; ".join(problems)
            if closed or self.strict:
                raise InvariantViolation(msg, new)
            report.warnings.append(msg)
            log.warning(msg)


def run(stepper: Stepper, state: SimulationState, t_end: float | None = None, max_steps: int | None = None,
        callback=None):
    """Advance until t_end or the step budget; returns final state and reports."""
    reports = []
    if callback is not None:
        callback(state, None)
    while (max_steps is None or len(reports) < max_steps) and (t_end is None or state.t < t_end):
        state, report = stepper.step(state, t_end)
        log.info("step %d t=%.6g tau=%.4g theta=%.4g iters=%d", state.n, state.t, report.tau,
                 report.theta, report.iterations)
        reports.append(report)
        if callback is not None:
            callback(state, report)
    return state, reports
