"""Acceptance checks. Each test carries a criterion marker; the verdicts are
listed in the "acceptance criteria" section of the pytest terminal summary."""
import time
from pathlib import Path

import mpmath as mp
import numpy as np
import pytest

from conftest import C2H6, CH4, CO2
from test_geomech import LAM, MU, linear_dofs, remove_rigid, traction_load
from porogas.app.cli import main
from porogas.app.config import load_config
from porogas.app.io import write_timeseries
from porogas.app.scenario import build_problem, controls_of
from porogas.diagnostics import make_record
from porogas.geomech import ElasticParams, assemble_dg_elasticity, solve_displacement
from porogas.mesh import build_structured_triangulation
from porogas.msd_flow import MILLIDARCY, FrictionParams
from porogas.stepper import Problem, Stepper, TimeStepControls, run
from porogas.thermo import MixtureSpec, chemical_potentials, helmholtz, pressure

ROOT = Path(__file__).resolve().parents[1]
SQUARE = ROOT / "configs" / "binary_square.toml"
R, OMEGA_A, OMEGA_B = 8.314, 0.45724, 0.07780


# -- independent Peng-Robinson model in extended precision ---------------------

def mp_constants(comps, T):
    T = mp.mpf(T)
    alpha, beta = [], []
    for c in comps:
        w = mp.mpf(c.omega)
        if w <= mp.mpf("0.49"):
            k = mp.mpf("0.37464") + mp.mpf("1.54226") * w - mp.mpf("0.26992") * w**2
        else:
            k = (mp.mpf("0.379642") + mp.mpf("1.485030") * w - mp.mpf("0.164423") * w**2
                 + mp.mpf("0.016666") * w**3)
        Tc, Pc = mp.mpf(c.Tc), mp.mpf(c.Pc)
        alpha.append(OMEGA_A * R**2 * Tc**2 / Pc * (1 + k * (1 - mp.sqrt(T / Tc))) ** 2)
        beta.append(OMEGA_B * R * Tc / Pc)
    return alpha, beta


def mp_f(c, alpha, beta, RT):
    ct = mp.fsum(c)
    A = mp.fsum(ci * cj * mp.sqrt(ai * aj) for ci, ai in zip(c, alpha) for cj, aj in zip(c, alpha))
    B = mp.fsum(ci * bi for ci, bi in zip(c, beta))
    r2 = mp.sqrt(2)
    ideal = RT * mp.fsum(ci * (mp.log(ci) - 1) for ci in c)
    return ideal - ct * RT * mp.log(1 - B) + A / (2 * r2 * B) * mp.log((1 + (1 - r2) * B) / (1 + (1 + r2) * B))


def mp_pressure(c, alpha, beta, RT):
    ct = mp.fsum(c)
    A = mp.fsum(ci * cj * mp.sqrt(ai * aj) for ci, ai in zip(c, alpha) for cj, aj in zip(c, alpha))
    B = mp.fsum(ci * bi for ci, bi in zip(c, beta))
    return ct * RT / (1 - B) - A / (1 + 2 * B - B**2)


def mp_gradient(c, alpha, beta, RT, rel=mp.mpf("1e-4")):
    """Central differences at h and h/2 combined by Richardson extrapolation."""
    out = []
    for j in range(len(c)):
        def d(h):
            cp = list(c)
            cm = list(c)
            cp[j] += h
            cm[j] -= h
            return (mp_f(cp, alpha, beta, RT) - mp_f(cm, alpha, beta, RT)) / (2 * h)

        h = rel * c[j]
        out.append((4 * d(h / 2) - d(h)) / 3)
    return out


@pytest.fixture(scope="module")
def ternary_sample():
    eos = MixtureSpec((CH4, C2H6, CO2), temperature=300.0).eos()
    rng = np.random.default_rng(2024)
    beta_star = max(OMEGA_B * R * b.Tc / b.Pc for b in (CH4, C2H6, CO2))
    ct = rng.uniform(1.0, 0.95 / beta_star, 200)
    frac = rng.dirichlet(np.ones(3), 200)
    return eos, ct[:, None] * frac


@pytest.mark.criterion(1, "chemical potentials match the gradient of f on 200 ternary states")
def test_thermo_gradient_oracle(ternary_sample, record_property):
    eos, c = ternary_sample
    t0 = time.perf_counter()
    mu = chemical_potentials(c, eos)
    with mp.workdps(40):
        alpha, beta = mp_constants((CH4, C2H6, CO2), 300.0)
        RT = mp.mpf(R) * 300
        ref = np.array([[float(v) for v in mp_gradient([mp.mpf(x) for x in row], alpha, beta, RT)]
                        for row in c])
    elapsed = time.perf_counter() - t0
    worst = float(np.max(np.abs(mu - ref) / np.abs(ref)))
    record_property("detail", f"worst relative error {worst:.2e}, {elapsed:.2f} s")
    assert worst <= 1e-6
    assert elapsed < 10.0


@pytest.mark.criterion(2, "pressure identity equals the closed-form PR pressure")
def test_pressure_identity(ternary_sample, record_property):
    eos, c = ternary_sample
    p = pressure(c, eos)
    with mp.workdps(40):
        alpha, beta = mp_constants((CH4, C2H6, CO2), 300.0)
        RT = mp.mpf(R) * 300
        ref = np.array([float(mp_pressure([mp.mpf(x) for x in row], alpha, beta, RT)) for row in c])
    worst = float(np.max(np.abs(p - ref) / np.abs(ref)))
    record_property("detail", f"worst relative error {worst:.2e}")
    assert worst <= 1e-8


# -- the square-contrast run ---------------------------------------------------

def independent_envelope(c_new, c_old, phi, beta_star, d1, d2):
    """Count cells violating positivity, beta* c < 1, porosity range or the delta envelope."""
    ct, cn = c_new.sum(axis=1), c_old.sum(axis=1)
    room = 1 - beta_star * cn
    bad = ~(c_new > 0).all(axis=1)
    bad |= ~(beta_star * ct < 1)
    bad |= ~((phi > 0) & (phi < 1))
    bad |= ct < (1 - d1 * room) * cn * (1 - 1e-10)
    bad |= ct > (1 + d2 * room) * cn * (1 + 1e-10)
    return int(bad.sum())


def independent_residual(mesh, faces, plus_side, c_new, c_old, mu, phi_new, phi_old, u, tau, sigma, perm):
    """Per-cell balance residual over a closed mesh, relative to phi c |K| / tau."""
    kp, km = mesh.face_cells[faces, 0], mesh.face_cells[faces, 1]
    h = mesh.face_length[faces]
    Ke = 0.5 * (perm[kp] + perm[km])
    uf = u[faces]
    up = np.where(plus_side, c_old[kp], c_old[km])
    face_term = up * uf * h[:, None] + (sigma * Ke)[:, None] * (mu[kp] - mu[km])
    res = mesh.cell_area[:, None] * (phi_new[:, None] * c_new - phi_old[:, None] * c_old) / tau
    np.add.at(res, kp, face_term)
    np.add.at(res, km, -face_term)
    scale = phi_new[:, None] * c_new * mesh.cell_area[:, None] / tau
    return float(np.max(np.abs(res) / scale))


@pytest.fixture(scope="module")
def square_run(tmp_path_factory):
    cfg = load_config(SQUARE)
    problem, perm, c0, phi0 = build_problem(cfg)
    ctl = controls_of(cfg)
    stepper = Stepper(problem, ctl)
    out = {"records": [], "envelope": 0, "stability": 0, "residual": 0.0, "checked_residuals": 0,
           "energy": [], "mass": []}
    prev = {}
    eos = problem.eos

    def callback(state, report):
        out["records"].append(make_record(state, problem, report))
        out["energy"].append(stepper.energy(state))
        out["mass"].append(np.sum(problem.mesh.cell_area[:, None] * state.phi[:, None] * state.c, axis=0))
        if report is not None:
            old = prev["state"]
            out["envelope"] += independent_envelope(state.c, old.c, state.phi, eos.beta_star,
                                                    ctl.delta_1, ctl.delta_2)
            lhs = helmholtz(state.c, eos) - helmholtz(old.c, eos)
            f_old = helmholtz(old.c, eos)
            rhs = np.sum(state.mu * (state.c - old.c), axis=1) + 1e-10 * np.abs(f_old)
            out["stability"] += int(np.sum(lhs > rhs))
            r = independent_residual(problem.mesh, stepper.faces.faces, report.upwind_plus, state.c, old.c,
                                     state.mu, state.phi, old.phi, state.u, report.tau, problem.sigma, perm)
            out["residual"] = max(out["residual"], r)
            out["checked_residuals"] += 1
            out["mismatch_flux"] = max(out.get("mismatch_flux", 0.0), report.upwind_mismatch_flux)
        prev["state"] = state

    t0 = time.perf_counter()
    state, reports = run(stepper, stepper.initial_state(c0, phi0), cfg.t_end, cfg.max_steps, callback)
    out["runtime"] = time.perf_counter() - t0
    csv = tmp_path_factory.mktemp("library") / "timeseries.csv"
    write_timeseries(out["records"], problem.names, csv)
    out.update(cfg=cfg, ctl=ctl, state=state, reports=reports, csv=csv, tmp=tmp_path_factory)
    return out


@pytest.mark.criterion(3, "square-contrast run: energy, moles, bounds, step size")
def test_square_run_invariants(square_run, record_property):
    reports = square_run["reports"]
    E = np.array(square_run["energy"])
    mass = np.array(square_run["mass"])
    tau = np.array([r.tau for r in reports])
    drift = float(np.max(np.abs(mass - mass[0]) / mass[0]))
    rise = float(np.max(np.diff(E)) / abs(E[0]))
    record_property("detail", f"{len(reports)} steps in {square_run['runtime']:.0f} s, max energy rise "
                              f"{rise:.1e}|E0|, mass drift {drift:.1e}, final tau {tau[-1]:.4g}")
    assert len(reports) >= 400
    assert mesh_cells(square_run) == 2048
    assert np.all(np.diff(E) <= 1e-12 * abs(E[0]))
    assert drift <= 1e-10
    assert square_run["envelope"] == 0
    assert np.all(np.diff(tau) >= 0)
    assert tau[-1] == square_run["ctl"].tau_max
    assert all(not r.warnings for r in reports)
    assert square_run["runtime"] <= 300.0


def mesh_cells(run_data):
    cfg = run_data["cfg"]
    return 2 * cfg.nx * cfg.ny


@pytest.mark.criterion(4, "local conservation residual of every accepted step")
def test_local_conservation(square_run, record_property):
    worst = max(r.max_residual for r in square_run["reports"])
    record_property("detail", f"worst {worst:.1e}; independent recheck {square_run['residual']:.1e} "
                              f"on {square_run['checked_residuals']} steps")
    assert square_run["checked_residuals"] == len(square_run["reports"])
    assert worst <= 1e-10
    assert square_run["checked_residuals"] > 0 and square_run["residual"] <= 1e-10


@pytest.mark.criterion(5, "bound envelope at every iterate")
def test_bound_envelope(square_run, record_property):
    reports = square_run["reports"]
    iterates = sum(r.iterations for r in reports)
    record_property("detail", f"{iterates} iterates checked, {square_run['envelope']} accepted-state violations")
    assert all(r.bound_checks == r.iterations for r in reports)
    assert square_run["envelope"] == 0


@pytest.mark.criterion(6, "fixed-point contraction")
def test_contraction(square_run, record_property):
    worst_ratio = 0.0
    for r in square_run["reports"]:
        x = np.array([a + b for a, b in r.history])
        assert np.all(np.diff(x[1:]) <= 0), f"non-monotone history {x}"
        if r.contraction is not None:
            worst_ratio = max(worst_ratio, r.contraction)
            assert r.contraction < 1
    record_property("detail", f"largest fitted ratio {worst_ratio:.3f}")


@pytest.mark.criterion(9, "stabilization inequality per cell per step")
def test_stabilization_inequality(square_run, record_property):
    reported = sum(r.stability_violations for r in square_run["reports"])
    record_property("detail", f"{reported} reported, {square_run['stability']} recomputed violations")
    assert reported == 0 and square_run["stability"] == 0


@pytest.mark.criterion(10, "identical CSV from two executions")
def test_determinism(square_run, record_property):
    out = square_run["tmp"].mktemp("cli")
    assert main(["run", str(SQUARE), "--out-dir", str(out)]) == 0
    a = square_run["csv"].read_bytes()
    b = (out / "timeseries.csv").read_bytes()
    record_property("detail", f"{len(a)} bytes")
    assert a == b


# -- two-cell monolithic solve ---------------------------------------------------

DUNAVANT7 = (
    np.array([[1 / 3, 1 / 3, 1 / 3],
              [0.059715871789770, 0.470142064105115, 0.470142064105115],
              [0.470142064105115, 0.059715871789770, 0.470142064105115],
              [0.470142064105115, 0.470142064105115, 0.059715871789770],
              [0.797426985353087, 0.101286507323456, 0.101286507323456],
              [0.101286507323456, 0.797426985353087, 0.101286507323456],
              [0.101286507323456, 0.101286507323456, 0.797426985353087]]),
    np.array([0.225, 0.132394152788506, 0.132394152788506, 0.132394152788506,
              0.125939180544827, 0.125939180544827, 0.125939180544827]),
)


def rt0_weight(mesh, cell, face):
    """Integral over the cell of |h/(2|K|) (x - p)|^2 with p the vertex opposite the face."""
    verts = mesh.vertices[mesh.cells[cell]]
    opp = [v for v in mesh.cells[cell] if v not in mesh.face_vertices[face]][0]
    p = mesh.vertices[opp]
    e1, e2 = verts[1] - verts[0], verts[2] - verts[0]
    area = 0.5 * abs(e1[0] * e2[1] - e1[1] * e2[0])
    h = np.linalg.norm(np.diff(mesh.vertices[mesh.face_vertices[face]], axis=0))
    bary, wq = DUNAVANT7
    x = bary @ verts
    return float(area * np.sum(wq * np.sum((h / (2 * area) * (x - p)) ** 2, axis=1)))


def two_cell_problem():
    mesh = build_structured_triangulation(1, 1, 2.0, 2.0)
    eos = MixtureSpec((CO2, CH4), temperature=300.0).eos()
    perm = np.array([1.0, 3.0]) * MILLIDARCY
    D = np.array([[1.0, 1e-9], [1e-9, 1.0]])
    fr = FrictionParams(D, perm, [CO2.viscosity, CH4.viscosity], 0.2)
    el = assemble_dg_elasticity(mesh, ElasticParams(1e9, 8e8, 0.9, 5e9))
    return Problem(mesh, eos, ["CO2", "CH4"], fr, el, 1e11)


@pytest.mark.criterion(7, "two-cell step equals a dense monolithic solve")
def test_two_cell_monolithic(record_property):
    pb = two_cell_problem()
    mesh, eos, ops = pb.mesh, pb.eos, pb.elastic
    st = Stepper(pb, TimeStepControls(tol_x_rel=1e-30, max_iterations=500))
    c0 = np.array([[200.0, 50.0], [40.0, 150.0]])
    phi0 = np.array([0.2, 0.25])
    s0 = st.initial_state(c0, phi0)
    new, rep = st.step(s0)

    # fixed data of the step
    tau, W = rep.tau, rep.theta * R * 300.0
    ct = c0.sum(axis=1)
    bstar = max(OMEGA_B * R * c.Tc / c.Pc for c in (CO2, CH4))
    s = ct * (1 - bstar * ct)
    area = np.array([2.0, 2.0])
    e = int(mesh.interior[0])
    kp, km = mesh.face_cells[e]
    h = float(np.linalg.norm(np.diff(mesh.vertices[mesh.face_vertices[e]], axis=0)))
    Ke = 0.5 * (pb.friction.permeability[kp] + pb.friction.permeability[km])
    m_plus, m_minus = rt0_weight(mesh, kp, e), rt0_weight(mesh, km, e)
    with mp.workdps(30):
        alpha, beta = mp_constants((CO2, CH4), 300.0)
        RTm = mp.mpf(R) * 300
        rows = [[mp.mpf(x) for x in row] for row in c0]
        mu_n = np.array([[float(v) for v in mp_gradient(r, alpha, beta, RTm, mp.mpf("1e-8"))] for r in rows])
        f_n = np.array([float(mp_f(r, alpha, beta, RTm)) for r in rows])
    p_n, w_n = s0.p, s0.w
    visc = np.array([CO2.viscosity, CH4.viscosity])
    Dij = 1e-9
    orient = np.sign(s0.u[e])
    cup = np.where(orient >= 0, c0[kp], c0[km])
    A, Bc, C = ops.stiffness.toarray(), ops.coupling.toarray(), ops.constraints.toarray()
    nd = A.shape[0]

    def unpack(x):
        return x[:4].reshape(2, 2), x[4:6], x[6:8], x[8:8 + nd], x[8 + nd:]

    def residual(x):
        c, phi, u, w, lam = unpack(x)
        mu = mu_n + (W / s)[:, None] * (c - c0)
        p = np.sum(c0 * mu, axis=1) - f_n
        jmp = mu[kp] - mu[km]
        face = cup * u * h + 1e11 * Ke * jmp
        mass = area[:, None] * (phi[:, None] * c - phi0[:, None] * c0) / tau
        mass[kp] += face
        mass[km] -= face
        kc = (phi / 0.2) ** 3 * (0.8 / (1 - phi)) ** 2
        d = visc[None, :] / (kc * pb.friction.permeability)[:, None]
        fric = c0[:, 0] * c0[:, 1] / ct**2 / Dij
        lump = lambda v: m_plus * v[kp] + m_minus * v[km]  # noqa: E731
        vel = np.array([
            lump(d[:, 0] + fric) * u[0] - lump(fric) * u[1] - jmp[0] * cup[0] * h,
            lump(d[:, 1] + fric) * u[1] - lump(fric) * u[0] - jmp[1] * cup[1] * h,
        ])
        el = A @ w + C.T @ lam - Bc.T @ p
        con = C @ w
        por = phi - phi0 - (p - p_n) / 5e9 - Bc @ (w - w_n) / area
        return np.concatenate([mass.ravel(), vel, el, con, por]), p, mu

    x = np.concatenate([c0.ravel(), phi0, s0.u[e], w_n, np.zeros(3)])
    col = np.maximum(np.abs(x), 1.0)
    col[8:8 + nd] = max(np.abs(w_n).max(), 1e-12)
    col[6:8] = max(np.abs(s0.u[e]).max(), 1e-12)
    col[8 + nd:] = 1.0
    for _ in range(30):
        F = residual(x)[0]
        J = np.empty((F.size, x.size))
        for j in range(x.size):
            dx = np.zeros_like(x)
            dx[j] = 1e-7 * col[j]
            J[:, j] = (residual(x + dx)[0] - residual(x - dx)[0]) / (2 * dx[j])
        rs = np.maximum(np.abs(J).max(axis=1), 1e-300)
        step = np.linalg.solve(J / rs[:, None], -F / rs)
        x = x + step
        if np.all(np.abs(step) <= 1e-15 * col):
            break
    c, phi, u, w, lam = unpack(x)
    _, p, mu = residual(x)
    assert np.all(np.sign(u) == orient), "upwind orientation changed"

    def rel(a, b):
        return float(np.max(np.abs(np.asarray(a) - np.asarray(b))) / np.max(np.abs(b)))

    lam_step = np.linalg.lstsq(C.T, Bc.T @ new.p - A @ new.w, rcond=None)[0]
    errs = {
        "c": rel(new.c, c), "phi": rel(new.phi, phi), "u": rel(new.u[e], u), "w": rel(new.w, w),
        "p": rel(new.p, p), "mu": rel(new.mu, mu),
        "lambda": float(np.max(np.abs(lam_step - lam)) / np.max(np.abs(Bc.T @ p))),
    }
    worst = max(errs.values())
    record_property("detail", f"worst relative difference {worst:.1e} after {rep.iterations} iterations")
    assert rep.iterations > 2
    assert worst <= 1e-8, errs


# -- elasticity patch tests ------------------------------------------------------

@pytest.mark.criterion(8, "elasticity patch tests")
def test_elasticity_patches(record_property):
    mesh = build_structured_triangulation(5, 4, 4.0, 3.0)
    ops = assemble_dg_elasticity(mesh, ElasticParams(LAM, MU, 0.7, 1e10))
    p = np.full(mesh.n_cells, 2.5e6)
    w = solve_displacement(p, ops)
    strain = 0.7 * 2.5e6 / (2 * (LAM + MU))
    xy = mesh.vertices[mesh.cells].reshape(-1, 2)
    ref = (strain * (xy - np.array([2.0, 1.5]))).reshape(-1)
    dil = float(np.abs(w - ref).max() / np.abs(ref).max())

    G = np.array([[0.9e-4, 1.7e-4], [-0.3e-4, 2.2e-4]])
    w_lin = linear_dofs(mesh, G, np.array([3e-3, 1e-3]))
    sol = ops.solve_load(traction_load(mesh, G))
    lin = float(np.abs(remove_rigid(mesh, sol) - remove_rigid(mesh, w_lin)).max() / np.abs(w_lin).max())
    record_property("detail", f"dilation {dil:.1e}, linear patch {lin:.1e}")
    assert dil <= 1e-10 and lin <= 1e-10
