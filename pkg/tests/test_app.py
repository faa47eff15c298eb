import shutil
from pathlib import Path

import numpy as np
import pytest

from porogas.app.checks import run_thermo_checks
from porogas.app.cli import main
from porogas.app.config import ConfigError, config_from_dict, load_config, load_field_spec, parse_toml
from porogas.app.fields import (
    RasterError,
    cells_to_grid,
    gen_permeability,
    parse_raster,
    read_raster_field,
    sample_raster,
    value_noise,
    write_raster,
)
from porogas.app.io import Snapshot, diff_csv, read_timeseries, read_vtk, write_timeseries, write_vtk
from porogas.app.scenario import boundary_faces, build_problem, initial_fields
from porogas.diagnostics import make_record
from porogas.mesh import build_structured_triangulation
from porogas.msd_flow import MILLIDARCY
from porogas.stepper import Stepper, run

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"
DATA = Path(__file__).resolve().parent / "data"

MINIMAL = """
[mesh]
nx = 2
ny = 2
Lx = 10.0
Ly = 10.0

[[components]]
name = "CH4"
Tc = 190.56
Pc_bar = 45.99
omega = 0.011
viscosity = 1.1e-5

[mixture]
temperature = 300.0

[initial]
phi = 0.2
c = { CH4 = 100.0 }

[permeability]
kind = "uniform"
value_md = 100.0

[elastic]
lame_lambda = 1e9
lame_mu = 1e9
biot_modulus = 1e10

[flow]
phi_r = 0.2
penalty = 1e11

[run]
max_steps = 3
"""


def minimal(**edits):
    doc = parse_toml(MINIMAL)
    for path, value in edits.items():
        section, key = path.split("__")
        doc.setdefault(section, {})[key] = value
    return doc


# -- configuration ------------------------------------------------------------

def test_minimal_config_defaults():
    cfg = config_from_dict(parse_toml(MINIMAL))
    assert cfg.names == ["CH4"]
    assert cfg.components[0].Pc == pytest.approx(45.99e5)
    assert cfg.boundary_mode == "closed" and cfg.mass == "lumped"
    assert cfg.biot_alpha == 1.0 and cfg.elastic_penalty is None
    assert cfg.controls == {} and cfg.vtk_every == 0 and cfg.seed == 0


def test_example_square_config_loads():
    cfg = load_config(CONFIGS / "binary_square.toml")
    assert cfg.names == ["CO2", "CH4"]
    assert (cfg.nx, cfg.ny, cfg.Lx, cfg.Ly) == (32, 32, 100.0, 100.0)
    assert cfg.regions[0].box == (30.0, 70.0, 30.0, 70.0)
    assert cfg.regions[0].c == {"CO2": 300.0, "CH4": 10.0}
    assert cfg.c_init == {"CO2": 10.0, "CH4": 300.0}
    assert cfg.biot_modulus == 1e11 and cfg.lame_lambda == 1e15 and cfg.lame_mu == 1e15
    assert cfg.controls["delta_1"] == cfg.controls["delta_i2"] == 0.3
    assert cfg.permeability["kind"] == "noise"
    mesh = build_structured_triangulation(cfg.nx, cfg.ny, cfg.Lx, cfg.Ly)
    c, phi = initial_fields(cfg, mesh)
    inside = (np.abs(mesh.centroids - 50.0) < 20.0).all(axis=1)
    assert np.all(c[inside] == [300.0, 10.0]) and np.all(c[~inside] == [10.0, 300.0])


@pytest.mark.parametrize("name", ["closed_box.toml", "binary_square.toml", "ternary_channels.toml"])
def test_shipped_configs_load(name):
    load_config(CONFIGS / name)


def test_delta_out_of_range_names_field():
    doc = minimal(controls__delta_1=1.5)
    with pytest.raises(ConfigError) as exc:
        config_from_dict(doc)
    assert any(p.startswith("controls.delta_1") for p in exc.value.problems)


def test_upwind_controls_accepted():
    cfg = config_from_dict(minimal(controls__upwind_update_iterations=0, controls__max_upwind_flips=3))
    assert cfg.controls == {"upwind_update_iterations": 0, "max_upwind_flips": 3}
    with pytest.raises(ConfigError):
        config_from_dict(minimal(controls__max_upwind_flips=-1))


def test_all_problems_reported_together():
    doc = minimal(mesh__nx=0, flow__phi_r=2.0, extra__x=1)
    doc["components"][0]["Tc"] = -5.0
    with pytest.raises(ConfigError) as exc:
        config_from_dict(doc)
    text = "\n".join(exc.value.problems)
    for field in ("mesh.nx", "flow.phi_r", "components[0].Tc", "extra: unknown section"):
        assert field in text


def test_parse_error_reports_position():
    with pytest.raises(ConfigError) as exc:
        parse_toml("[mesh]\nnx = = 3\n", "bad.toml")
    assert "line 2" in str(exc.value)


def test_dirichlet_requires_data():
    doc = minimal(boundary__mode="dirichlet")
    with pytest.raises(ConfigError) as exc:
        config_from_dict(doc)
    assert any("boundary.dirichlet" in p for p in exc.value.problems)


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config(ROOT / "does_not_exist.toml")


def test_boundary_faces_select_edge():
    mesh = build_structured_triangulation(4, 4, 8.0, 8.0)
    left = boundary_faces(mesh, "left")
    assert left.size == 4 and np.allclose(mesh.face_midpoints[left, 0], 0.0)
    part = boundary_faces(mesh, "top", span=(0.0, 4.0))
    assert part.size == 2


# -- fields -------------------------------------------------------------------

def test_uniform_permeability():
    mesh = build_structured_triangulation(3, 3, 1.0, 1.0)
    k = gen_permeability({"kind": "uniform", "value_md": 100.0}, mesh)
    assert np.all(k == 100.0 * 9.869233e-16)


def test_channels_permeability():
    mesh = build_structured_triangulation(20, 20, 100.0, 100.0)
    k = gen_permeability({"kind": "channels"}, mesh) / MILLIDARCY
    x = mesh.centroids
    strip = (x[:, 0] <= 80) & (((x[:, 1] >= 65) & (x[:, 1] <= 70)) | ((x[:, 1] >= 35) & (x[:, 1] <= 40)))
    assert strip.any()
    assert np.allclose(k[strip], 200.0) and np.allclose(k[~strip], 1.0)


def test_noise_permeability_deterministic_and_in_range():
    mesh = build_structured_triangulation(16, 16, 100.0, 100.0)
    spec = {"kind": "noise", "min_md": 0.5, "max_md": 2.0}
    a = gen_permeability(spec, mesh, seed=4)
    b = gen_permeability(spec, mesh, seed=4)
    c = gen_permeability(spec, mesh, seed=5)
    assert np.array_equal(a, b) and not np.array_equal(a, c)
    md = a / MILLIDARCY
    assert md.min() == pytest.approx(0.5) and md.max() == pytest.approx(2.0)
    v = value_noise(mesh.centroids, mesh.extent, 1)
    assert v.min() == 0.0 and v.max() == 1.0


def test_single_pixel_raster():
    mesh = build_structured_triangulation(3, 2, 1.0, 1.0)
    assert np.all(sample_raster(parse_raster("1 1\n7.5\n"), mesh) == 7.5)


def test_checkerboard_raster_is_block_constant():
    mesh = build_structured_triangulation(2, 2, 2.0, 2.0)
    vals = sample_raster(parse_raster("2 2\n1 2\n3 4\n"), mesh)
    x = mesh.centroids
    expect = np.where(x[:, 1] < 1, np.where(x[:, 0] < 1, 1, 2), np.where(x[:, 0] < 1, 3, 4))
    assert np.array_equal(vals, expect)


def test_slice_file_extrema_preserved():
    path = DATA / "perm_slice.txt"
    nums = []
    for line in path.read_text().splitlines()[2:]:
        nums += [float(t) for t in line.split()]
    mesh = build_structured_triangulation(12, 10, 240.0, 100.0)
    vals = read_raster_field(path, mesh)
    assert vals.min() == min(nums) and vals.max() == max(nums)


@pytest.mark.parametrize("text,needle", [
    ("2\n1 2\n", "header"),
    ("2 2\n1 2 3\n", "expected 4 values"),
    ("2 2\n1 2\n3 x\n", "row 1, column 1"),
    ("", "empty"),
])
def test_raster_errors(text, needle):
    with pytest.raises(RasterError) as exc:
        parse_raster(text)
    assert needle in str(exc.value)


def test_raster_round_trip(tmp_path):
    grid = np.random.default_rng(0).random((3, 4))
    write_raster(grid, tmp_path / "g.txt")
    assert np.array_equal(parse_raster((tmp_path / "g.txt").read_text()), grid)
    assert cells_to_grid(np.repeat(np.arange(12.0), 2), 4, 3).tolist() == np.arange(12.0).reshape(3, 4).tolist()


# -- writers ------------------------------------------------------------------

def _small_run(max_steps=3):
    cfg = load_config(CONFIGS / "closed_box.toml")
    problem, perm, c0, phi0 = build_problem(cfg)
    st = Stepper(problem)
    records = []
    state = st.initial_state(c0, phi0)
    state, _ = run(st, state, max_steps=max_steps,
                   callback=lambda s, r: records.append(make_record(s, problem, r)))
    return problem, perm, state, records


def test_vtk_two_triangles(tmp_path):
    mesh = build_structured_triangulation(1, 1, 1.0, 1.0)
    n = mesh.n_cells
    snap = Snapshot(mesh, ["A", "B"], np.array([[1.0, 2.0], [3.0, 4.0]]), np.ones(n), np.full(n, 0.2),
                    np.zeros((n, 2)), np.ones(n), np.arange(12.0) * 0.1)
    write_vtk(snap, tmp_path / "t.vtk")
    text = (tmp_path / "t.vtk").read_text()
    assert "CELLS 2 8" in text and "CELL_TYPES 2" in text
    data = read_vtk(tmp_path / "t.vtk")
    assert data["cell_types"].tolist() == [5, 5]
    assert data["cells"].tolist() == mesh.cells.tolist()
    assert len(data["cell_data"]) == len(snap.cell_fields())
    assert text.count("SCALARS") == len(snap.cell_fields())
    assert data["point_data"]["displacement"].shape == (4, 3)


def test_vtk_round_trip_bit_exact(tmp_path):
    problem, perm, state, _ = _small_run(1)
    state.c = state.c * (1 + 1e-3 * np.random.default_rng(0).random(state.c.shape))
    snap = Snapshot.from_state(problem.mesh, problem.names, state, perm)
    write_vtk(snap, tmp_path / "s.vtk")
    data = read_vtk(tmp_path / "s.vtk")
    for name, vals in snap.cell_fields().items():
        assert np.array_equal(data["cell_data"][name], vals), name
    assert np.array_equal(data["points"][:, :2], problem.mesh.vertices)


def test_timeseries_lines(tmp_path):
    problem, _, _, records = _small_run(3)
    write_timeseries([], problem.names, tmp_path / "empty.csv")
    assert len((tmp_path / "empty.csv").read_text().splitlines()) == 1
    write_timeseries(records[1:], problem.names, tmp_path / "three.csv")
    assert len((tmp_path / "three.csv").read_text().splitlines()) == 4
    header, rows = read_timeseries(tmp_path / "three.csv")
    assert header[0] == "n" and [r[0] for r in rows] == ["1", "2", "3"]


def test_diff_csv(tmp_path):
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    a.write_text("n,x\n0,1.0\n1,2.0\n")
    b.write_text("n,x\n0,1.0\n1,2.0000001\n")
    assert diff_csv(a, a) == []
    assert len(diff_csv(a, b)) == 1
    assert diff_csv(a, b, rtol=1e-6) == []


def test_thermo_checks_pass_for_table_mixture(ternary_eos):
    results = run_thermo_checks(ternary_eos, n=50)
    assert all(r.ok for r in results), [r.line() for r in results]


# -- command line -------------------------------------------------------------

def test_cli_run_closed_box(tmp_path, capsys):
    out = tmp_path / "out"
    code = main(["run", str(CONFIGS / "closed_box.toml"), "--out-dir", str(out), "--vtk-every", "2"])
    assert code == 0
    header, rows = read_timeseries(out / "timeseries.csv")
    assert len(rows) == 6
    for col in ("energy", "mass_CH4", "min_c_CH4", "max_c_CH4", "min_phi"):
        k = header.index(col)
        assert len({r[k] for r in rows}) == 1, col
    assert sorted(p.name for p in out.glob("*.vtk")) == ["state_00000.vtk", "state_00002.vtk",
                                                         "state_00004.vtk", "state_00005.vtk"]
    assert (out / "timeseries_summary.png").stat().st_size > 0
    assert "9.8692330e-16" in (out / "run_info.txt").read_text()


def test_cli_run_deterministic(tmp_path):
    for d in ("a", "b"):
        assert main(["run", str(CONFIGS / "closed_box.toml"), "--out-dir", str(tmp_path / d),
                     "--max-steps", "2", "--vtk-every", "1"]) == 0
    assert (tmp_path / "a/timeseries.csv").read_bytes() == (tmp_path / "b/timeseries.csv").read_bytes()
    assert (tmp_path / "a/state_00002.vtk").read_bytes() == (tmp_path / "b/state_00002.vtk").read_bytes()


def test_cli_diff(tmp_path, capsys):
    a = tmp_path / "a.csv"
    a.write_text("n,x\n0,1\n")
    b = tmp_path / "b.csv"
    b.write_text("n,x\n0,2\n")
    assert main(["diff", str(a), str(a)]) == 0
    assert main(["diff", str(a), str(b)]) == 1
    assert main(["diff", str(a), str(b), "--rtol", "1.0"]) == 0


def test_cli_check_thermo(capsys):
    assert main(["check-thermo", str(CONFIGS / "ternary_channels.toml")]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 3 and "FAIL" not in out


def test_cli_gen_perm(tmp_path):
    spec = tmp_path / "perm.toml"
    spec.write_text('[mesh]\nnx = 8\nny = 4\nLx = 80.0\nLy = 40.0\n[permeability]\nkind = "noise"\n'
                    'min_md = 1.0\nmax_md = 10.0\n[run]\nseed = 3\n')
    assert main(["gen-perm", str(spec), str(tmp_path / "k.txt")]) == 0
    grid = parse_raster((tmp_path / "k.txt").read_text())
    assert grid.shape == (4, 8)
    assert grid.min() >= 1.0 - 1e-12 and grid.max() <= 10.0 + 1e-12
    assert main(["gen-perm", str(spec), str(tmp_path / "k.vtk")]) == 0
    assert "permeability" in read_vtk(tmp_path / "k.vtk")["cell_data"]
    (nx, ny, Lx, Ly), kind, seed = load_field_spec(spec)
    assert (nx, ny, seed) == (8, 4, 3)


def test_cli_raster_permeability_config(tmp_path):
    shutil.copy(DATA / "perm_slice.txt", tmp_path / "perm_slice.txt")
    text = MINIMAL.replace('kind = "uniform"\nvalue_md = 100.0', 'kind = "raster"\npath = "perm_slice.txt"')
    (tmp_path / "r.toml").write_text(text)
    assert main(["run", str(tmp_path / "r.toml"), "--out-dir", str(tmp_path / "o"), "--max-steps", "1"]) == 0


def test_cli_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text(MINIMAL.replace("phi = 0.2\nc =", "phi = 1.5\nc ="))
    assert main(["run", str(bad), "--out-dir", str(tmp_path)]) == 2
    assert "initial.phi" in capsys.readouterr().err
