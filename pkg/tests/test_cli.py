import subprocess
import sys

import numpy as np
import pytest

from biofilm_fv.cli import load_config, main
from biofilm_fv.harness import InitialData
from biofilm_fv.mesh import build_interval_mesh, read_mesh_file

TEST1 = """\
[problem]
preset = test1
[mesh]
n_cells = 80
[time]
mode = fixed
dt = 1e-5
t_end = 1e-3
[output]
snapshot_times = 5e-4
"""


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def read_csv(path):
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    data = np.array([[float(v) if v else np.nan for v in line.split(",")] for line in lines[1:]])
    return header, data


def test_run_test1(tmp_path):
    cfg = write(tmp_path, "t1.ini", TEST1)
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == ["diag.csv", "snap_0.0.csv", "snap_0.0005.csv", "snap_0.001.csv", "summary.txt"]
    for snap in out.glob("snap_*.csv"):
        header, data = read_csv(snap)
        assert header == ["cell_id", "x", "S", "M"]
        assert len(data) == 80
        assert np.all(data[:, 2] >= 0) and np.all(data[:, 2] <= 1 + 1e-12)
    header, diag = read_csv(out / "diag.csv")
    assert header[:2] == ["t", "dt"] and len(diag) == 100
    summary = dict(line.split("=", 1) for line in (out / "summary.txt").read_text().splitlines())
    assert summary["status"] == "ok" and summary["steps"] == "100"
    assert float(summary["t_final"]) == pytest.approx(1e-3, rel=1e-15)


def test_initial_snapshot_equals_projection(tmp_path):
    cfg = write(tmp_path, "t1.ini", TEST1.replace("t_end = 1e-3", "t_end = 2e-5"))
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    _, data = read_csv(out / "snap_0.0.csv")
    st = InitialData.test1().project(build_interval_mesh(80))
    assert np.array_equal(data[:, 2], st.S) and np.array_equal(data[:, 3], st.M)


def test_snapshot_times_flag_and_determinism(tmp_path):
    cfg = write(tmp_path, "t1.ini", TEST1.replace("t_end = 1e-3", "t_end = 1e-4"))
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["run", "--config", str(cfg), "--out", str(out), "--snapshot-times", "3e-5,6e-5"]) == 0
        outs.append(out)
    assert (outs[0] / "snap_3e-05.csv").exists() and (outs[0] / "snap_6e-05.csv").exists()
    for f in ("diag.csv", "snap_6e-05.csv", "snap_0.0001.csv"):
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()


def test_run_2d_adaptive(tmp_path):
    mesh = tmp_path / "m.txt"
    assert main(["gen-mesh", "--nx", "2", "--ny", "3", "--out", str(mesh)]) == 0
    cfg = write(tmp_path, "t2.ini", f"""\
[problem]
preset = test2
[mesh]
file = {mesh.name}
[time]
t_end = 1e-3
[output]
snapshot_times = 1e-4
""")
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    header, data = read_csv(out / "snap_0.0001.csv")
    assert header == ["cell_id", "x", "y", "S", "M"] and len(data) == 48


def test_run_with_lower_bound_monitor(tmp_path):
    cfg = write(tmp_path, "pos.ini", """\
[problem]
preset = test1
[params]
MD = 0.1
[mesh]
n_cells = 20
[initial]
kind = constant
m_const = 0.1
[time]
mode = fixed
dt = 1e-2
t_end = 0.1
[monitor]
m0 = 0.1
""")
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    text = (out / "summary.txt").read_text()
    assert "lower_bound_ok=true" in text and "entropy_slope=" in text


def test_missing_mesh_file(tmp_path, capsys):
    cfg = write(tmp_path, "bad.ini", "[problem]\npreset = test2\n[mesh]\nfile = nowhere.txt\n")
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "nowhere.txt" in capsys.readouterr().err


@pytest.mark.parametrize("text,needle", [
    ("[params]\nd1 = -1\n", "[params]"),
    ("[params]\nd1 = abc\n", "d1"),
    ("[params]\nfoo = 1\n", "foo"),
    ("[mesh]\nn_cells = 0\n", "n_cells"),
    ("[time]\nmode = fixed\ndt = -1\n", "[time]"),
    ("[bogus]\nx = 1\n", "bogus"),
    ("[problem]\npreset = test3\n", "preset"),
])
def test_config_errors(tmp_path, capsys, text, needle):
    cfg = write(tmp_path, "bad.ini", text)
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert needle in capsys.readouterr().err


def test_config_parsing(tmp_path):
    cfg = load_config(write(tmp_path, "c.ini", """\
[problem]
preset = test2
[params]
kappa1 = 10
[mesh]
nx = 2
ny = 3
[initial]
centers = 0.3 0.5, 0.7 0.5
""" ))
    assert cfg.params.a == 4 and cfg.params.kappa1 == 10
    assert cfg.initial.centers == ((0.3, 0.5), (0.7, 0.5))
    assert cfg.controls.mode == "adaptive" and cfg.controls.newton_tol == 1e-8
    assert cfg.dim == 2


def test_solver_failure_exit_code(tmp_path, capsys):
    cfg = write(tmp_path, "f.ini", TEST1.replace("dt = 1e-5", "dt = 1e-5\nnewton_max_iter = 1"))
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err
    assert "step 1" in err and "dt=1e-05" in err
    assert "status=failed" in (tmp_path / "o" / "summary.txt").read_text()


def test_convergence_synthetic(tmp_path, capsys):
    assert main(["convergence", "--synthetic", "--out", str(tmp_path)]) == 0
    slope = float(capsys.readouterr().out.split("slope_M=")[1])
    assert slope == pytest.approx(2.0, rel=1e-12)
    assert (tmp_path / "convergence.csv").read_text().startswith("n_cells,h,err_S,err_M\n")


def test_convergence_small(tmp_path, capsys):
    cfg = write(tmp_path, "c.ini", "[convergence]\ngrids = 10, 20\nn_ref = 40\ndt = 1e-6\nt_end = 2e-5\n")
    assert main(["convergence", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "convergence.csv").read_text().splitlines()
    assert len(lines) == 3 and lines[1].startswith("10,0.1,")


def test_convergence_single_grid(tmp_path, capsys):
    cfg = write(tmp_path, "c.ini", "[convergence]\ngrids = 40\n")
    assert main(["convergence", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert "need >= 2 grids" in capsys.readouterr().err


def test_gen_and_check_mesh(tmp_path, capsys):
    path = tmp_path / "m.txt"
    assert main(["gen-mesh", "--nx", "16", "--ny", "28", "--out", str(path)]) == 0
    capsys.readouterr()
    assert main(["check-mesh", str(path)]) == 0
    report = dict(line.split("=", 1) for line in capsys.readouterr().out.splitlines())
    assert report["n_cells"] == "3584" and report["admissible"] == "true"
    assert float(report["xi_observed"]) > 0
    assert float(report["orthogonality_max_violation"]) <= 1e-10
    mesh = read_mesh_file(path)
    assert mesh.n_edges == int(report["n_edges"])


def test_gen_mesh_degenerate(tmp_path):
    assert main(["gen-mesh", "--nx", "1", "--ny", "1", "--out", str(tmp_path / "m.txt")]) == 2
    assert main(["gen-mesh", "--nx", "0", "--ny", "3", "--out", str(tmp_path / "m.txt")]) == 2


def test_check_mesh_right_triangle(tmp_path, capsys):
    path = write(tmp_path, "r.txt", "NODES\n0 0 0\n1 1 0\n2 0 1\nTRIANGLES\n0 0 1 2\n")
    assert main(["check-mesh", str(path)]) == 1
    assert "triangle 0" in capsys.readouterr().err


def test_check_mesh_parse_errors(tmp_path, capsys):
    assert main(["check-mesh", str(write(tmp_path, "e.txt", ""))]) == 2
    assert main(["check-mesh", str(write(tmp_path, "b.txt", "NODES\n0 0\n"))]) == 2
    assert "line 2" in capsys.readouterr().err
    assert main(["check-mesh", str(tmp_path / "missing.txt")]) == 2


def test_module_entry_point(tmp_path):
    path = tmp_path / "m.txt"
    res = subprocess.run([sys.executable, "-m", "biofilm_fv", "gen-mesh", "--nx", "2", "--ny", "3",
                          "--out", str(path)], capture_output=True, text=True)
    assert res.returncode == 0 and "48 triangles" in res.stdout
