import csv
import os
import shutil

import numpy as np
import pytest

from porous.cli import EXIT_AUDIT, EXIT_OK, EXIT_SOLVER, EXIT_USAGE, main
from porous.config import build_scenario, parse_config, parse_config_text
from porous.diagnostics import CSV_FIELDS
from porous.errors import ConfigError
from porous.output import CsvSink, write_snapshot
from porous.stepper import run

from conftest import TEST_DATA, bundled

TWO_TRIANGLE = """[mesh]
file = {mesh}

[coefficients]
b = logistic lo=0.05 hi=0.40 scale=3
a = constant value=1
dw = constant value=1
lambda = constant value=1
rho = 0.5

[time]
tau = {tau}
t_end = {t_end}

[boundary]
g_w = 1.0

[initial]
u0 = {u0}
w0 = 0.2
theta0 = 0.0
{extra}"""


def write_cfg(tmp_path, name="case.cfg", tau=0.1, t_end=0.1, u0="-2 + x", extra="", mesh=None):
    path = tmp_path / name
    path.write_text(TWO_TRIANGLE.format(mesh=mesh or bundled("two_triangle.msh"), tau=tau, t_end=t_end,
                                        u0=u0, extra=extra))
    return str(path)


def read_vtk(path):
    """Minimal generic reader for legacy ASCII unstructured grids."""
    with open(path) as fh:
        tokens = fh.read().split("\n")
    assert tokens[0].startswith("# vtk DataFile")
    out, i = {"scalars": {}}, 4
    while i < len(tokens):
        head = tokens[i].split()
        if not head:
            i += 1
            continue
        if head[0] == "POINTS":
            n = int(head[1])
            out["points"] = np.array([[float(v) for v in tokens[i + 1 + k].split()] for k in range(n)])
            i += n + 1
        elif head[0] == "CELLS":
            n = int(head[1])
            out["cells"] = [[int(v) for v in tokens[i + 1 + k].split()] for k in range(n)]
            i += n + 1
        elif head[0] == "CELL_TYPES":
            n = int(head[1])
            out["types"] = [int(tokens[i + 1 + k]) for k in range(n)]
            i += n + 1
        elif head[0] == "POINT_DATA":
            out["n_point_data"] = int(head[1])
            i += 1
        elif head[0] == "SCALARS":
            n = out["n_point_data"]
            out["scalars"][head[1]] = np.array([float(tokens[i + 2 + k]) for k in range(n)])
            i += n + 2
        else:
            raise AssertionError(f"unexpected line {tokens[i]!r}")
    return out


class TestConfigErrors:
    def test_negative_tau_names_line(self):
        with pytest.raises(ConfigError, match=r"tau must be positive \(line 3\)"):
            parse_config_text("[time]\nt_end = 1\ntau = -0.1\n")

    def test_duplicate_key_names_both_lines(self):
        text = "[coefficients]\nb = linear\n# note\nb = logistic\n"
        with pytest.raises(ConfigError, match=r"duplicate key 'b' in \[coefficients\] \(lines 2 and 4\)"):
            parse_config_text(text)

    def test_unknown_section(self):
        with pytest.raises(ConfigError, match=r"unknown section \[physics\] \(line 2\)"):
            parse_config_text("\n[physics]\n")

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match=r"unknown key 'dt' in \[time\] \(line 2\)"):
            parse_config_text("[time]\ndt = 0.1\n")

    def test_type_mismatch(self):
        with pytest.raises(ConfigError, match=r"\[mesh\] nx \(line 2\): expected int"):
            parse_config_text("[mesh]\nnx = sixteen\n")

    def test_rtol_interval(self):
        with pytest.raises(ConfigError, match=r"\(0, 1\)"):
            parse_config_text("[solver]\nnewton_rtol = 1.5\n")

    def test_path_prefix(self, tmp_path):
        p = tmp_path / "bad.cfg"
        p.write_text("[time]\ntau = 0\n")
        with pytest.raises(ConfigError, match="bad.cfg: tau must be positive"):
            parse_config(str(p))

    def test_unsafe_expression_rejected(self):
        with pytest.raises(ConfigError, match="unknown name"):
            parse_config_text("[initial]\nu0 = __import__('os').getcwd()\n")

    @pytest.mark.parametrize("name", ["default.cfg", "clay.cfg", "loam.cfg", "sand.cfg", "neumann.cfg",
                                      "mms.cfg", "two_triangle.cfg"])
    def test_bundled_configs_parse(self, name):
        assert parse_config(bundled(name)).has("coefficients")


class TestInitialData:
    def test_expression(self, tmp_path):
        sc = build_scenario(parse_config(write_cfg(tmp_path, u0="-2 + x*y")))
        x, y = sc.mesh.nodes[:, 0], sc.mesh.nodes[:, 1]
        np.testing.assert_allclose(sc.u0, -2 + x * y)

    def test_file(self, tmp_path):
        np.savetxt(tmp_path / "u0.txt", [-1.0, -2.0, -3.0, -4.0])
        sc = build_scenario(parse_config(write_cfg(tmp_path, u0="file:u0.txt")))
        np.testing.assert_array_equal(sc.u0, [-1.0, -2.0, -3.0, -4.0])
        # the Dirichlet edge (nodes 3, 0) is overwritten by g_u
        np.testing.assert_array_equal(sc.initial_state().U, [0.0, -2.0, -3.0, 0.0])

    def test_file_wrong_length(self, tmp_path):
        np.savetxt(tmp_path / "u0.txt", [-1.0, -2.0])
        with pytest.raises(ConfigError, match="expected 4 nodal values"):
            build_scenario(parse_config(write_cfg(tmp_path, u0="file:u0.txt")))


class TestRun:
    def test_default_run(self, tmp_path):
        cfg = tmp_path / "default.cfg"
        text = open(bundled("default.cfg")).read().replace("t_end = 1.0", "t_end = 0.05")
        cfg.write_text(text.replace("nx = 16", "nx = 6").replace("ny = 16", "ny = 6"))
        out = tmp_path / "out"
        assert main(["run", str(cfg), "--out", str(out), "--snapshot-every", "2"]) == EXIT_OK
        rows = list(csv.reader(open(out / "diagnostics.csv")))
        assert rows[0] == list(CSV_FIELDS) and len(rows) == 7
        snaps = sorted(os.listdir(out))
        assert "snapshot_000000.vtk" in snaps and "snapshot_000005.vtk" in snaps and "snapshot_000004.vtk" in snaps
        assert "snapshot_000003.vtk" not in snaps

    def test_newton_failure_flushes_partial_csv(self, tmp_path, capsys):
        mesh = tmp_path / "sq.cfg"
        mesh.write_text("""[mesh]
nx = 8
ny = 8
left = D

[coefficients]
b = logistic lo=0.001 hi=0.40 scale=3
a = constant value=1
dw = constant value=1
lambda = constant value=1
rho = 1

[time]
tau = 1e-4
t_end = 1e-3

[initial]
u0 = -45
w0 = 0.5
theta0 = 0

[solver]
newton_max_iter = 2
""")
        out = tmp_path / "out"
        assert main(["run", str(mesh), "--out", str(out)]) == EXIT_SOLVER
        assert "solver failure" in capsys.readouterr().err
        rows = list(csv.reader(open(out / "diagnostics.csv")))
        assert rows[0] == list(CSV_FIELDS)
        assert rows[1][0] == "0"

    def test_strict_audit_failure(self, tmp_path):
        assert main(["run", bundled("loam.cfg"), "--out", str(tmp_path), "--check-invariants", "strict"]) == EXIT_AUDIT

    def test_report_mode_passes(self, tmp_path, capsys):
        assert main(["run", bundled("loam.cfg"), "--out", str(tmp_path), "--check-invariants", "report"]) == EXIT_OK
        assert "FAIL  overshoot w" in capsys.readouterr().out

    def test_golden_vtk(self, tmp_path):
        assert main(["run", bundled("two_triangle.cfg"), "--out", str(tmp_path)]) == EXIT_OK
        with open(tmp_path / "snapshot_000001.vtk", "rb") as a, \
                open(os.path.join(TEST_DATA, "two_triangle_golden.vtk"), "rb") as b:
            assert a.read() == b.read()

    def test_vtk_reread(self, tmp_path, default_scenario):
        s0 = default_scenario.initial_state()
        path = tmp_path / "s.vtk"
        write_snapshot(s0, default_scenario.mesh, str(path))
        data = read_vtk(str(path))
        mesh = default_scenario.mesh
        assert data["points"].shape == (mesh.n_nodes, 3)
        assert len(data["cells"]) == mesh.n_triangles and set(data["types"]) == {5}
        np.testing.assert_array_equal(data["scalars"]["u"], s0.U)
        np.testing.assert_array_equal(data["scalars"]["theta"], s0.Th)

    def test_empty_trajectory_header_only(self, tmp_path):
        sink = CsvSink(str(tmp_path / "d.csv"))
        sink.close()
        assert open(tmp_path / "d.csv").read() == ",".join(CSV_FIELDS) + "\n"

    def test_deterministic_csv(self, tmp_path):
        cfg = write_cfg(tmp_path, t_end=0.5)
        for d in ("a", "b"):
            assert main(["run", cfg, "--out", str(tmp_path / d)]) == EXIT_OK
        assert open(tmp_path / "a" / "diagnostics.csv", "rb").read() == \
            open(tmp_path / "b" / "diagnostics.csv", "rb").read()

    def test_relative_mesh_path(self, tmp_path):
        shutil.copy(bundled("two_triangle.msh"), tmp_path / "m.msh")
        cfg = write_cfg(tmp_path, mesh="m.msh")
        assert main(["run", cfg, "--out", str(tmp_path / "o")]) == EXIT_OK

    def test_run_matches_library(self, tmp_path):
        cfg = write_cfg(tmp_path, t_end=0.3)
        main(["run", cfg, "--out", str(tmp_path / "o")])
        summary = run(build_scenario(parse_config(cfg)))
        last = list(csv.reader(open(tmp_path / "o" / "diagnostics.csv")))[-1]
        assert float(last[CSV_FIELDS.index("energy_B")]) == summary.rows[-1].energy_B


class TestOtherCommands:
    def test_oracle(self, capsys):
        assert main(["oracle", bundled("two_triangle.cfg")]) == EXIT_OK
        assert "max deviation" in capsys.readouterr().out

    def test_oracle_size_guard(self):
        assert main(["oracle", bundled("default.cfg")]) == EXIT_USAGE

    def test_validate_default(self):
        assert main(["validate", bundled("default.cfg")]) == EXIT_OK

    def test_validate_constant_b(self, tmp_path, capsys):
        p = tmp_path / "c.cfg"
        p.write_text("[coefficients]\nb = constant value=0.3\na = constant value=1\ndw = constant value=1\n"
                     "lambda = constant value=1\nrho = 1\n")
        assert main(["validate", str(p)]) == EXIT_AUDIT
        assert "FAIL  (i) b strictly monotone" in capsys.readouterr().out

    def test_usage_errors(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == EXIT_USAGE
        assert main(["run", bundled("default.cfg"), "--snapshot-every", "0"]) == EXIT_USAGE

    def test_missing_config(self, tmp_path):
        assert main(["run", str(tmp_path / "nope.cfg")]) == EXIT_USAGE
