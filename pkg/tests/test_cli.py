from __future__ import annotations

import csv
import io
import json
import math
import re
import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from hbem.cli import EXIT_CONFIG, EXIT_FAIL, EXIT_PASS, ConfigError, RunConfig, main, read_metadata, run

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def write_config(tmp_path, data, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return path


def run_cli(tmp_path, command, data, out="out.csv"):
    cfg = write_config(tmp_path, data)
    code = main([command, "--config", str(cfg), "--out", str(tmp_path / out)])
    text = (tmp_path / out).read_text() if (tmp_path / out).exists() else ""
    return code, text


def table(text):
    body = text.split("\n", 1)[1]
    return list(csv.DictReader(io.StringIO(body)))


class TestConfig:
    def test_defaults_and_roundtrip(self):
        cfg = RunConfig.from_dict({"command": "solve"})
        assert cfg.shape == {"kind": "icosphere", "subdivisions": 3, "radius": 1.0}
        assert cfg.z == (0.0, 0.0, -2.0) and cfg.epsilon == 0.25
        assert RunConfig.from_dict(json.loads(cfg.to_json())) == cfg

    def test_json_syntax_error_has_line(self):
        with pytest.raises(ConfigError, match="line 2 column"):
            RunConfig.from_json('{"command": "solve",\n "z": [0, 0, }')

    @pytest.mark.parametrize(
        "patch, field",
        [
            ({"command": "plot"}, "command"),
            ({"shape": {"kind": "cube"}}, "shape.kind"),
            ({"shape": {"kind": "icosphere", "subdivisions": -1}}, "shape.subdivisions"),
            ({"shape": {"kind": "ellipsoid", "semi_axes": [1, 0, 1]}}, "shape.semi_axes"),
            ({"z": [0, 0]}, "z"),
            ({"z": [0, 0, 1]}, "z"),
            ({"epsilon": -0.1}, "epsilon"),
            ({"epsilon": 2.5}, "epsilon"),
            ({"delta0": 5.0}, "z"),
            ({"datum": {"kind": "pressure", "p": [0, "a", 1]}}, "datum.p[1]"),
            ({"observation": {"points": [[0, 0, 1]]}}, "observation.points[0]"),
            ({"observation": {"grid": {"x": [1, 0, 3], "y": [0, 1, 2]}}}, "observation.grid.x"),
            ({"colour": "red"}, "colour"),
            ({"image": "yes"}, "image"),
        ],
    )
    def test_field_diagnostics(self, patch, field):
        data = {"command": "solve", **patch}
        with pytest.raises(ConfigError, match=re.escape(f"'{field}'")):
            RunConfig.from_dict(data)

    def test_sweep_needs_three_points(self):
        with pytest.raises(ConfigError, match="need >= 3 points"):
            RunConfig.from_dict({"command": "convergence", "epsilon_sweep": [0.2, 0.1]})

    def test_sweep_strictly_decreasing(self):
        with pytest.raises(ConfigError, match="strictly decreasing"):
            RunConfig.from_dict({"command": "convergence", "epsilon_sweep": [0.2, 0.3, 0.1]})

    def test_sweep_required_for_convergence(self):
        with pytest.raises(ConfigError, match="epsilon_sweep"):
            RunConfig.from_dict({"command": "convergence"})

    def test_sweep_depth_checked(self):
        with pytest.raises(ConfigError, match=r"epsilon_sweep\[0\]"):
            RunConfig.from_dict({"command": "convergence", "epsilon_sweep": [2.5, 0.2, 0.1]})

    def test_grid_points(self):
        cfg = RunConfig.from_dict({"command": "solve", "observation": {"grid": {"x": [-2, 2, 11], "y": [-2, 2, 11]}}})
        pts = cfg.points()
        assert pts.shape == (121, 3)
        assert np.all(pts[:, 2] == 0)

    def test_polarization_ignores_scene(self):
        cfg = RunConfig.from_dict({"command": "polarization", "z": [0, 0, -0.1], "epsilon": 5.0})
        assert cfg.command == "polarization"

    def test_fingerprint_changes_with_content(self):
        a = RunConfig.from_dict({"command": "solve"})
        b = RunConfig.from_dict({"command": "solve", "epsilon": 0.3})
        assert a.fingerprint != b.fingerprint


class TestSolveCommand:
    GRID = {"command": "solve", "observation": {"grid": {"x": [-2, 2, 11], "y": [-2, 2, 11]}}}

    def test_grid_rows(self, tmp_path):
        code, text = run_cli(tmp_path, "solve", self.GRID)
        assert code == EXIT_PASS
        rows = table(text)
        assert len(rows) == 121
        assert all(math.isfinite(float(r["u"])) for r in rows)
        meta = read_metadata(text)
        assert meta["verdict"] == "PASS"
        assert meta["summary"]["max_trace_difference"] <= 1e-8
        assert all(r["config"] == meta["config_fingerprint"] for r in rows)

    def test_zero_datum(self, tmp_path):
        code, text = run_cli(tmp_path, "solve", {**self.GRID, "datum": {"kind": "zero"}})
        assert code == EXIT_PASS
        assert all(float(r["u"]) == 0.0 for r in table(text))

    def test_byte_identical_reruns(self, tmp_path, monkeypatch):
        data = {"command": "solve", "observation": {"points": [[0.5, 0, 0], [1, 1, 0], [2, -1, -0.5]]}}
        monkeypatch.setenv("HBEM_THREADS", "1")
        run_cli(tmp_path, "solve", data, "a.csv")
        monkeypatch.setenv("HBEM_THREADS", "4")
        run_cli(tmp_path, "solve", data, "b.csv")
        a, b = (tmp_path / "a.csv").read_bytes(), (tmp_path / "b.csv").read_bytes()
        assert a == b
        assert b"\r" not in a

    def test_metadata_roundtrip(self, tmp_path, monkeypatch):
        monkeypatch.delenv("SOURCE_DATE_EPOCH", raising=False)
        _, text = run_cli(tmp_path, "solve", {"command": "solve", "epsilon": 0.3})
        meta = read_metadata(text)
        assert RunConfig.from_dict(meta["config"]) == RunConfig.from_dict({"command": "solve", "epsilon": 0.3})
        assert meta["version"]
        assert meta["timestamp"] is None

    def test_timestamp_from_environment(self, tmp_path, monkeypatch):
        monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")
        _, text = run_cli(tmp_path, "solve", {"command": "solve"})
        assert read_metadata(text)["timestamp"] == 1700000000

    def test_command_line_selects_command(self, tmp_path):
        code, text = run_cli(tmp_path, "solve", {"command": "spectrum"})
        assert code == EXIT_PASS
        assert read_metadata(text)["config"]["command"] == "solve"


class TestErrors:
    def test_malformed_json_exit_2(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text('{"command": ')
        assert main(["spectrum", "--config", str(path), "--out", str(tmp_path / "o.csv")]) == EXIT_CONFIG
        assert "line 1" in capsys.readouterr().err
        assert not (tmp_path / "o.csv").exists()

    def test_invalid_field_exit_2(self, tmp_path):
        code, _ = run_cli(tmp_path, "spectrum", {"command": "spectrum", "epsilon": "big"})
        assert code == EXIT_CONFIG

    def test_missing_config_exit_2(self, tmp_path):
        assert main(["solve", "--config", str(tmp_path / "nope.json")]) == EXIT_CONFIG

    def test_missing_mesh_file_exit_2(self, tmp_path):
        code, _ = run_cli(tmp_path, "polarization", {"command": "polarization", "shape": {"kind": "file", "path": "x.off"}})
        assert code == EXIT_CONFIG

    def test_file_shape_reaching_plane(self, tmp_path):
        shutil.copy(CONFIGS / "tetrahedron.off", tmp_path)
        data = {"command": "solve", "shape": {"kind": "file", "path": "tetrahedron.off"}, "z": [0, 0, -0.5], "epsilon": 1.0}
        code, _ = run_cli(tmp_path, "solve", data)
        assert code == EXIT_CONFIG

    def test_expand_needs_plane_points(self, tmp_path):
        code, _ = run_cli(tmp_path, "expand", {"command": "expand", "observation": {"points": [[1, 0, -1]]}})
        assert code == EXIT_CONFIG


class TestPolarizationCommand:
    def test_sphere(self, tmp_path):
        code, text = run_cli(tmp_path, "polarization", {"command": "polarization"})
        assert code == EXIT_PASS
        rows = table(text)
        M = np.zeros((3, 3))
        for r in rows:
            M[int(r["i"]), int(r["j"])] = float(r["M"])
        assert np.abs(M - 2 * math.pi * np.eye(3)).max() <= 0.015 * 2 * math.pi
        assert read_metadata(text)["summary"]["spd"] is True

    def test_ellipsoid_spd(self, tmp_path):
        data = {"command": "polarization", "shape": {"kind": "ellipsoid", "subdivisions": 3, "semi_axes": [1, 1, 2]}}
        code, text = run_cli(tmp_path, "polarization", data)
        assert code == EXIT_PASS
        assert min(read_metadata(text)["summary"]["eigenvalues"]) > 0

    def test_tetrahedron_file_spd(self, tmp_path):
        code, text = main_with_config(tmp_path, "polarization_tetrahedron.json")
        assert code == EXIT_PASS
        assert read_metadata(text)["summary"]["spd"] is True

    def test_unrefined_tetrahedron_fails_honestly(self, tmp_path):
        shutil.copy(CONFIGS / "tetrahedron.off", tmp_path)
        data = {"command": "polarization", "shape": {"kind": "file", "path": "tetrahedron.off"}}
        code, text = run_cli(tmp_path, "polarization", data)
        assert code == EXIT_FAIL
        assert read_metadata(text)["verdict"] == "FAIL"


def main_with_config(tmp_path, name):
    out = tmp_path / "out.csv"
    code = main([json.loads((CONFIGS / name).read_text())["command"], "--config", str(CONFIGS / name), "--out", str(out)])
    return code, out.read_text()


class TestSpectrumCommand:
    def test_depth10_pass(self, tmp_path):
        code, text = main_with_config(tmp_path, "spectrum_depth10.json")
        assert code == EXIT_PASS
        rows = table(text)
        assert len(rows) == 1280
        reals = [float(r["real"]) for r in rows]
        assert reals == sorted(reals, reverse=True)

    def test_shallow_scene_closer_to_minus_half(self, tmp_path):
        base = {"command": "spectrum", "shape": {"kind": "icosphere", "subdivisions": 2}, "epsilon": 1.0}
        code_d, deep = run_cli(tmp_path, "spectrum", {**base, "z": [0, 0, -10]}, "d.csv")
        code_s, shallow = run_cli(tmp_path, "spectrum", {**base, "z": [0, 0, -1.05]}, "s.csv")
        md, ms = read_metadata(deep)["summary"], read_metadata(shallow)["summary"]
        assert ms["min_real"] < md["min_real"]
        assert ms["spectral_radius_A"] < 1


class TestConvergenceCommand:
    def test_default_sweep_passes(self, tmp_path):
        code, text = main_with_config(tmp_path, "convergence.json")
        assert code == EXIT_PASS
        meta = read_metadata(text)
        assert meta["summary"]["slopes"][0] >= 3.5
        assert len(table(text)) == 4

    def test_dropped_dipole_control_fails(self, tmp_path):
        data = json.loads((CONFIGS / "convergence.json").read_text())
        data["drop_dipole"] = True
        code, text = run_cli(tmp_path, "convergence", data)
        assert code == EXIT_FAIL
        assert read_metadata(text)["summary"]["slopes"][0] < 3.5


class TestExpandCommand:
    def test_expand_rows(self, tmp_path):
        code, text = main_with_config(tmp_path, "expand_default.json")
        assert code == EXIT_PASS
        rows = table(text)
        assert len(rows) == 3
        for r in rows:
            assert float(r["monopole"]) == 0.0
            assert float(r["abs_error"]) <= 1e-3 * abs(float(r["u_bie"]))


def test_console_entry_point(tmp_path):
    out = tmp_path / "o.csv"
    proc = subprocess.run(
        [sys.executable, "-m", "hbem.cli", "polarization", "--config", str(CONFIGS / "polarization_tetrahedron.json"), "--out", str(out)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert "PASS" in proc.stderr
    assert out.read_text().startswith("# {")


def test_run_returns_table():
    cfg = RunConfig.from_dict({"command": "polarization", "shape": {"kind": "icosphere", "subdivisions": 1}})
    t = run(cfg)
    assert len(t.rows) == 9
    assert t.to_csv().count("\n") == 11
