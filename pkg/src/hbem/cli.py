"""Command-line driver: ``hbem <command> --config run.json --out result.csv``.

A run is fully described by one JSON document (see :class:`RunConfig`).  The
CSV output starts with a ``#``-prefixed JSON metadata line that echoes the
normalized config, followed by a header row and one row per result; every row
carries the config fingerprint.  Exit codes: 0 PASS, 1 numeric FAIL, 2 bad
config.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .asymptotics import expansion_general, loglog_slope, polarization_tensor
from .field import evaluate_points
from .geometry import CavityScene, GeometryError, SurfaceMesh, ellipsoid, icosphere, load_mesh, refine
from .solve import (
    BoundaryField,
    SeriesDivergenceError,
    TraceSystem,
    constant_datum,
    pressure_datum,
    solve_trace,
)
from .spectral import spectral_radius_A, spectrum

__all__ = ["COMMANDS", "ConfigError", "RunConfig", "ResultTable", "run", "main"]

COMMANDS = ("solve", "expand", "polarization", "spectrum", "convergence")
CONVERGENCE_THRESHOLD = 3.5
METHOD_TOL = 1e-8
POLARIZATION_TOL = 0.015

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


class ConfigError(ValueError):
    """Invalid run configuration; the message names the offending field or line."""


def _fail(path: str, msg: str):
    raise ConfigError(f"config field '{path}': {msg}")


def _real(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        _fail(path, "must be a finite number")
    return float(value)


def _vec3(value, path: str) -> tuple[float, float, float]:
    if not isinstance(value, (list, tuple)) or len(value) != 3:
        _fail(path, "must be a list of 3 numbers")
    return tuple(_real(v, f"{path}[{i}]") for i, v in enumerate(value))


def _int(value, path: str, lo: int = 0) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < lo:
        _fail(path, f"must be an integer >= {lo}")
    return value


def _keys(d, path: str, allowed: set[str]) -> dict:
    if not isinstance(d, dict):
        _fail(path, "must be an object")
    extra = sorted(set(d) - allowed)
    if extra:
        _fail(f"{path}.{extra[0]}" if path else extra[0], "unknown key")
    return d


def _shape(d) -> dict:
    d = _keys(d, "shape", {"kind", "subdivisions", "radius", "semi_axes", "path", "refine"})
    kind = d.get("kind", "icosphere")
    if kind == "icosphere":
        r = _real(d.get("radius", 1.0), "shape.radius")
        if r <= 0:
            _fail("shape.radius", "must be positive")
        return {"kind": kind, "subdivisions": _int(d.get("subdivisions", 3), "shape.subdivisions"), "radius": r}
    if kind == "ellipsoid":
        axes = _vec3(d.get("semi_axes"), "shape.semi_axes")
        if min(axes) <= 0:
            _fail("shape.semi_axes", "must be positive")
        return {"kind": kind, "subdivisions": _int(d.get("subdivisions", 3), "shape.subdivisions"), "semi_axes": list(axes)}
    if kind == "file":
        if not isinstance(d.get("path"), str) or not d["path"]:
            _fail("shape.path", "must be a file path")
        return {"kind": kind, "path": d["path"], "refine": _int(d.get("refine", 0), "shape.refine")}
    _fail("shape.kind", "must be one of icosphere, ellipsoid, file")


def _datum(d) -> dict:
    d = _keys(d, "datum", {"kind", "p", "value"})
    kind = d.get("kind", "pressure")
    if kind == "pressure":
        return {"kind": kind, "p": list(_vec3(d.get("p", [0.0, 0.0, 1.0]), "datum.p"))}
    if kind == "constant":
        return {"kind": kind, "value": _real(d.get("value", 1.0), "datum.value")}
    if kind == "zero":
        return {"kind": kind}
    _fail("datum.kind", "must be one of pressure, constant, zero")


def _observation(d) -> dict:
    d = _keys(d, "observation", {"points", "grid"})
    if ("points" in d) == ("grid" in d):
        _fail("observation", "give exactly one of 'points' or 'grid'")
    if "points" in d:
        pts = d["points"]
        if not isinstance(pts, list) or not pts:
            _fail("observation.points", "must be a non-empty list")
        out = [list(_vec3(p, f"observation.points[{i}]")) for i, p in enumerate(pts)]
        for i, p in enumerate(out):
            if p[2] > 0:
                _fail(f"observation.points[{i}]", "must lie in the lower half-space (x3 <= 0)")
        return {"points": out}
    g = _keys(d["grid"], "observation.grid", {"x", "y"})
    grid = {}
    for axis in ("x", "y"):
        bounds = g.get(axis)
        if not isinstance(bounds, list) or len(bounds) != 3:
            _fail(f"observation.grid.{axis}", "must be [lo, hi, count]")
        lo, hi = _real(bounds[0], f"observation.grid.{axis}[0]"), _real(bounds[1], f"observation.grid.{axis}[1]")
        n = _int(bounds[2], f"observation.grid.{axis}[2]", lo=1)
        if n > 1 and not hi > lo:
            _fail(f"observation.grid.{axis}", "needs hi > lo")
        grid[axis] = [lo, hi, n]
    return {"grid": grid}


@dataclass(frozen=True)
class RunConfig:
    command: str
    shape: dict = field(default_factory=lambda: {"kind": "icosphere", "subdivisions": 3, "radius": 1.0})
    z: tuple = (0.0, 0.0, -2.0)
    epsilon: float = 0.25
    delta0: float | None = None
    datum: dict = field(default_factory=lambda: {"kind": "pressure", "p": [0.0, 0.0, 1.0]})
    observation: dict = field(default_factory=lambda: {"points": [[0.5, 0.0, 0.0]]})
    epsilon_sweep: tuple | None = None
    compare_methods: bool = True
    image: bool = True
    drop_dipole: bool = False
    output: str | None = None

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RunConfig":
        d = _keys(d, "", set(cls.__dataclass_fields__))
        if d.get("command") not in COMMANDS:
            _fail("command", f"must be one of {', '.join(COMMANDS)}")
        kw: dict[str, Any] = {"command": d["command"]}
        kw["shape"] = _shape(d.get("shape", {}))
        kw["z"] = _vec3(d.get("z", [0.0, 0.0, -2.0]), "z")
        kw["epsilon"] = _real(d.get("epsilon", 0.25), "epsilon")
        if kw["epsilon"] <= 0:
            _fail("epsilon", "must be positive")
        if d.get("delta0") is not None:
            kw["delta0"] = _real(d["delta0"], "delta0")
            if kw["delta0"] <= 0:
                _fail("delta0", "must be positive")
        kw["datum"] = _datum(d.get("datum", {}))
        kw["observation"] = _observation(d.get("observation", {"points": [[0.5, 0.0, 0.0]]}))
        sweep = d.get("epsilon_sweep")
        if sweep is not None:
            if not isinstance(sweep, list):
                _fail("epsilon_sweep", "must be a list")
            vals = [_real(v, f"epsilon_sweep[{i}]") for i, v in enumerate(sweep)]
            if len(vals) < 3:
                _fail("epsilon_sweep", "need >= 3 points")
            if any(v <= 0 for v in vals) or any(b >= a for a, b in zip(vals, vals[1:])):
                _fail("epsilon_sweep", "values must be positive and strictly decreasing")
            kw["epsilon_sweep"] = tuple(vals)
        elif d["command"] == "convergence":
            _fail("epsilon_sweep", "required for the convergence command (need >= 3 points)")
        for flag in ("compare_methods", "image", "drop_dipole"):
            if flag in d:
                if not isinstance(d[flag], bool):
                    _fail(flag, "must be true or false")
                kw[flag] = d[flag]
        if d.get("output") is not None:
            if not isinstance(d["output"], str):
                _fail("output", "must be a path string")
            kw["output"] = d["output"]
        cfg = cls(**kw)
        if cfg.command != "polarization":
            cfg._check_depth()
        return cfg

    def _check_depth(self) -> None:
        depth = -self.z[2]
        if depth <= 0:
            _fail("z", "cavity center must lie below the plane (z[2] < 0)")
        if self.delta0 is not None and depth < self.delta0:
            _fail("z", f"|z_3| = {depth} is smaller than delta0 = {self.delta0}")
        if self.shape["kind"] == "icosphere":
            rho = self.shape["radius"]
        elif self.shape["kind"] == "ellipsoid":
            rho = max(self.shape["semi_axes"])
        else:
            return  # checked once the file is loaded
        for i, eps in enumerate(self.epsilons):
            if not eps * rho < depth:
                _fail("epsilon" if self.epsilon_sweep is None else f"epsilon_sweep[{i}]",
                      f"cavity of size {eps * rho} reaches the plane from depth {depth}")

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config line {exc.lineno} column {exc.colno}: {exc.msg}") from None
        return cls.from_dict(data)

    @property
    def epsilons(self) -> tuple:
        return self.epsilon_sweep if self.epsilon_sweep is not None else (self.epsilon,)

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "shape": self.shape,
            "z": list(self.z),
            "epsilon": self.epsilon,
            "delta0": self.delta0,
            "datum": self.datum,
            "observation": self.observation,
            "epsilon_sweep": None if self.epsilon_sweep is None else list(self.epsilon_sweep),
            "compare_methods": self.compare_methods,
            "image": self.image,
            "drop_dipole": self.drop_dipole,
            "output": self.output,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @property
    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]

    def base_mesh(self, base_dir: Path | None = None) -> SurfaceMesh:
        s = self.shape
        try:
            if s["kind"] == "icosphere":
                return icosphere(s["subdivisions"], s["radius"])
            if s["kind"] == "ellipsoid":
                return ellipsoid(s["subdivisions"], s["semi_axes"])
            path = Path(s["path"])
            if not path.is_absolute() and base_dir is not None:
                path = base_dir / path
            return refine(load_mesh(path), s["refine"])
        except (GeometryError, OSError) as exc:
            raise ConfigError(f"config field 'shape': {exc}") from None

    def points(self) -> np.ndarray:
        obs = self.observation
        if "points" in obs:
            return np.array(obs["points"], dtype=float)
        gx, gy = obs["grid"]["x"], obs["grid"]["y"]
        xs = np.linspace(gx[0], gx[1], gx[2])
        ys = np.linspace(gy[0], gy[1], gy[2])
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel(), np.zeros(X.size)])


@dataclass
class ResultTable:
    columns: list
    rows: list
    config: RunConfig
    mesh_fingerprint: str
    verdict: str
    summary: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.verdict == "PASS"

    def metadata(self) -> dict:
        epoch = os.environ.get("SOURCE_DATE_EPOCH")
        return {
            "config": self.config.to_dict(),
            "config_fingerprint": self.config.fingerprint,
            "mesh_fingerprint": self.mesh_fingerprint,
            "summary": self.summary,
            "timestamp": int(epoch) if epoch and epoch.isdigit() else None,
            "verdict": self.verdict,
            "version": __version__,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("# " + json.dumps(self.metadata(), sort_keys=True, separators=(",", ":")) + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["config"] + list(self.columns))
        fp = self.config.fingerprint
        for row in self.rows:
            w.writerow([fp] + [_fmt(v) for v in row])
        return buf.getvalue()


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def read_metadata(text: str) -> dict:
    first = text.split("\n", 1)[0]
    if not first.startswith("# "):
        raise ValueError("missing metadata line")
    return json.loads(first[2:])


def _scene(cfg: RunConfig, base: SurfaceMesh, eps: float) -> CavityScene:
    try:
        return CavityScene(base, cfg.z, eps, cfg.delta0)
    except GeometryError as exc:
        raise ConfigError(f"config field 'z': {exc}") from None


def _datum_on(cfg: RunConfig, mesh: SurfaceMesh) -> BoundaryField:
    d = cfg.datum
    if d["kind"] == "pressure":
        return pressure_datum(mesh, d["p"])
    return constant_datum(mesh, d["value"] if d["kind"] == "constant" else 0.0)


def cmd_solve(cfg: RunConfig, base: SurfaceMesh) -> ResultTable:
    scene = _scene(cfg, base, cfg.epsilon)
    system = TraceSystem(scene.mesh)
    g = _datum_on(cfg, scene.mesh)
    f, report = solve_trace(scene, g, system=system)
    pts = cfg.points()
    u = evaluate_points(pts, scene, f, g)
    summary = {"residual_direct": report.residual}
    ok = bool(np.all(np.isfinite(u))) and report.residual <= METHOD_TOL
    columns = ["x1", "x2", "x3", "u"]
    if cfg.compare_methods:
        try:
            fs, rs = solve_trace(scene, g, "neumann_series", system=system)
        except SeriesDivergenceError as exc:
            summary["neumann_series"] = str(exc)
            ok = False
        else:
            diff = float(np.max(np.abs(fs.values - f.values), initial=0.0))
            summary.update(residual_series=rs.residual, series_terms=rs.iterations, max_trace_difference=diff)
            ok = ok and diff <= METHOD_TOL
    rows = [[*p, v] for p, v in zip(pts.tolist(), u.tolist())]
    return ResultTable(columns, rows, cfg, scene.mesh.fingerprint, "PASS" if ok else "FAIL", summary)


def _expansion_rows(cfg, base, eps, pts, B_system):
    scene = _scene(cfg, base, eps)
    g_hat = _datum_on(cfg, base)
    g = g_hat.on(scene.mesh)
    f, _ = solve_trace(scene, g)
    u = evaluate_points(pts, scene, f, g)
    rows = []
    for p, ui in zip(pts, u):
        e = expansion_general(p, scene, g_hat, system=B_system)
        model = e.leading_monopole if cfg.drop_dipole else e.total
        rows.append((scene, p, float(ui), e, model))
    return rows


def _plane_points(cfg: RunConfig) -> np.ndarray:
    pts = cfg.points()
    if np.any(pts[:, 2] != 0.0):
        raise ConfigError("config field 'observation': expansion points must lie on the plane (x3 = 0)")
    return pts


def cmd_expand(cfg: RunConfig, base: SurfaceMesh) -> ResultTable:
    pts = _plane_points(cfg)
    B_system = TraceSystem(base, image=False)
    out = _expansion_rows(cfg, base, cfg.epsilon, pts, B_system)
    rows = [[*p.tolist(), u, e.leading_monopole, e.dipole, model, abs(u - model)] for _, p, u, e, model in out]
    ok = all(math.isfinite(r[-1]) for r in rows)
    summary = {"max_abs_error": max(r[-1] for r in rows)}
    columns = ["x1", "x2", "x3", "u_bie", "monopole", "dipole", "expansion", "abs_error"]
    return ResultTable(columns, rows, cfg, out[0][0].mesh.fingerprint, "PASS" if ok else "FAIL", summary)


def cmd_convergence(cfg: RunConfig, base: SurfaceMesh) -> ResultTable:
    pts = _plane_points(cfg)
    B_system = TraceSystem(base, image=False)
    rows, errors = [], {i: [] for i in range(len(pts))}
    fingerprints = []
    for eps in cfg.epsilon_sweep:
        out = _expansion_rows(cfg, base, eps, pts, B_system)
        fingerprints.append(out[0][0].mesh.fingerprint)
        for i, (_, p, u, e, model) in enumerate(out):
            err = abs(u - model)
            errors[i].append(err)
            rows.append([eps, *p.tolist(), u, model, err])
    slopes = []
    for i in range(len(pts)):
        if min(errors[i]) > 0:
            slopes.append(loglog_slope(cfg.epsilon_sweep, errors[i]))
        else:
            slopes.append(float("nan"))
    ok = all(s >= CONVERGENCE_THRESHOLD for s in slopes)
    summary = {"slopes": slopes, "threshold": CONVERGENCE_THRESHOLD, "mesh_fingerprints": fingerprints}
    columns = ["epsilon", "x1", "x2", "x3", "u_bie", "expansion", "abs_error"]
    return ResultTable(columns, rows, cfg, base.fingerprint, "PASS" if ok else "FAIL", summary)


def cmd_polarization(cfg: RunConfig, base: SurfaceMesh) -> ResultTable:
    M = polarization_tensor(base)
    rows = [[i, j, float(M.tensor[i, j]), float(M.raw_tensor[i, j])] for i in range(3) for j in range(3)]
    ok = M.is_spd
    summary = {
        "symmetry_defect": M.symmetry_defect,
        "eigenvalues": list(M.eigenvalues),
        "spd": M.is_spd,
        "panel_count": M.panel_count,
    }
    if cfg.shape["kind"] == "icosphere":
        ref = 2.0 * math.pi * cfg.shape["radius"] ** 3
        dev = float(np.abs(M.tensor - ref * np.eye(3)).max() / ref)
        summary.update(sphere_reference=ref, sphere_relative_deviation=dev)
        ok = ok and dev <= POLARIZATION_TOL
    return ResultTable(["i", "j", "M", "M_raw"], rows, cfg, base.fingerprint, "PASS" if ok else "FAIL", summary)


def cmd_spectrum(cfg: RunConfig, base: SurfaceMesh) -> ResultTable:
    scene = _scene(cfg, base, cfg.epsilon)
    report = spectrum(scene, image=cfg.image)
    rows = [[k, re, im] for k, (re, im) in enumerate(report.eigenvalues)]
    ok = report.inclusion_ok()
    summary = {
        "min_real": report.min_real,
        "max_real": report.max_real,
        "max_imag": report.max_imag,
        "imag_flagged": report.imag_flagged,
        "count_near_half": report.count_near_half,
        "spectral_radius_A": spectral_radius_A(report),
    }
    return ResultTable(["index", "real", "imag"], rows, cfg, scene.mesh.fingerprint, "PASS" if ok else "FAIL", summary)


_DRIVERS = {
    "solve": cmd_solve,
    "expand": cmd_expand,
    "polarization": cmd_polarization,
    "spectrum": cmd_spectrum,
    "convergence": cmd_convergence,
}


def run(cfg: RunConfig, base_dir: Path | None = None) -> ResultTable:
    base = cfg.base_mesh(base_dir)
    if cfg.command != "polarization":
        depth = -cfg.z[2]
        for eps in cfg.epsilons:
            if not eps * base.circumradius < depth:
                raise ConfigError(
                    f"config field 'epsilon': cavity of size {eps * base.circumradius} reaches the plane from depth {depth}"
                )
    return _DRIVERS[cfg.command](cfg, base)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="hbem", description="Half-space cavity boundary element runs.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="JSON run configuration")
    parser.add_argument("--out", help="CSV output path (default: config 'output', else stdout)")
    args = parser.parse_args(argv)

    try:
        path = Path(args.config)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config line {exc.lineno} column {exc.colno}: {exc.msg}") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        data["command"] = args.command
        cfg = RunConfig.from_dict(data)
        table = run(cfg, path.parent)
    except OSError as exc:
        print(f"hbem: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"hbem: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    text = table.to_csv()
    out = args.out or cfg.output
    if out:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    print(f"hbem {cfg.command}: {table.verdict}", file=sys.stderr)
    return EXIT_PASS if table.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
