"""Command line front end: ``biofilm-fv {run,convergence,check-mesh,gen-mesh}``.

Runs are described by an INI-style file. Recognised sections and keys::

    [problem]     preset = test1 | test2 | custom
    [params]      d1 d2 kappa1 kappa2 kappa3 kappa4 a b MD
    [mesh]        n_cells | file | nx, ny
    [time]        mode = fixed | adaptive, t_end, dt, newton_tol, newton_max_iter,
                  dt_min, dt_max, dt_init, shrink, grow
    [initial]     kind, amplitudes, centers, width, s_amplitude, s_const, m_const
    [output]      dir, snapshot_times
    [monitor]     m0
    [convergence] grids, n_ref, dt, t_end, full_scale, synthetic

Exit codes: 0 success, 1 solver/monitor failure or inadmissible mesh,
2 configuration or input error.
"""

from __future__ import annotations

import argparse
import configparser
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .diagnostics import DiagnosticsRecord
from .errors import (DataError, DomainError, InadmissibleMeshError, InvalidArgumentError,
                     InvariantViolation, MeshParseError, StepFailure)
from .harness import (ConvergenceConfig, InitialData, default_workers, monitor_invariants,
                      run_convergence_study, synthetic_table)
from .mesh import (acute_rectangle_triangulation, build_interval_mesh, build_triangular_mesh,
                   generate_square_mesh, parse_mesh_text, read_mesh_file, validate_admissibility,
                   write_mesh_file)
from .model import ModelParams
from .scheme import State
from .solver import TimeControls, advance_adaptive, advance_fixed

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG = 0, 1, 2

_PARAM_KEYS = ("d1", "d2", "kappa1", "kappa2", "kappa3", "kappa4", "a", "b", "MD")
_TIME_FLOATS = ("newton_tol", "dt_min", "dt_max", "dt_init", "shrink", "grow")


class ConfigError(ValueError):
    pass


def fmt(x) -> str:
    """Shortest round-trip decimal for floats, plain str otherwise."""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    return str(x)


# --- configuration ----------------------------------------------------------------

def _floats(text: str, what: str) -> tuple:
    try:
        return tuple(float(v) for v in text.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"{what}: expected a list of numbers, got {text!r}") from None


@dataclass
class RunConfig:
    preset: str = "test1"
    params: ModelParams = field(default_factory=ModelParams.test1)
    n_cells: int | None = 80
    mesh_file: Path | None = None
    nx: int | None = None
    ny: int | None = None
    controls: TimeControls = field(default_factory=TimeControls)
    t_end: float = 1e-3
    initial: InitialData = field(default_factory=InitialData.test1)
    out_dir: Path = Path("out")
    snapshot_times: tuple = ()
    m0: float | None = None
    convergence: ConvergenceConfig | None = None
    synthetic: bool = False

    @property
    def dim(self) -> int:
        return 1 if self.n_cells is not None else 2

    def build_mesh(self):
        if self.n_cells is not None:
            return build_interval_mesh(self.n_cells)
        if self.mesh_file is not None:
            return read_mesh_file(self.mesh_file)
        return generate_square_mesh(self.nx, self.ny)


def load_config(path) -> RunConfig:
    """Parse and validate a run configuration; raises ConfigError with the offending field."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser()
    cp.optionxform = str  # keep MD upper case
    try:
        cp.read_string(path.read_text(), source=str(path))
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    known = {"problem", "params", "mesh", "time", "initial", "output", "monitor", "convergence"}
    for sec in cp.sections():
        if sec not in known:
            raise ConfigError(f"unknown section [{sec}]")

    def get(sec, key, conv=str, default=None):
        if not cp.has_option(sec, key):
            return default
        raw = cp.get(sec, key)
        try:
            return conv(raw)
        except ValueError:
            raise ConfigError(f"[{sec}] {key}: cannot parse {raw!r}") from None

    preset = get("problem", "preset", default="test1").strip().lower()
    if preset not in ("test1", "test2", "custom"):
        raise ConfigError(f"[problem] preset: unknown preset {preset!r}")
    try:
        base = ModelParams.test2() if preset == "test2" else ModelParams.test1()
        overrides = {k: get("params", k, float) for k in _PARAM_KEYS if cp.has_option("params", k)}
        if cp.has_section("params"):
            for k in cp.options("params"):
                if k not in _PARAM_KEYS:
                    raise ConfigError(f"[params] unknown key {k!r}")
        params = base.with_(**overrides)
    except (DomainError, InvalidArgumentError) as exc:
        raise ConfigError(f"[params] {exc}") from None

    cfg = RunConfig(preset=preset, params=params)
    dir_ = path.parent
    if cp.has_option("mesh", "file"):
        mf = Path(get("mesh", "file"))
        cfg.mesh_file = mf if mf.is_absolute() else dir_ / mf
        if not cfg.mesh_file.is_file():
            raise ConfigError(f"[mesh] file: mesh file not found: {cfg.mesh_file}")
        cfg.n_cells = None
    elif cp.has_option("mesh", "nx") or cp.has_option("mesh", "ny") or preset == "test2":
        cfg.nx = get("mesh", "nx", int, 16)
        cfg.ny = get("mesh", "ny", int, 28)
        cfg.n_cells = None
    else:
        cfg.n_cells = get("mesh", "n_cells", int, 80)
        if cfg.n_cells < 1:
            raise ConfigError("[mesh] n_cells must be >= 1")

    cfg.t_end = get("time", "t_end", float, 0.1 if preset == "test2" else 1e-3)
    if not (math.isfinite(cfg.t_end) and cfg.t_end > 0):
        raise ConfigError("[time] t_end must be positive")
    kw = {k: get("time", k, float) for k in _TIME_FLOATS if cp.has_option("time", k)}
    if cp.has_option("time", "newton_max_iter"):
        kw["newton_max_iter"] = get("time", "newton_max_iter", int)
    mode = get("time", "mode", default="fixed" if cfg.dim == 1 else "adaptive").strip().lower()
    kw["mode"] = mode
    if cp.has_option("time", "dt"):
        kw["dt"] = get("time", "dt", float)
    elif mode == "fixed":
        kw["dt"] = 1e-6
    try:
        cfg.controls = TimeControls.for_dim(cfg.dim, **kw)
    except InvalidArgumentError as exc:
        raise ConfigError(f"[time] {exc}") from None

    kind = get("initial", "kind", default="test2" if preset == "test2" else "test1").strip().lower()
    if kind not in ("test1", "test2", "constant"):
        raise ConfigError(f"[initial] kind: unknown kind {kind!r}")
    init_kw = {}
    if cp.has_option("initial", "amplitudes"):
        init_kw["amplitudes"] = _floats(get("initial", "amplitudes"), "[initial] amplitudes")
    if cp.has_option("initial", "centers"):
        c = _floats(get("initial", "centers"), "[initial] centers")
        if kind == "test2":
            if len(c) % 2:
                raise ConfigError("[initial] centers: 2D centers need x y pairs")
            c = tuple(zip(c[::2], c[1::2]))
        init_kw["centers"] = c
    for k in ("width", "s_amplitude", "s_const", "m_const"):
        if cp.has_option("initial", k):
            init_kw[k] = get("initial", k, float)
    if kind == "test2":
        cfg.initial = InitialData.test2(**init_kw)
    else:
        cfg.initial = InitialData(kind=kind, **init_kw)
    if len(cfg.initial.amplitudes) != len(cfg.initial.centers):
        raise ConfigError("[initial] amplitudes and centers differ in length")

    cfg.out_dir = Path(get("output", "dir", default="out"))
    if cp.has_option("output", "snapshot_times"):
        cfg.snapshot_times = _floats(get("output", "snapshot_times"), "[output] snapshot_times")
    cfg.m0 = get("monitor", "m0", float)

    if cp.has_section("convergence"):
        ckw = {}
        if cp.has_option("convergence", "grids"):
            ckw["grids"] = tuple(int(g) for g in _floats(get("convergence", "grids"), "[convergence] grids"))
        for k, conv in (("n_ref", int), ("dt", float), ("t_end", float)):
            if cp.has_option("convergence", k):
                ckw[k] = get("convergence", k, conv)
        ckw["params"] = params
        ckw["initial"] = cfg.initial
        ckw["workers"] = default_workers()
        full = get("convergence", "full_scale", _bool, False)
        cfg.convergence = ConvergenceConfig.full_scale(**{k: v for k, v in ckw.items()
                                                             if k not in ("grids", "n_ref", "dt")}) \
            if full else ConvergenceConfig(**ckw)
        cfg.synthetic = get("convergence", "synthetic", _bool, False)
    return cfg


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(text)


# --- output -------------------------------------------------------------------------

def write_snapshot(path: Path, mesh, state: State) -> None:
    cols = ["cell_id", "x"] + (["y"] if mesh.dim == 2 else []) + ["S", "M"]
    lines = [",".join(cols)]
    centers = mesh.centers.reshape(mesh.n_cells, -1)
    for K in range(mesh.n_cells):
        vals = [str(K)] + [fmt(float(c)) for c in centers[K]] + [fmt(float(state.S[K])), fmt(float(state.M[K]))]
        lines.append(",".join(vals))
    path.write_text("\n".join(lines) + "\n")


def snapshot_name(t: float) -> str:
    return f"snap_{float(t)!r}.csv"


def write_diagnostics(path: Path, records) -> None:
    cols = DiagnosticsRecord.columns()
    lines = [",".join(cols)]
    for rec in records:
        lines.append(",".join("" if getattr(rec, c) is None else fmt(getattr(rec, c)) for c in cols))
    path.write_text("\n".join(lines) + "\n")


def write_summary(path: Path, items: dict) -> None:
    path.write_text("".join(f"{k}={fmt(v)}\n" for k, v in items.items()))


# --- subcommands ------------------------------------------------------------------------

def cmd_run(config_path, out_dir=None, snapshot_times=None) -> int:
    try:
        cfg = load_config(config_path)
        if snapshot_times is not None:
            cfg.snapshot_times = tuple(snapshot_times)
        mesh = cfg.build_mesh()
        state0 = cfg.initial.project(mesh)
    except (ConfigError, MeshParseError, InadmissibleMeshError, DataError, InvalidArgumentError,
            DomainError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(out_dir) if out_dir is not None else cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)

    t_end = cfg.t_end
    wanted = sorted({float(t) for t in cfg.snapshot_times if 0 < t < t_end})
    records = []
    written = {0.0}
    write_snapshot(out / snapshot_name(0.0), mesh, state0)

    if cfg.controls.mode == "fixed":
        dt = cfg.controls.dt
        n_steps = max(1, int(round(t_end / dt)))
        raw = advance_fixed(mesh, cfg.params, state0, dt, n_steps, cfg.controls)
    else:
        raw = advance_adaptive(mesh, cfg.params, state0, cfg.controls, t_end, stops=wanted)

    def stream():
        pending = list(wanted)
        for item in raw:
            state, report, rec = item
            records.append(rec)
            # fixed steps may not hit a requested time exactly; take the nearest step
            while pending and state.t >= pending[0] - 0.5 * report.dt_used:
                write_snapshot(out / snapshot_name(pending[0]), mesh, state)
                written.add(pending.pop(0))
            yield item

    status, message = "ok", ""
    report = None
    try:
        report = monitor_invariants(mesh, cfg.params, state0, stream(), m0=cfg.m0)
    except (StepFailure, InvariantViolation) as exc:
        status, message = "failed", str(exc)
    final = report.final_state if report is not None else None
    if report is not None and not report.passed:
        status = "failed"
        message = "; ".join(f"step {k}, cell {K}: {msg}" for k, K, msg in report.failures[:5])
    write_diagnostics(out / "diag.csv", records)
    if final is not None:
        write_snapshot(out / snapshot_name(t_end), mesh, final)

    summary = {"status": status, "preset": cfg.preset, "dim": mesh.dim, "n_cells": mesh.n_cells,
               "steps": len(records), "t_final": float(records[-1].t) if records else 0.0}
    if final is not None:
        summary.update(S_min=float(final.S.min()), S_max=float(final.S.max()),
                       M_min=float(final.M.min()), M_max=float(final.M.max()),
                       biomass=float(np.dot(mesh.cell_measure, final.M)))
    if report is not None:
        summary.update(sum_dt_F_H1_sq=report.sum_dt_F_H1_sq, sum_dt_S_H1_sq=report.sum_dt_S_H1_sq)
        if report.lower_bound_ok is not None:
            summary["lower_bound_ok"] = report.lower_bound_ok
            summary["min_lower_margin"] = report.min_lower_margin
        if report.entropy_slope is not None:
            summary["entropy_slope"] = report.entropy_slope
    if message:
        summary["message"] = message.replace("\n", " ")
    write_summary(out / "summary.txt", summary)
    if status != "ok":
        print(f"error: {message}", file=sys.stderr)
        return EXIT_FAILURE
    print(f"run finished: {len(records)} steps, t={fmt(float(summary['t_final']))}, output in {out}")
    return EXIT_OK


def cmd_convergence(config_path=None, out_dir=None, synthetic=False) -> int:
    try:
        cfg = load_config(config_path) if config_path is not None else RunConfig()
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(out_dir) if out_dir is not None else cfg.out_dir
    if synthetic or cfg.synthetic:
        table = synthetic_table()
    else:
        conv = cfg.convergence or ConvergenceConfig(workers=default_workers())
        if len(conv.grids) < 2:
            print("error: need >= 2 grids", file=sys.stderr)
            return EXIT_CONFIG
        try:
            table = run_convergence_study(conv)
        except InvalidArgumentError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        except (StepFailure, InvariantViolation) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_FAILURE
    out.mkdir(parents=True, exist_ok=True)
    (out / "convergence.csv").write_text(table.to_csv())
    print(table.summary())
    return EXIT_OK


def cmd_check_mesh(mesh_path) -> int:
    path = Path(mesh_path)
    try:
        nodes, tris = parse_mesh_text(path.read_text())
    except OSError as exc:
        print(f"error: cannot read mesh file {path}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MeshParseError as exc:
        print(f"error: {path}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        mesh = build_triangular_mesh(nodes, tris)
    except InadmissibleMeshError as exc:
        print("admissible=false")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    report = validate_admissibility(mesh)
    print(f"n_cells={mesh.n_cells}")
    print(f"n_edges={mesh.n_edges}")
    print(f"total_measure={fmt(mesh.total_measure)}")
    for line in report.as_lines():
        print(line)
    return EXIT_OK if report.admissible else EXIT_FAILURE


def cmd_gen_mesh(nx: int, ny: int, out_path) -> int:
    try:
        nodes, tris = acute_rectangle_triangulation(nx, ny)
    except InvalidArgumentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_mesh_file(out, nodes, tris)
    print(f"wrote {len(tris)} triangles to {out}")
    return EXIT_OK


# --- entry point ---------------------------------------------------------------------------

def _times(text: str):
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated times, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="biofilm-fv", description="Finite volume biofilm solver")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one simulation")
    run.add_argument("--config", required=True, help="configuration file")
    run.add_argument("--out", help="output directory (overrides [output] dir)")
    run.add_argument("--snapshot-times", type=_times, help="comma-separated snapshot times")

    conv = sub.add_parser("convergence", help="spatial convergence study in 1D")
    conv.add_argument("--config", help="configuration file")
    conv.add_argument("--out", help="output directory")
    conv.add_argument("--synthetic", action="store_true", help="fit exact h^2 data instead of solving")

    chk = sub.add_parser("check-mesh", help="validate a triangular mesh file")
    chk.add_argument("mesh", help="mesh file")

    gen = sub.add_parser("gen-mesh", help="write an acute triangulation of the unit square")
    gen.add_argument("--nx", type=int, default=16)
    gen.add_argument("--ny", type=int, default=28)
    gen.add_argument("--out", required=True, help="mesh file to write")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return cmd_run(args.config, args.out, args.snapshot_times)
    if args.command == "convergence":
        return cmd_convergence(args.config, args.out, args.synthetic)
    if args.command == "check-mesh":
        return cmd_check_mesh(args.mesh)
    return cmd_gen_mesh(args.nx, args.ny, args.out)


if __name__ == "__main__":
    sys.exit(main())
