"""
Command-line front end, run configuration and serialization.

    meevc2d <benchmark> --config <file> [--out DIR] [--seed S] [--dt X]
            [--re X|inf] [--kk K] [--nn N] [--cc C]

Exit codes: 0 success, 2 configuration error, 3 solver failure, 4 I/O error.
Set MEEVC2D_LOG (e.g. DEBUG) for verbose logging.
"""
import argparse
import csv
import json
import logging
import math
import os
import platform
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import bench
from .assembly import QuadConfig
from .derham import WALLS
from .diagnostics import CSV_COLUMNS
from .mesh import C_MAX, MeshConfig, build_mesh
from .solver import (BCConfig, MidpointSolver, NewtonFailure, SingularSystemError,
                     SolverConfig, TransientAborted, run_transient)

log = logging.getLogger("meevc2d")

BENCHMARKS = ("tgv", "shear-layer", "dipole", "trilinear-table", "custom")
EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4

COMMON = {"benchmark": None, "seed": 0, "out": "runs", "newton_tol": 1e-12,
          "newton_max_iter": 30, "gauge": "auto", "NQ": None}

DEFAULTS = {
    "tgv": {"N_list": [1, 2, 3], "K_list": [4, 6, 8], "c_list": [0.0, 0.25],
            "dt": 1 / 25, "Re": 100.0, "t_end": 1.0},
    "shear-layer": {"K": 12, "N": 2, "c": 0.0, "dt": 1 / 50, "Re": math.inf, "t_end": 8.0,
                    "snapshot_times": [0.0, 4.0, 8.0], "sample_n": 201},
    "dipole": {"K": 24, "N": 2, "beta": 1.2, "dt": 1 / 200, "Re": 625.0, "t_end": 1.0,
               "snapshot_times": [0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
               "trace_times": [0.4, 0.6, 1.0], "sample_n": 201},
    "trilinear-table": {"K": 12, "c_list": [0.0, 0.25], "N_list": [2, 3, 4],
                        "NQ_list": [1, 2, 3, 4, 5, 6]},
    "custom": {"K": 8, "N": 2, "c": 0.0, "alpha": 1.0, "periodic": [True, True],
               "offset": [0.0, 0.0], "dt": 0.01, "Re": None, "t_end": 0.1,
               "initial": "tgv", "bc": None, "snapshot_times": [], "sample_n": 101},
}
INITIAL = ("tgv", "shear-layer", "dipole", "rest")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    benchmark: str
    params: dict = field(default_factory=dict)

    @property
    def out(self):
        return Path(self.params["out"])

    @property
    def seed(self):
        return self.params["seed"]

    def echo(self):
        """JSON-safe copy of every resolved parameter."""
        return {"benchmark": self.benchmark, **{k: _json_safe(v) for k, v in self.params.items()}}


def _json_safe(v):
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    if isinstance(v, (list, tuple)):
        return [_json_safe(x) for x in v]
    if isinstance(v, dict):
        return {k: _json_safe(x) for k, x in v.items()}
    return v


def _as_re(v):
    if v is None:
        return None
    if isinstance(v, str):
        if v.strip().lower() in ("inf", "infinity"):
            return math.inf
        try:
            v = float(v)
        except ValueError:
            raise ConfigError(f"Re must be a number or 'inf', got {v!r}") from None
    v = float(v)
    if not v > 0:
        raise ConfigError(f"Re must be positive, got {v}")
    return v


def load_config_file(path):
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    try:
        data = json.loads(text) if p.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError("config file must contain a mapping")
    return data


def parse_config(benchmark, data=None, overrides=None):
    """Validate a raw mapping (plus CLI overrides) into a RunConfig."""
    if benchmark not in BENCHMARKS:
        raise ConfigError(f"unknown benchmark {benchmark!r}; choose from {BENCHMARKS}")
    data = dict(data or {})
    allowed = {**COMMON, **DEFAULTS[benchmark]}
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown configuration keys for {benchmark}: {unknown}")
    if data.get("benchmark") not in (None, benchmark):
        raise ConfigError(f"config is for {data['benchmark']!r}, not {benchmark!r}")
    params = {**allowed, **data}
    for k, v in (overrides or {}).items():
        if v is None:
            continue
        if k not in allowed:
            raise ConfigError(f"option --{k} does not apply to {benchmark}")
        params[k] = v
    params["benchmark"] = benchmark
    _validate(benchmark, params)
    return RunConfig(benchmark, params)


def _positive_int(params, key):
    v = params[key]
    if isinstance(v, bool) or int(v) != v or v < 1:
        raise ConfigError(f"{key} must be a positive integer, got {v!r}")
    params[key] = int(v)


def _check_c(c):
    if not 0.0 <= float(c) <= C_MAX:
        raise ConfigError(f"deformation factor c must lie in [0, {C_MAX}], got {c}")


def _validate(benchmark, p):
    try:
        p["seed"] = int(p["seed"])
        for key in ("newton_tol", "dt", "t_end"):
            if key in p:
                p[key] = float(p[key])
                if not p[key] > 0:
                    raise ConfigError(f"{key} must be positive")
        _positive_int(p, "newton_max_iter")
        if p["NQ"] is not None:
            _positive_int(p, "NQ")
        if p["gauge"] not in ("auto", "mean-zero", "pin"):
            raise ConfigError("gauge must be auto, mean-zero or pin")
        if "Re" in p:
            p["Re"] = _as_re(p["Re"])
            if p["Re"] is None:
                raise ConfigError("Re is required (use 'inf' for an inviscid run)")
        for key in ("K", "N", "sample_n"):
            if key in p:
                _positive_int(p, key)
        if "c" in p:
            p["c"] = float(p["c"])
            _check_c(p["c"])
        for key in ("c_list",):
            if key in p:
                p[key] = [float(c) for c in p[key]]
                for c in p[key]:
                    _check_c(c)
        for key in ("N_list", "K_list", "NQ_list"):
            if key in p:
                vals = list(p[key])
                if not vals or any(isinstance(v, bool) or int(v) != v or v < 1 for v in vals):
                    raise ConfigError(f"{key} must be a nonempty list of positive integers")
                p[key] = [int(v) for v in vals]
        if benchmark == "tgv" and len(p["K_list"]) < 2:
            raise ConfigError("K_list needs at least two meshes to measure rates")
        for key in ("snapshot_times", "trace_times"):
            if key in p:
                p[key] = [float(t) for t in p[key]]
        if benchmark == "custom":
            _validate_custom(p)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def _validate_custom(p):
    if p["initial"] not in INITIAL:
        raise ConfigError(f"initial must be one of {INITIAL}")
    per = p["periodic"]
    per = [bool(per)] * 2 if isinstance(per, bool) else [bool(x) for x in per]
    p["periodic"] = per
    p["alpha"] = float(p["alpha"])
    p["offset"] = [float(o) for o in p["offset"]]
    mesh_cfg = MeshConfig(p["K"], c=p["c"], alpha=p["alpha"], periodic=tuple(per),
                          offset=tuple(p["offset"]))
    bc = p["bc"] or {}
    keys = {"normal", "pressure", "vorticity", "tangential"}
    if set(bc) - keys:
        raise ConfigError(f"unknown bc keys {sorted(set(bc) - keys)}")
    for k, walls in bc.items():
        for w in walls:
            if w not in WALLS:
                raise ConfigError(f"unknown wall {w!r} in bc.{k}")
    cfg = BCConfig(**{k: tuple(v) for k, v in bc.items()})
    try:
        cfg.validate(build_mesh(mesh_cfg))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    p["bc"] = {k: list(getattr(cfg, k)) for k in sorted(keys)}


# -- writers ------------------------------------------------------------------------

def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_rows(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    return path


def write_diagnostics_csv(path, records):
    return write_rows(path, CSV_COLUMNS, (r.row() for r in records))


def read_diagnostics_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    out = []
    for r in rows[1:]:
        out.append([int(r[0])] + [float(v) if v != "" else None for v in r[1:]])
    return rows[0], out


def write_field_csv(path, samples):
    samples = np.asarray(samples)
    header = ["x", "y", "value"] + (["value2"] if samples.shape[1] == 4 else [])
    return write_rows(path, header, samples.tolist())


def environment_info():
    import scipy
    from importlib import metadata
    try:
        version = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        version = "unknown"
    return {"python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "package": version}


def write_metadata_json(path, cfg, extra=None):
    meta = {"config": cfg.echo(), "seed": cfg.seed, "environment": environment_info()}
    meta.update(extra or {})
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_json_safe(meta), indent=2, sort_keys=True) + "\n")
    return path


def _tag(t):
    return f"{t:.4f}".rstrip("0").rstrip(".").replace(".", "p")


# -- runners ------------------------------------------------------------------------

def _quad(p):
    return None if p["NQ"] is None else QuadConfig(p["NQ"])


def _solver_kw(p):
    return {"newton_tol": p["newton_tol"], "newton_max_iter": p["newton_max_iter"],
            "gauge": p["gauge"]}


def _newton_counts(reports):
    return [r.iterations for r in reports]


def _run_tgv(cfg):
    p, out = cfg.params, cfg.out
    report = bench.ErrorReport()
    counts = {}
    for c in p["c_list"]:
        for N in p["N_list"]:
            for K in p["K_list"]:
                tag = f"N{N}_K{K}_c{_tag(c)}"
                try:
                    res, (eu, ew, ep) = bench.tgv_run(N, K, c, p["dt"], p["Re"], p["t_end"], _quad(p),
                                                              **_solver_kw(p))
                except TransientAborted as exc:
                    write_diagnostics_csv(out / f"diagnostics_{tag}.csv", exc.result.records)
                    counts[tag] = _newton_counts(exc.result.reports)
                    _write_tgv_tables(out, report)
                    exc.newton_iterations = counts
                    raise
                write_diagnostics_csv(out / f"diagnostics_{tag}.csv", res.records)
                counts[tag] = _newton_counts(res.reports)
                report.rows.append({"N": N, "K": K, "c": c, "hdiv_u": eu, "hcurl_omega": ew,
                                    "l2_P": ep, "max_divL2": max(r.divL2 for r in res.records)})
    _write_tgv_tables(out, report)
    return {"newton_iterations": counts, "rates": report.rates()}


def _write_tgv_tables(out, report):
    cols = ["N", "K", "c", "hdiv_u", "hcurl_omega", "l2_P", "max_divL2"]
    write_rows(out / "errors.csv", cols, ([r[k] for k in cols] for r in report.rows))
    rates = report.rates()
    rcols = ["N", "c", "K0", "K1", "rate_hdiv_u", "rate_hcurl_omega", "rate_l2_P"]
    write_rows(out / "rates.csv", rcols, ([r[k] for k in rcols] for r in rates))


def _write_series(out, res):
    write_diagnostics_csv(out / "diagnostics.csv", res.records)
    for t, samples in sorted(res.snapshots.items()):
        write_field_csv(out / f"omega_t{_tag(t)}.csv", samples)


def _run_shear(cfg):
    p = cfg.params
    res = bench.shear_layer_run(p["c"], p["K"], p["N"], p["dt"], p["Re"], p["t_end"],
                                p["snapshot_times"], p["sample_n"], _quad(p), **_solver_kw(p))
    _write_series(cfg.out, res)
    return {"newton_iterations": _newton_counts(res.reports), **res.extra}


def _run_dipole(cfg):
    p = cfg.params
    res = bench.dipole_run(p["K"], p["N"], p["dt"], p["Re"], p["t_end"], p["beta"],
                           p["snapshot_times"], p["trace_times"], p["sample_n"], _quad(p),
                           **_solver_kw(p))
    _write_series(cfg.out, res)
    for t, tr in sorted(res.extra["wall_traces"].items()):
        write_rows(cfg.out / f"wall_trace_t{_tag(t)}.csv", ["x", "y", "omega"], tr.tolist())
    return {"newton_iterations": _newton_counts(res.reports), "f": res.extra["f"]}


def _run_table(cfg):
    p = cfg.params
    table = bench.trilinear_table(cfg.seed, p["K"], p["c_list"], p["N_list"], p["NQ_list"])
    header, rows = bench.table_rows(table)
    write_rows(cfg.out / "table1.csv", header, rows)
    return {"gauss_point_offset": bench.POINT_OFFSET}


def _run_custom(cfg):
    p = cfg.params
    mesh = build_mesh(MeshConfig(p["K"], c=p["c"], alpha=p["alpha"],
                                 periodic=tuple(p["periodic"]), offset=tuple(p["offset"])))
    bc = BCConfig(**{k: tuple(v) for k, v in p["bc"].items()})
    scfg = SolverConfig(dt=p["dt"], Re=p["Re"], newton_tol=p["newton_tol"],
                        newton_max_iter=p["newton_max_iter"], quad=_quad(p), bc=bc,
                        gauge=p["gauge"])
    solver = MidpointSolver(mesh, p["N"], scfg)
    u0 = {
        "tgv": bench.TGVExact(p["Re"]).velocity,
        "shear-layer": bench.shear_layer_velocity,
        "dipole": bench.DipoleSetup().velocity,
        "rest": lambda x, y: (0.0 * x, 0.0 * y),
    }[p["initial"]]
    res = run_transient(solver, u0, p["t_end"], snapshot_times=p["snapshot_times"])
    write_diagnostics_csv(cfg.out / "diagnostics.csv", res.records)
    for s in res.snapshots:
        write_field_csv(cfg.out / f"omega_t{_tag(s.t)}.csv", bench.sample_field(s.omega, p["sample_n"]))
    return {"newton_iterations": _newton_counts(res.reports)}


RUNNERS = {"tgv": _run_tgv, "shear-layer": _run_shear, "dipole": _run_dipole,
           "trilinear-table": _run_table, "custom": _run_custom}


def run(cfg):
    """Execute a validated RunConfig; returns an exit code."""
    out = cfg.out
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        log.error("cannot create output directory %s: %s", out, exc)
        return EXIT_IO
    try:
        extra = RUNNERS[cfg.benchmark](cfg)
        write_metadata_json(out / "metadata.json", cfg, {"status": "ok", **extra})
        return EXIT_OK
    except (TransientAborted, NewtonFailure, SingularSystemError) as exc:
        log.error("solver failure: %s", exc)
        extra = {"status": "solver-failure", "error": str(exc)}
        result = getattr(exc, "result", None)
        if result is not None:
            if cfg.benchmark != "tgv":
                try:
                    write_diagnostics_csv(out / "diagnostics.csv", result.records)
                except OSError:
                    pass
            extra["newton_iterations"] = getattr(exc, "newton_iterations", _newton_counts(result.reports))
        try:
            write_metadata_json(out / "metadata.json", cfg, extra)
        except OSError:
            return EXIT_IO
        return EXIT_SOLVER
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO


def build_parser():
    ap = argparse.ArgumentParser(prog="meevc2d", description=__doc__.strip().splitlines()[0])
    ap.add_argument("benchmark", choices=BENCHMARKS)
    ap.add_argument("--config", help="YAML or JSON run configuration")
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--dt", type=float)
    ap.add_argument("--re", help="Reynolds number or 'inf'")
    ap.add_argument("--kk", type=int, help="elements per direction")
    ap.add_argument("--nn", type=int, help="polynomial degree")
    ap.add_argument("--cc", type=float, help="mesh deformation factor")
    return ap


def main(argv=None):
    logging.basicConfig(level=os.environ.get("MEEVC2D_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        data = load_config_file(args.config) if args.config else {}
        overrides = {"out": args.out, "seed": args.seed, "dt": args.dt, "Re": args.re,
                     "K": args.kk, "N": args.nn, "c": args.cc}
        cfg = parse_config(args.benchmark, data, overrides)
    except ConfigError as exc:
        print(f"meevc2d: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
