"""Config-driven experiment runner.

    fanolab run CONFIG [--set key=value ...] [--out DIR]
    fanolab report RUN_DIR [RUN_DIR ...] [--out DIR]
    fanolab validate-config CONFIG [--set key=value ...]

Exit codes: 0 success, 2 invalid configuration, 3 numerical failure,
4 resource guard.
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import math
import os
import platform
import re
import sys
import time
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .errors import AdmissibilityError, ConfigError, FanolabError, ModelError, ResourceError, SolverError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_RESOURCE = 0, 2, 3, 4

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["model", "run"],
    "properties": {
        "model": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["radial", "product"]},
                "beta0": _NUM, "beta_inf": _NUM, "T": _POS,
                "N": {"type": "integer", "minimum": 16},
            },
        },
        "run": {
            "type": "object", "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["ke", "iterate", "flow", "geodesic", "alpha", "verify", "probe"]},
                "tol": _POS,
                "max_iter": {"type": "integer", "minimum": 1},
                "dt": _POS, "t_end": _POS,
                "gauge": {"enum": ["even", "none"]},
                "scheme": {"enum": ["explicit", "backward"]},
                "substeps": {"type": ["integer", "null"], "minimum": 1},
                "record_every": {"type": "integer", "minimum": 1},
                "start": {"enum": ["sample", "zero"]},
                "suites": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                "lambda": _POS, "delta": _POS, "alpha": _POS,
                "steps": {"type": "integer", "minimum": 2},
                "endpoints": {"enum": ["sample", "ke_orbit"]},
                "shifts": {"type": "array", "items": _NUM, "minItems": 1},
            },
        },
        "sampling": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "seed": {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1},
                "count": {"type": "integer", "minimum": 1},
            },
        },
        "output": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "dir": {"type": "string", "minLength": 1},
                "formats": {"type": "array", "items": {"enum": ["csv", "json"]}, "uniqueItems": True},
            },
        },
    },
}

DEFAULTS = {
    "model": {"kind": "radial", "beta0": 1.0, "beta_inf": 1.0, "T": 12.0, "N": 256},
    "run": {"tol": 1e-10, "max_iter": 50, "dt": 0.01, "t_end": 20.0, "gauge": "even",
            "scheme": "explicit", "substeps": None, "record_every": 1, "start": "sample",
            "suites": ["ij_sandwich"], "lambda": 0.5, "delta": 0.3, "alpha": 0.25, "steps": 10,
            "endpoints": "sample", "shifts": [0.0, 1.0, 2.0, 4.0]},
    "sampling": {"seed": 0, "count": 100},
    "output": {"dir": "runs/default", "formats": ["csv", "json"]},
}

_COMMENTS = re.compile(r'("(?:\\.|[^"\\])*")|//[^\n]*|/\*.*?\*/', re.S)


def strip_comments(text: str) -> str:
    """Remove // and /* */ comments outside string literals."""
    return _COMMENTS.sub(lambda m: m.group(1) or "", text)


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(cfg: dict, pairs) -> dict:
    """Apply dotted key=value overrides; values are parsed as JSON when possible."""
    for item in pairs or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        node = cfg
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends into a non-object")
        node[parts[-1]] = _parse_value(raw)
    return cfg


def load_config(path, overrides=()) -> dict:
    """Read, override and validate a config; returns the config as written
    plus overrides (the snapshot), without defaults."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        cfg = json.loads(strip_comments(text))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    cfg = apply_overrides(cfg, overrides)
    validate(cfg)
    return cfg


def validate(cfg: dict) -> None:
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from None


def resolve(cfg: dict) -> dict:
    """Config with every default filled in."""
    out = copy.deepcopy(DEFAULTS)
    for block, vals in cfg.items():
        out[block].update(vals)
    return out


# ---------------------------------------------------------------------------
# serialization


def _clean(x):
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_clean(v) for v in x.tolist()]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return None
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return x


def dump_json(path: Path, obj) -> None:
    # repr of a float is its shortest round-trip form
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")


def _fmt(x) -> str:
    from .dynamics import fmt
    return fmt(x)


def write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def write_potential(path: Path, phi) -> None:
    model = phi.model
    if model.n == 1:
        rows = zip(model.axis, phi.values)
        write_rows(path, ("t", "phi"), rows)
    else:
        t = model.axis
        tx, ty = np.meshgrid(t, t, indexing="ij")
        write_rows(path, ("t1", "t2", "phi"), zip(tx.ravel(), ty.ravel(), phi.values))


def read_potential(path: Path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return np.array([float(r[-1]) for r in rows[1:]])


# ---------------------------------------------------------------------------
# runs


def build_model(mcfg: dict):
    from .model_space import make_product_model, make_radial_model
    if mcfg["kind"] == "radial":
        return make_radial_model(mcfg["beta0"], mcfg["beta_inf"], mcfg["T"], mcfg["N"])
    return make_product_model(mcfg["T"], mcfg["N"])


def _start(model, rc, seed):
    from .sampling import sample_potential
    if rc["start"] == "zero":
        return model.zero()
    even = rc["gauge"] == "even" and model.n == 1 and model.beta0 == model.beta_inf
    # the flow needs a positive MA density from the start
    kind = "smooth" if rc["kind"] == "flow" else "mixed"
    return sample_potential(model, seed, 0, kind=kind, even=even)


def _trace_summary(tr) -> dict:
    last = tr.records[-1] if tr.records else {}
    return {"status": tr.status, "message": tr.message, "converged_at": tr.converged_at,
            "steps_recorded": len(tr.records),
            "final": {k: last.get(k) for k in ("E", "J", "L", "Ding", "Mab", "H", "tv_residual", "I_prev")},
            "flags": sorted({f for r in tr.records for f in r["flags"].split(";") if f})}


def execute(cfg: dict, run_dir: Path) -> tuple[int, dict]:
    """Run a resolved config, writing artifacts into run_dir."""
    from . import dynamics, inequality_lab, ma_solver
    from .functionals import alpha_estimate, ding_mab

    rc, sc = cfg["run"], cfg["sampling"]
    formats = set(cfg["output"]["formats"])
    csv_on, json_on = "csv" in formats, "json" in formats
    model = build_model(cfg["model"])
    dump_json(run_dir / "model.json", model.to_json())
    solver = ma_solver.SolverConfig(max_newton_steps=max(60, rc["max_iter"]),
                                    residual_tol=min(rc["tol"], 1e-10))
    kind = rc["kind"]
    report: dict = {"kind": kind, "model_checksum": model.checksum()}
    code = EXIT_OK
    if kind == "ke":
        try:
            phi, res = ma_solver.ke_solve(model, solver, gauge=rc["gauge"])
        except SolverError as exc:
            report.update(status="failed", message=str(exc), diagnostics=exc.diagnostics)
            code = EXIT_NUMERIC
        else:
            report.update(status="ok", residual=res, functionals=ding_mab(phi).to_json())
            if model.n == 1 and model.beta0 == model.beta_inf:
                report["sup_error_closed_form"] = float(np.abs(phi.values - ma_solver.closed_form_ke(model).values).max())
            if csv_on:
                write_potential(run_dir / "final.csv", phi)
    elif kind in ("iterate", "flow"):
        phi0 = _start(model, rc, sc["seed"])
        if kind == "iterate":
            tr = dynamics.ricci_iterate(phi0, model, rc["max_iter"], rc["tol"], rc["gauge"], solver)
        else:
            tr = dynamics.krf_run(phi0, model, rc["dt"], rc["t_end"], rc["scheme"], solver,
                                  substeps=rc["substeps"], record_every=rc["record_every"])
            if tr.records:
                report["dissipation_defect"] = dynamics.dissipation_defect(tr)
        report.update(_trace_summary(tr))
        if csv_on:
            tr.write_csv(run_dir / "trace.csv")
            if tr.final is not None:
                write_potential(run_dir / "final.csv", tr.final)
        if tr.status != "ok":
            code = EXIT_NUMERIC
    elif kind == "geodesic":
        from .sampling import sample_potential, translate_potential
        if rc["endpoints"] == "ke_orbit":
            a, b = translate_potential(model, -1.0), translate_potential(model, 1.0)
        else:
            a, b = sample_potential(model, sc["seed"], 0), sample_potential(model, sc["seed"], 1)
        g = dynamics.geodesic(a, b, rc["steps"])
        tv = [ma_solver.ke_residual(p) for p in g.potentials]
        span = max(1.0, float(np.ptp(g.E)))
        report.update(status="ok", affinity_defect=g.affinity_defect() / span,
                      convexity_defect=g.convexity_defect(), max_tv_residual=max(tv))
        if csv_on:
            write_rows(run_dir / "geodesic.csv", ("s", "E", "Ding", "tv_residual"), zip(g.s, g.E, g.Ding, tv))
    elif kind == "alpha":
        lo, hi = alpha_estimate(model)
        report.update(status="ok", alpha_lower=lo, alpha_upper=hi)
    elif kind == "probe":
        rows = dynamics.noncoercive_probe(model, rc["shifts"])
        report.update(status="ok", rows=rows)
        if csv_on:
            cols = ("shift", "J", "Ding", "Mab", "tv_residual")
            write_rows(run_dir / "probe.csv", cols, ([r[c] for c in cols] for r in rows))
    elif kind == "verify":
        reps = []
        for name in rc["suites"]:
            if name not in inequality_lab.SUITES:
                raise ConfigError(f"unknown suite {name!r}")
            reps.append(inequality_lab.run_suite(name, model, sc["count"], sc["seed"], alpha=rc["alpha"],
                                                 lam=rc["lambda"], delta=rc["delta"]))
        ok = all(r.passed for r in reps)
        report.update(status="ok" if ok else "failed", suites=[r.to_json() for r in reps])
        if csv_on:
            with open(run_dir / "suites.csv", "w") as fh:
                fh.write(inequality_lab.CSV_HEADER + "\n")
                fh.writelines(r.csv_line() + "\n" for r in reps)
        if not ok:
            code = EXIT_NUMERIC
    if json_on:
        dump_json(run_dir / "report.json", report)
    return code, report


def run_experiment(cfg: dict, out: str | None = None) -> tuple[int, Path]:
    """Validate, snapshot and execute one config; returns (exit code, run dir)."""
    validate(cfg)
    full = resolve(cfg)
    target = out or os.environ.get("FANOLAB_OUT") or full["output"]["dir"]
    run_dir = Path(target)
    try:
        run_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"output directory not writable: {exc}") from exc
    dump_json(run_dir / "config.json", full)
    t0 = time.time()
    meta = {"started": time.strftime("%Y-%m-%dT%H:%M:%S%z"), "version": __version__,
            "python": platform.python_version(), "numpy": np.__version__, "run_dir": str(run_dir.resolve())}
    try:
        code, _ = execute(full, run_dir)
        meta["error"] = None
    except ResourceError as exc:
        code, meta["error"] = EXIT_RESOURCE, str(exc)
    except (ConfigError, ModelError) as exc:
        code, meta["error"] = EXIT_CONFIG, str(exc)
    except (SolverError, AdmissibilityError) as exc:
        code, meta["error"] = EXIT_NUMERIC, str(exc)
        dump_json(run_dir / "report.json", {"status": "failed", "message": str(exc),
                                            "diagnostics": getattr(exc, "diagnostics", {})})
    meta["elapsed_seconds"] = time.time() - t0
    meta["exit_code"] = code
    dump_json(run_dir / "meta.json", meta)
    return code, run_dir


# ---------------------------------------------------------------------------
# comparison


def emit_report(run_dirs, out: str | Path | None = None) -> dict:
    """Compare finished runs without recomputing any functional."""
    runs = []
    for d in map(Path, run_dirs):
        try:
            model = json.loads((d / "model.json").read_text())
            rep = json.loads((d / "report.json").read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{d} is not a finished run directory: {exc}") from exc
        final = read_potential(d / "final.csv") if (d / "final.csv").exists() else None
        runs.append((d, model, rep, final))
    if not runs:
        raise ConfigError("no run directories given")
    ref_model = runs[0][1]
    for d, m, _, _ in runs[1:]:
        if m["checksum"] != ref_model["checksum"] or m["N"] != ref_model["N"] or m["T"] != ref_model["T"]:
            raise ConfigError(f"{d} uses a different model than {runs[0][0]}")
    ref = runs[0][3]
    rows = []
    for d, m, rep, final in runs:
        disc = math.nan
        if final is not None and ref is not None:
            # potentials are compared modulo constants through their sup normalization
            disc = float(np.abs((final - final.max()) - (ref - ref.max())).max())
        fin = rep.get("final") or rep.get("functionals") or {}
        rows.append({"run": d.name, "kind": rep.get("kind"), "status": rep.get("status"),
                     "sup_discrepancy": disc, "Ding": fin.get("Ding"), "Mab": fin.get("Mab"),
                     "tv_residual": fin.get("tv_residual", rep.get("residual"))})
    doc = {"model": ref_model, "reference": runs[0][0].name, "rows": rows,
           "max_sup_discrepancy": max((r["sup_discrepancy"] for r in rows
                                       if not math.isnan(r["sup_discrepancy"])), default=math.nan)}
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        dump_json(out / "comparison.json", doc)
        cols = ("run", "kind", "status", "sup_discrepancy", "Ding", "Mab", "tv_residual")
        write_rows(out / "comparison.csv", cols,
                   ([r[c] if r[c] is not None else math.nan for c in cols] for r in rows))
    return doc


# ---------------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fanolab", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="execute a config")
    r.add_argument("config")
    r.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    r.add_argument("--out", help="run directory (overrides output.dir and FANOLAB_OUT)")
    p = sub.add_parser("report", help="compare finished runs")
    p.add_argument("runs", nargs="+")
    p.add_argument("--out", default="comparison")
    v = sub.add_parser("validate-config", help="check a config against the schema")
    v.add_argument("config")
    v.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.cmd == "validate-config":
            cfg = resolve(load_config(args.config, args.set))
            print(json.dumps(cfg, indent=2, sort_keys=True))
            return EXIT_OK
        if args.cmd == "run":
            cfg = load_config(args.config, args.set)
            code, run_dir = run_experiment(cfg, args.out)
            meta = json.loads((run_dir / "meta.json").read_text())
            if meta.get("error"):
                print(f"error: {meta['error']}", file=sys.stderr)
            print(str(run_dir))
            return code
        doc = emit_report(args.runs, args.out)
        print(json.dumps(_clean(doc["rows"]), indent=2))
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FanolabError as exc:  # pragma: no cover - reached only through library misuse
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
