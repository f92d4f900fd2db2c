"""Batch front-end: config-driven runs with CSV reports.

Subcommands: solve (one forward solve), optimize (one row per requested
formulation), sweep (scatter-amplitude sweep, plot-ready CSV), audit
(EMF miss rate at a given design), rb-build (train and serialize a
reduced dictionary), verify (formulation-equivalence check plus model
invariants).

Configuration is a single INI file; every key has a default, unknown
sections or keys are rejected, and a handful of CLI flags override
config values.  All tabular output is CSV.  results.csv and sweep.csv
contain only deterministic fields (identical config and seeds reproduce
them byte for byte); wall-clock measurements go to timings.csv, split
into offline (reduced-basis training) and online cost.  Exit codes:
0 success, 2 configuration error, 3 solver failure, 4 model failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import os
import sys
import time
from typing import Optional

import numpy as np

from . import bench, fem, geom, rb, sens
from .errors import (
    ConfigError,
    DegenerateGeometry,
    InfeasibleParameter,
    NonpositiveCoercivity,
    QPFailure,
    SingularMaterial,
    SolveFailure,
    TrainingFailure,
    ZeroVariance,
)
from .opt import FORMULATIONS, MATCHED_STD_WEIGHT, PsoOptions

_DEFAULTS: dict[str, dict[str, str]] = {
    "geometry": {
        "domain_width": "40.0",
        "rotor_height": "30.0",
        "airgap_height": "1.0",
        "stator_height": "9.0",
        "box_width": "30.0",
        "box_height": "27.0",
        "p_ref": "19.0, 7.0, 7.0",
        "p_lower": "0.5, 0.5, 4.5",
        "p_upper": "26.5, 10.5, 14.5",
    },
    "model": {
        "levels": "4",
        "emf_target": "30.37",
        "nu0": "1.0",
        "mu_r_iron": "500.0",
        "nu_magnet": "",
        "remanence": "1.0",
    },
    "mor": {
        "enabled": "off",
        "dictionary": "",
        "tol": "1e-4",
        "max_basis": "150",
        "grid": "6, 4, 4",
        "threads": "0",
        "save_error_data": "off",
    },
    "optimize": {
        "formulation": "nominal",
        "uq": "sq",
        "optimizer": "sqp",
        "delta": "0.2",
        "lambda": repr(MATCHED_STD_WEIGHT),
        "tol": "1e-8",
        "max_iter": "100",
        "uq_nodes": "5",
        "mc_samples": "5000",
        "start": "19.0, 7.0, 7.0",
        "audit_samples": "10000",
        "pso_particles": "50",
        "pso_max_iter": "100",
    },
    "sweep": {
        "formulation": "wc2",
        "deltas": "0.2, 0.1, 0.05, 0.0",
    },
    "audit": {
        "point": "19.0, 7.0, 7.0",
        "delta": "0.2",
        "n_samples": "10000",
    },
    "solve": {
        "point": "19.0, 7.0, 7.0",
    },
    "seeds": {
        "mc": "0",
        "pso": "0",
        "audit": "0",
    },
    "output": {
        "directory": "pmopt_out",
    },
}


# -- config handling ----------------------------------------------------------

def _read_config(path: Optional[str]) -> dict[str, dict[str, str]]:
    """Defaults overlaid with the config file; unknown keys rejected."""
    cfg = {s: dict(kv) for s, kv in _DEFAULTS.items()}
    if path is None:
        return cfg
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    for section in parser.sections():
        if section not in cfg:
            raise ConfigError(f"unknown config section [{section}]")
        for key, value in parser.items(section):
            if key not in cfg[section]:
                raise ConfigError(f"unknown config key {key!r} in [{section}]")
            cfg[section][key] = value.strip()
    return cfg


def _apply_overrides(cfg: dict, args: argparse.Namespace) -> None:
    if getattr(args, "formulation", None):
        cfg["optimize"]["formulation"] = args.formulation
        cfg["sweep"]["formulation"] = args.formulation
    if getattr(args, "uq", None):
        cfg["optimize"]["uq"] = args.uq
    if getattr(args, "optimizer", None):
        cfg["optimize"]["optimizer"] = args.optimizer
    if getattr(args, "mor", None):
        if args.mor in ("on", "off"):
            cfg["mor"]["enabled"] = args.mor
        else:
            cfg["mor"]["enabled"] = "on"
            cfg["mor"]["dictionary"] = args.mor
    if getattr(args, "delta", None) is not None:
        cfg["optimize"]["delta"] = args.delta
        cfg["audit"]["delta"] = args.delta
    if getattr(args, "lam", None) is not None:
        cfg["optimize"]["lambda"] = args.lam
    if getattr(args, "seed", None) is not None:
        for key in cfg["seeds"]:
            cfg["seeds"][key] = str(args.seed)
    if getattr(args, "threads", None) is not None:
        cfg["mor"]["threads"] = str(args.threads)
    if getattr(args, "out", None):
        cfg["output"]["directory"] = args.out


def _config_hash(cfg: dict) -> str:
    blob = "\n".join(
        f"{section}.{key}={cfg[section][key]}"
        for section in sorted(cfg)
        for key in sorted(cfg[section])
    )
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _float(cfg: dict, section: str, key: str) -> float:
    raw = cfg[section][key]
    try:
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key} = {raw!r} is not a number") from exc


def _int(cfg: dict, section: str, key: str) -> int:
    raw = cfg[section][key]
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key} = {raw!r} is not an integer") from exc


def _bool(cfg: dict, section: str, key: str) -> bool:
    raw = cfg[section][key].lower()
    if raw in ("on", "true", "yes", "1"):
        return True
    if raw in ("off", "false", "no", "0"):
        return False
    raise ConfigError(f"[{section}] {key} = {raw!r} is not on/off")


def _triple(cfg: dict, section: str, key: str) -> tuple[float, float, float]:
    raw = cfg[section][key]
    parts = [s.strip() for s in raw.split(",")]
    if len(parts) != 3:
        raise ConfigError(f"[{section}] {key} = {raw!r} needs three numbers")
    try:
        return tuple(float(s) for s in parts)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key} = {raw!r} is not numeric") from exc


def _float_list(cfg: dict, section: str, key: str) -> list[float]:
    raw = cfg[section][key]
    try:
        return [float(s) for s in raw.split(",") if s.strip()]
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key} = {raw!r} is not numeric") from exc


def _name_list(cfg: dict, section: str, key: str, allowed: tuple) -> list[str]:
    names = [s.strip() for s in cfg[section][key].split(",") if s.strip()]
    if not names:
        raise ConfigError(f"[{section}] {key} is empty")
    for name in names:
        if name not in allowed:
            raise ConfigError(
                f"[{section}] {key}: unknown value {name!r}; pick from {allowed}"
            )
    return names


def _resolve_kind(kind: str, uq_method: str) -> tuple[str, str]:
    """Normalize a (formulation, uq engine) pair; the engine column of the
    report is '-' for kinds that never consult moment estimates."""
    if uq_method not in ("sq", "mc", "lin"):
        raise ConfigError(f"unknown uq method {uq_method!r}; pick sq, mc or lin")
    if kind == "uq_lin" or (kind == "uq_robust" and uq_method == "lin"):
        return "uq_lin", "lin"
    if uq_method == "lin":
        raise ConfigError(
            "uq = lin pairs only with the uq_robust / uq_lin formulation"
        )
    if kind in ("uq_nominal", "uq_robust"):
        return kind, uq_method
    return kind, "-"


# -- model / backend assembly ---------------------------------------------------

def _build_model(cfg: dict) -> fem.AffineModel:
    spec = geom.GeometryNumbers(
        domain_width=_float(cfg, "geometry", "domain_width"),
        rotor_height=_float(cfg, "geometry", "rotor_height"),
        airgap_height=_float(cfg, "geometry", "airgap_height"),
        stator_height=_float(cfg, "geometry", "stator_height"),
        box_width=_float(cfg, "geometry", "box_width"),
        box_height=_float(cfg, "geometry", "box_height"),
        p_ref=_triple(cfg, "geometry", "p_ref"),
        p_lower=_triple(cfg, "geometry", "p_lower"),
        p_upper=_triple(cfg, "geometry", "p_upper"),
    )
    tri = geom.build_geometry(spec)
    nu_magnet = cfg["model"]["nu_magnet"]
    materials = fem.MaterialTable(
        nu0=_float(cfg, "model", "nu0"),
        mu_r_iron=_float(cfg, "model", "mu_r_iron"),
        nu_magnet=float(nu_magnet) if nu_magnet else None,
        remanence=_float(cfg, "model", "remanence"),
    )
    return fem.assemble_reference(
        tri, materials, levels=_int(cfg, "model", "levels"),
        emf_target=_float(cfg, "model", "emf_target"),
    )


def _training_options(cfg: dict) -> rb.TrainingOptions:
    grid = tuple(int(round(v)) for v in _float_list(cfg, "mor", "grid"))
    if len(grid) != 3 or min(grid) < 2:
        raise ConfigError(f"[mor] grid = {cfg['mor']['grid']!r} needs three "
                          "entries of at least 2")
    return rb.TrainingOptions(
        grid_shape=grid,
        tol=_float(cfg, "mor", "tol"),
        max_basis=_int(cfg, "mor", "max_basis"),
    )


def _build_backend(cfg: dict, model: fem.AffineModel,
                   timings: list) -> tuple[bench.EmfBackend, str]:
    """Full or reduced EMF backend per the [mor] section.

    A dictionary path with mor disabled is a contradiction and rejected.
    """
    enabled = _bool(cfg, "mor", "enabled")
    dictionary = cfg["mor"]["dictionary"]
    if not enabled:
        if dictionary:
            raise ConfigError(
                "[mor] enabled = off contradicts a dictionary path; "
                "remove one of the two"
            )
        return bench.EmfBackend(model=model), "off"
    t0 = time.perf_counter()
    if dictionary:
        if not os.path.exists(dictionary):
            raise ConfigError(f"[mor] dictionary {dictionary!r} does not exist")
        dic = rb.Dictionary.load(dictionary, model)
        timings.append(("load_dictionary", time.perf_counter() - t0, 0.0))
    else:
        threads = _int(cfg, "mor", "threads") or None
        dic = rb.build_dictionary(model, options=_training_options(cfg),
                                  n_threads=threads)
        timings.append(("train_dictionary", time.perf_counter() - t0, 0.0))
    return bench.EmfBackend(dictionary=dic), "on"


# -- report writing -------------------------------------------------------------

def _write_csv(path: str, comments: list[str], fieldnames: list[str],
               rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        writer = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(v) for k, v in row.items()})


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def _report_comments(cfg: dict) -> list[str]:
    return [
        f"config sha256={_config_hash(cfg)}",
        "seeds mc={mc} pso={pso} audit={audit}".format(**cfg["seeds"]),
    ]


def _write_resolved_config(cfg: dict, out_dir: str) -> None:
    parser = configparser.ConfigParser(interpolation=None)
    for section in cfg:
        parser[section] = dict(cfg[section])
    with open(os.path.join(out_dir, "config.resolved.ini"), "w",
              encoding="utf-8") as fh:
        parser.write(fh)


def _out_dir(cfg: dict) -> str:
    path = cfg["output"]["directory"]
    os.makedirs(path, exist_ok=True)
    return path


# -- subcommands ------------------------------------------------------------------

def _solve_rows(cfg: dict, backend: bench.EmfBackend, kinds: list[str],
                deltas: Optional[list[float]] = None) -> tuple[list, list, list]:
    """Optimization rows + iteration traces + timing rows."""
    opt_cfg = cfg["optimize"]
    uq_raw = opt_cfg["uq"]
    optimizer = opt_cfg["optimizer"]
    if optimizer not in ("sqp", "pso"):
        raise ConfigError(f"unknown optimizer {optimizer!r}; pick sqp or pso")
    base_delta = _float(cfg, "optimize", "delta")
    audit_samples = _int(cfg, "optimize", "audit_samples")
    pso_options = PsoOptions(
        n_particles=_int(cfg, "optimize", "pso_particles"),
        max_iter=_int(cfg, "optimize", "pso_max_iter"),
    )
    rows, traces, timings = [], [], []
    for kind in kinds:
        kind_deltas = deltas if deltas is not None else [base_delta]
        p0 = _triple(cfg, "optimize", "start")
        for delta in kind_deltas:
            resolved, uq_col = _resolve_kind(kind, uq_raw)
            t0 = time.perf_counter()
            result = bench.solve_design(
                backend, resolved, delta=delta,
                lam=_float(cfg, "optimize", "lambda"),
                method=optimizer, p0=p0,
                tol=_float(cfg, "optimize", "tol"),
                max_iter=_int(cfg, "optimize", "max_iter"),
                uq_method="sq" if uq_col in ("lin", "-") else uq_col,
                uq_nodes=_int(cfg, "optimize", "uq_nodes"),
                mc_samples=_int(cfg, "optimize", "mc_samples"),
                mc_seed=_int(cfg, "seeds", "mc"),
                pso_seed=_int(cfg, "seeds", "pso"),
                pso_options=pso_options,
            )
            if not result.converged:
                raise QPFailure(
                    f"{resolved} did not converge ({result.stop_reason}) "
                    f"after {result.n_iter} iterations"
                )
            audit = bench.failure_rate(
                backend, result.p, delta=delta, n_samples=audit_samples,
                seed=_int(cfg, "seeds", "audit"),
            )
            online = time.perf_counter() - t0
            rows.append({
                "kind": resolved, "uq": uq_col, "mor": "-", "optimizer": optimizer,
                "delta": delta,
                "p1": result.p[0], "p2": result.p[1], "p3": result.p[2],
                "area": result.area,
                "e0": backend.value(result.p),
                "failure_rate": audit.rate,
                "n_evaluations": result.n_evaluations,
                "n_iterations": result.n_iter,
            })
            for entry in result.trace:
                traces.append({
                    "kind": resolved, "optimizer": optimizer, "delta": delta,
                    "iter": entry["iter"], "objective": entry["objective"],
                    "violation": entry["violation"], "step": entry["step"],
                })
            timings.append((f"{resolved} delta={delta:g}", 0.0, online))
            p0 = result.p       # warm start across a sweep
    return rows, traces, timings


def cmd_optimize(cfg: dict) -> int:
    out = _out_dir(cfg)
    timings = []
    model = _build_model(cfg)
    backend, mor_label = _build_backend(cfg, model, timings)
    kinds = _name_list(cfg, "optimize", "formulation", FORMULATIONS)
    rows, traces, solve_timings = _solve_rows(cfg, backend, kinds)
    timings.extend(solve_timings)
    for row in rows:
        row["mor"] = mor_label
    comments = _report_comments(cfg)
    _write_csv(os.path.join(out, "results.csv"), comments,
               ["kind", "uq", "mor", "optimizer", "delta", "p1", "p2", "p3",
                "area", "e0", "failure_rate", "n_evaluations", "n_iterations"],
               rows)
    _write_csv(os.path.join(out, "trace.csv"), comments,
               ["kind", "optimizer", "delta", "iter", "objective", "violation",
                "step"], traces)
    _write_timings(out, comments, timings)
    _write_resolved_config(cfg, out)
    _write_summary(cfg, out, rows, timings, model, mor_label)
    for row in rows:
        print(f"{row['kind']:11s} p=({row['p1']:.6f}, {row['p2']:.6f}, "
              f"{row['p3']:.6f})  area={row['area']:.6f}  e0={row['e0']:.4f}  "
              f"failure={100 * row['failure_rate']:.2f}%")
    return 0


def cmd_sweep(cfg: dict) -> int:
    out = _out_dir(cfg)
    timings = []
    model = _build_model(cfg)
    backend, mor_label = _build_backend(cfg, model, timings)
    kinds = _name_list(cfg, "sweep", "formulation", FORMULATIONS)
    deltas = _float_list(cfg, "sweep", "deltas")
    if not deltas:
        raise ConfigError("[sweep] deltas is empty")
    rows, traces, solve_timings = _solve_rows(cfg, backend, kinds,
                                              deltas=deltas)
    timings.extend(solve_timings)
    comments = _report_comments(cfg)
    sweep_rows = [
        {"delta": r["delta"], "kind": r["kind"], "area": r["area"],
         "e0": r["e0"], "failure_rate": r["failure_rate"]}
        for r in rows
    ]
    _write_csv(os.path.join(out, "sweep.csv"), comments,
               ["delta", "kind", "area", "e0", "failure_rate"], sweep_rows)
    _write_csv(os.path.join(out, "trace.csv"), comments,
               ["kind", "optimizer", "delta", "iter", "objective", "violation",
                "step"], traces)
    _write_timings(out, comments, timings)
    _write_resolved_config(cfg, out)
    _write_summary(cfg, out, rows, timings, model, mor_label)
    for row in sweep_rows:
        print(f"delta={row['delta']:<6g} {row['kind']:11s} "
              f"area={row['area']:.6f}  failure={100 * row['failure_rate']:.2f}%")
    return 0


def cmd_audit(cfg: dict) -> int:
    out = _out_dir(cfg)
    timings = []
    model = _build_model(cfg)
    backend, _ = _build_backend(cfg, model, timings)
    point = _triple(cfg, "audit", "point")
    t0 = time.perf_counter()
    audit = bench.failure_rate(
        backend, point,
        delta=_float(cfg, "audit", "delta"),
        n_samples=_int(cfg, "audit", "n_samples"),
        seed=_int(cfg, "seeds", "audit"),
    )
    timings.append(("audit", 0.0, time.perf_counter() - t0))
    comments = _report_comments(cfg)
    _write_csv(os.path.join(out, "audit.csv"), comments,
               ["p1", "p2", "p3", "delta", "n_samples", "n_failures", "rate",
                "emf_min", "emf_mean", "seed"],
               [{
                   "p1": point[0], "p2": point[1], "p3": point[2],
                   "delta": audit.delta[0], "n_samples": audit.n_samples,
                   "n_failures": audit.n_failures, "rate": audit.rate,
                   "emf_min": audit.emf_min, "emf_mean": audit.emf_mean,
                   "seed": audit.seed,
               }])
    _write_timings(out, comments, timings)
    _write_resolved_config(cfg, out)
    print(f"failure rate at p=({point[0]:g}, {point[1]:g}, {point[2]:g}): "
          f"{100 * audit.rate:.2f}% of {audit.n_samples} samples "
          f"(emf min {audit.emf_min:.4f}, target {audit.emf_target:g})")
    return 0


def cmd_solve(cfg: dict, field_path: Optional[str]) -> int:
    model = _build_model(cfg)
    point = _triple(cfg, "solve", "point")
    sol = model.solve(point)
    e0 = model.emf(sol)
    print(f"e0({point[0]:g}, {point[1]:g}, {point[2]:g}) = {e0!r}")
    grad = sens.first_order(model, point, sol=sol).grad_emf
    print(f"grad = ({float(grad[0])!r}, {float(grad[1])!r}, {float(grad[2])!r})")
    if field_path:
        with open(field_path, "w", encoding="utf-8") as fh:
            fh.write(fem.dump_field(model, sol))
        print(f"field written to {field_path}")
    return 0


def cmd_rb_build(cfg: dict) -> int:
    path = cfg["mor"]["dictionary"]
    if not path:
        raise ConfigError("rb-build needs [mor] dictionary = <output path>")
    model = _build_model(cfg)
    threads = _int(cfg, "mor", "threads") or None
    t0 = time.perf_counter()
    dic = rb.build_dictionary(
        model, options=_training_options(cfg), n_threads=threads,
        keep_error_data=_bool(cfg, "mor", "save_error_data"),
    )
    offline = time.perf_counter() - t0
    dic.save(path, include_error_data=_bool(cfg, "mor", "save_error_data"))
    sizes = dic.basis_sizes
    print(f"trained {dic.n_models} sub-box models in {offline:.1f}s "
          f"({model.full_solves} full solves); basis sizes "
          f"{sizes.min()}..{sizes.max()} (mean {sizes.mean():.1f})")
    print(f"dictionary written to {path}")
    return 0


def cmd_verify(cfg: dict) -> int:
    """Model invariants plus the matched-weight equivalence check."""
    failures = 0

    def report(name: str, ok: bool, detail: str) -> None:
        nonlocal failures
        failures += 0 if ok else 1
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")

    model = _build_model(cfg)
    rng = np.random.Generator(np.random.Philox(20240817))
    lo = np.asarray(model.tri.spec.p_lower)
    hi = np.asarray(model.tri.spec.p_upper)

    worst = 0.0
    for _ in range(3):
        p = lo + rng.random(3) * (hi - lo)
        k_fast, rhs_fast = model.assemble_system(p)
        k_ref, rhs_ref = model.assemble_brute(p)
        num = np.sqrt((k_fast - k_ref).power(2).sum() +
                      np.sum((rhs_fast - rhs_ref) ** 2))
        den = np.sqrt(k_ref.power(2).sum() + np.sum(rhs_ref ** 2))
        worst = max(worst, float(num / den))
    report("affine assembly vs direct reassembly", worst <= 1e-10,
           f"relative error {worst:.2e} (tolerance 1e-10)")

    p = np.asarray(model.tri.spec.p_ref, dtype=float)
    bundle = sens.second_order(model, p)
    h = 1e-5
    fd = np.zeros(3)
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        fd[i] = (model.emf(model.solve(p + e)) -
                 model.emf(model.solve(p - e))) / (2 * h)
    err = float(np.max(np.abs(fd - bundle.grad_emf)) /
                max(1.0, np.max(np.abs(fd))))
    report("adjoint EMF gradient vs finite differences", err <= 1e-6,
           f"relative error {err:.2e} (tolerance 1e-6)")

    timings = []
    backend, mor_label = _build_backend(cfg, model, timings)
    if mor_label == "on":
        worst_emf = 0.0
        for _ in range(5):
            q = lo + rng.random(3) * (hi - lo)
            full = model.emf(model.solve(q))
            red = backend.value(q)
            worst_emf = max(worst_emf, abs(red - full) / abs(full))
        report("reduced EMF vs full model", worst_emf <= 1e-4,
               f"relative error {worst_emf:.2e} (tolerance 1e-4)")

    gap = bench.counterpart_gap(
        backend, delta=_float(cfg, "optimize", "delta"),
        lam=MATCHED_STD_WEIGHT, tol=_float(cfg, "optimize", "tol"),
    )
    ok = gap["design_gap"] <= 1e-2 and gap["objective_gap_rel"] <= 1e-3
    report("2-norm worst case matches linearized mean-std at "
           "weight sqrt(3)", ok,
           f"design gap {gap['design_gap']:.2e} (tolerance 1e-2), "
           f"objective gap {gap['objective_gap_rel']:.2e} (tolerance 1e-3)")

    if failures:
        print(f"{failures} verification check(s) failed")
        return 3
    print("all verification checks passed")
    return 0


def _write_timings(out: str, comments: list[str], timings: list) -> None:
    _write_csv(os.path.join(out, "timings.csv"), comments,
               ["step", "offline_seconds", "online_seconds"],
               [{"step": s, "offline_seconds": off, "online_seconds": on}
                for s, off, on in timings])


def _write_summary(cfg: dict, out: str, rows: list, timings: list,
                   model: fem.AffineModel, mor_label: str) -> None:
    lines = [
        "robust magnet sizing report",
        f"config sha256: {_config_hash(cfg)}",
        "seeds: mc={mc} pso={pso} audit={audit}".format(**cfg["seeds"]),
        f"model: {model.n_free} free nodes (refinement level "
        f"{model.levels}), EMF target {model.emf_target:g}",
        f"reduced basis: {mor_label}",
        "",
        f"{'kind':11s} {'p1':>10s} {'p2':>10s} {'p3':>10s} {'area':>10s} "
        f"{'e0':>8s} {'failure':>8s} {'evals':>7s}",
    ]
    for r in rows:
        lines.append(
            f"{r['kind']:11s} {r['p1']:10.5f} {r['p2']:10.5f} {r['p3']:10.5f} "
            f"{r['area']:10.5f} {r['e0']:8.4f} "
            f"{100 * r['failure_rate']:7.2f}% {r['n_evaluations']:7d}"
        )
    lines.append("")
    offline = sum(t[1] for t in timings)
    online = sum(t[2] for t in timings)
    lines.append(f"time: {offline:.1f}s offline + {online:.1f}s online")
    with open(os.path.join(out, "summary.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


# -- entry point ------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pmopt",
        description="Robust sizing of a permanent-magnet section: forward "
                    "solves, reduced-basis training, robust optimization, "
                    "scatter audits.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", default=None,
                        help="INI run configuration (defaults used if absent)")
    common.add_argument("--formulation", default=None,
                        help="comma list from: " + ", ".join(FORMULATIONS))
    common.add_argument("--uq", default=None, choices=["sq", "mc", "lin"],
                        help="moment engine for the stochastic formulations")
    common.add_argument("--optimizer", default=None, choices=["sqp", "pso"])
    common.add_argument("--mor", default=None, metavar="on|off|PATH",
                        help="reduced-basis acceleration, or a dictionary path")
    common.add_argument("--delta", default=None,
                        help="scatter half-width (mm)")
    common.add_argument("--lambda", dest="lam", default=None,
                        help="std weight of the robust formulations")
    common.add_argument("--seed", type=int, default=None,
                        help="set every RNG seed at once")
    common.add_argument("--threads", type=int, default=None,
                        help="worker cap for reduced-basis training")
    common.add_argument("--out", default=None, metavar="DIR",
                        help="report directory")
    solve = sub.add_parser("solve", parents=[common],
                           help="one forward solve at [solve] point")
    solve.add_argument("--field", default=None, metavar="PATH",
                       help="write the nodal potential as CSV (debug)")
    sub.add_parser("optimize", parents=[common],
                   help="solve the configured formulations, audit, report")
    sub.add_parser("sweep", parents=[common],
                   help="re-solve over [sweep] deltas, plot-ready CSV")
    sub.add_parser("audit", parents=[common],
                   help="EMF miss rate under scatter at [audit] point")
    sub.add_parser("rb-build", parents=[common],
                   help="train the reduced dictionary and serialize it")
    sub.add_parser("verify", parents=[common],
                   help="model invariants and the equivalence check")
    return parser


def main(argv: Optional[list] = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _read_config(args.config)
        _apply_overrides(cfg, args)
        if args.command == "solve":
            return cmd_solve(cfg, args.field)
        if args.command == "optimize":
            return cmd_optimize(cfg)
        if args.command == "sweep":
            return cmd_sweep(cfg)
        if args.command == "audit":
            return cmd_audit(cfg)
        if args.command == "rb-build":
            return cmd_rb_build(cfg)
        return cmd_verify(cfg)
    except (ConfigError, InfeasibleParameter) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (QPFailure, TrainingFailure, NonpositiveCoercivity,
            ZeroVariance) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3
    except (DegenerateGeometry, SingularMaterial, SolveFailure) as exc:
        print(f"model failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
