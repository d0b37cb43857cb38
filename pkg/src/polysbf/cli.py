"""Command-line front end: ``polysbf {coeffs,expand,ckc,approximate,converge}``.

Exit codes: 0 success, 2 numerical construction failure, 64 usage error.
Every run writes ``manifest.json`` next to its outputs.
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import math
import os
import sys
import tempfile
from pathlib import Path

import jsonschema

from . import __version__
from .approx import (LevelFailure, StudySettings, band_limited_target, build_approximant,
                     convergence_study, error_norms, quadrature_degree, random_sign_target,
                     spline_target)
from .ckc import CKCConfig, CKCError, build_kernel
from .expansion import match_gammas, remainder_smoothness
from .sphere_geom import build_quadrature, fibonacci_points, generate_points, read_points_csv
from .zonal_kernels import (KernelError, PolyharmonicKernel, SurfaceSpline, calibrate_Cs,
                            gegenbauer_coeffs_numeric, kernel_from_spec)

EXIT_OK, EXIT_NUMERIC, EXIT_USAGE = 0, 2, 64

# default experiment: m = 2 on S^2 with roots (-1, -3), rho = 6h
DEFAULT_CONFIG = {
    "kernel": {"type": "polyharmonic", "d": 2, "m": 2, "roots": [-1, -3]},
    "ckc": {"precision": 4, "radius_policy": "paper", "radius_constant": 0.375, "solver": "l2", "tau": 1e-8},
    "targets": [{"type": "band_limited", "band": 8},
                {"type": "spline", "t": 1, "p": [0.3, -0.5, 0.8]}],
    "sizes": [500, 1000, 2000, 4000],
    "seed": 1,
    "study": {"quad_spacing": 1.0, "band_factor": 8.0, "J": 5, "point_kind": "fibonacci"},
    "tolerances": {"smooth_slope_min": 3.3, "rough_slope_min": 2.4, "rough_slope_max": 3.6,
                   "coeff_ratio_max": 1.5},
}

_KERNEL_SCHEMA = {
    "oneOf": [
        {"type": "object", "additionalProperties": False, "required": ["type", "m", "roots"],
         "properties": {"type": {"const": "polyharmonic"}, "d": {"type": "integer", "minimum": 2},
                        "m": {"type": "integer", "minimum": 1},
                        "roots": {"type": "array", "items": {"type": "number"}}}},
        {"type": "object", "additionalProperties": False, "required": ["type", "s"],
         "properties": {"type": {"const": "surface_spline"}, "d": {"type": "integer", "minimum": 2},
                        "s": {"type": "number", "exclusiveMinimum": 0}}},
    ]
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "kernel": _KERNEL_SCHEMA,
        "ckc": {"type": "object", "additionalProperties": False, "properties": {
            "precision": {"type": "integer", "minimum": 0},
            "radius_policy": {"enum": ["fixed", "paper", "adaptive"]},
            "radius_constant": {"type": "number", "exclusiveMinimum": 0},
            "rho": {"type": "number", "exclusiveMinimum": 0, "maximum": math.pi},
            "solver": {"enum": ["l2", "l1"]},
            "tau": {"type": "number", "exclusiveMinimum": 0}}},
        "targets": {"type": "array", "minItems": 1, "items": {"oneOf": [
            {"type": "object", "additionalProperties": False, "required": ["type", "band"],
             "properties": {"type": {"const": "band_limited"}, "band": {"type": "integer", "minimum": 0},
                            "decay": {"type": "number"}, "seed": {"type": "integer"}}},
            {"type": "object", "additionalProperties": False, "required": ["type", "t", "p"],
             "properties": {"type": {"const": "spline"}, "t": {"type": "number", "exclusiveMinimum": 0},
                            "p": {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}}},
            {"type": "object", "additionalProperties": False, "required": ["type", "sigma", "band_cap"],
             "properties": {"type": {"const": "random_sign"}, "sigma": {"type": "number"},
                            "band_cap": {"type": "integer", "minimum": 0}, "seed": {"type": "integer"}}},
        ]}},
        "sizes": {"type": "array", "items": {"type": "integer", "minimum": 1}},
        "seed": {"type": ["integer", "null"]},
        "output_dir": {"type": "string"},
        "study": {"type": "object", "additionalProperties": False, "properties": {
            "quad_spacing": {"type": "number", "exclusiveMinimum": 0},
            "band_factor": {"type": "number", "exclusiveMinimum": 0},
            "J": {"type": "integer", "minimum": 0},
            "point_kind": {"enum": ["fibonacci", "uniform_random", "cap_perturbed"]}}},
        "tolerances": {"type": "object", "additionalProperties": False, "properties": {
            "smooth_slope_min": {"type": "number"}, "rough_slope_min": {"type": "number"},
            "rough_slope_max": {"type": "number"}, "coeff_ratio_max": {"type": "number"}}},
    },
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------
# Output helpers
# --------------------------------------------------------------------------

def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_manifest(out_dir: Path, command: str, config: dict, outputs: list[str]) -> dict:
    manifest = {"command": command, "library_version": __version__, "seed": config.get("seed"),
                "config_hash": hashlib.sha256(_canonical(config).encode()).hexdigest(),
                "config": config, "outputs": sorted(outputs)}
    write_atomic(out_dir / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def _load_json_arg(text: str):
    """Inline JSON, or ``@path`` / an existing file path holding JSON."""
    if text.startswith("@"):
        text = Path(text[1:]).read_text()
    elif not text.lstrip().startswith(("{", "[")) and Path(text).exists():
        text = Path(text).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"invalid JSON: {exc}") from exc


def _validate(instance, schema, what: str):
    try:
        jsonschema.validate(instance, schema)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise UsageError(f"invalid {what} at {where}: {exc.message}") from exc


def _kernel(spec: dict):
    branches = {b["properties"]["type"]["const"]: b for b in _KERNEL_SCHEMA["oneOf"]}
    if not isinstance(spec, dict) or spec.get("type") not in branches:
        raise UsageError(f"kernel spec needs a type in {sorted(branches)}")
    _validate(spec, branches[spec["type"]], "kernel spec")
    try:
        return kernel_from_spec(spec)
    except KernelError as exc:
        raise UsageError(str(exc)) from exc


# --------------------------------------------------------------------------
# Config assembly
# --------------------------------------------------------------------------

def _ckc_config(section: dict) -> CKCConfig:
    solver = {"l2": "min_l2", "l1": "min_l1"}[section.get("solver", "l2")]
    try:
        return CKCConfig(L=int(section.get("precision", 4)), radius_policy=section.get("radius_policy", "paper"),
                         c=float(section.get("radius_constant", 48.0)), rho=section.get("rho"),
                         tau=float(section.get("tau", 1e-8)), solver=solver)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def _ckc_flags(args) -> dict:
    flags = {"precision": args.ckc_precision, "radius_constant": args.ckc_radius_constant,
             "solver": args.ckc_solver, "tau": args.ckc_tau, "radius_policy": args.ckc_radius_policy,
             "rho": args.ckc_rho}
    return {k: v for k, v in flags.items() if v is not None}


def resolve_config(args) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if getattr(args, "config", None):
        user = _load_json_arg(args.config)
        _validate(user, CONFIG_SCHEMA, "config")
        cfg = _merge(cfg, user)
        if "targets" in user:
            cfg["targets"] = user["targets"]
    over = {}
    if getattr(args, "kernel", None):
        over["kernel"] = _load_json_arg(args.kernel)
    if _ckc_flags(args):
        over["ckc"] = _ckc_flags(args)
    if getattr(args, "sizes", None):
        over["sizes"] = args.sizes
    if args.seed is not None:
        over["seed"] = args.seed
    cfg = _merge(cfg, over)
    _validate(cfg, CONFIG_SCHEMA, "config")
    return cfg


def _targets(cfg: dict):
    out = []
    for t in cfg["targets"]:
        seed = t.get("seed", cfg.get("seed"))
        if t["type"] in ("band_limited", "random_sign") and seed is None:
            raise UsageError(f"target {t['type']} is randomized and needs --seed")
        if t["type"] == "band_limited":
            out.append(band_limited_target(t["band"], seed, t.get("decay", 1.0)))
        elif t["type"] == "spline":
            out.append(spline_target(t["t"], t["p"], d=cfg["kernel"].get("d", 2)))
        else:
            out.append(random_sign_target(t["sigma"], t["band_cap"], seed))
    return out


def _study_settings(cfg: dict, threads: int) -> StudySettings:
    st = cfg.get("study", {})
    kind = st.get("point_kind", "fibonacci")
    seed = cfg.get("seed")
    if kind != "fibonacci" and seed is None:
        raise UsageError(f"point kind {kind} needs --seed")
    return StudySettings(quad_spacing=st.get("quad_spacing", 1.0), band_factor=st.get("band_factor", 8.0),
                         J=st.get("J", 5), point_kind=kind, seed=seed, threads=threads)


def _polyharmonic(cfg: dict) -> PolyharmonicKernel:
    k = _kernel(cfg["kernel"])
    if not isinstance(k, PolyharmonicKernel):
        raise UsageError("this command needs a polyharmonic kernel")
    return k


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------

def cmd_coeffs(args) -> int:
    spec = _load_json_arg(args.kernel)
    k = _kernel(spec)
    if args.lmax < 0:
        raise UsageError("--lmax must be non-negative")
    out_dir = Path(args.out_dir)
    lines = []
    if isinstance(k, SurfaceSpline):
        calibrate_Cs(k)
        oracle = gegenbauer_coeffs_numeric(k.eval, k.d, max(args.lmax, 1))
        lines.append("l,coeff,oracle,rel_diff")
        for ell in range(args.lmax + 1):
            c = k.coeff(ell)
            o = float(oracle[ell])
            rel = abs(c - o) / abs(o) if o != 0.0 else abs(c)
            lines.append(f"{ell},{c:.17g},{o:.17g},{rel:.3e}")
    else:
        lines.append("l,coeff")
        for ell in range(args.lmax + 1):
            lines.append(f"{ell},{k.coeff(ell):.17g}")
    write_atomic(out_dir / "coeffs.csv", "\n".join(lines) + "\n")
    write_manifest(out_dir, "coeffs", {"kernel": spec, "lmax": args.lmax, "seed": args.seed}, ["coeffs.csv"])
    return EXIT_OK


def cmd_expand(args) -> int:
    spec = _load_json_arg(args.kernel)
    k = _kernel(spec)
    if not isinstance(k, PolyharmonicKernel):
        raise UsageError("expand needs a polyharmonic kernel")
    if args.J < 0:
        raise UsageError("-J must be non-negative")
    res = match_gammas(k, args.J)
    payload = json.loads(res.to_json())
    payload["certified_smoothness"] = remainder_smoothness(res)
    out_dir = Path(args.out_dir)
    write_atomic(out_dir / "expansion.json", json.dumps(payload, indent=2) + "\n")
    write_manifest(out_dir, "expand", {"kernel": spec, "J": args.J, "seed": args.seed}, ["expansion.json"])
    return EXIT_OK


def _points(args):
    if args.points:
        return read_points_csv(args.points)
    if args.kind != "fibonacci" and args.seed is None:
        raise UsageError(f"point kind {args.kind} needs --seed")
    return generate_points(args.kind, args.n, seed=args.seed)


def cmd_ckc(args) -> int:
    cfg = resolve_config(args)
    ckc_cfg = _ckc_config(cfg["ckc"])
    xi = _points(args)
    degree = args.quad_degree if args.quad_degree is not None else \
        quadrature_degree(xi.fill_distance_h, 0, StudySettings())
    rule = build_quadrature(2, degree)
    out_dir = Path(args.out_dir)
    try:
        ck = build_kernel(xi, rule, ckc_cfg, threads=args.threads)
    except CKCError as exc:
        summary = {"failures": [{"node": exc.node, "error": type(exc).__name__, "message": str(exc)}]}
        write_atomic(out_dir / "ckc_summary.json", json.dumps(summary, indent=2) + "\n")
        write_manifest(out_dir, "ckc", cfg, ["ckc_summary.json"])
        print(f"CKC construction failed: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    summary = ck.summary()
    summary.update({"N": len(xi), "h": xi.fill_distance_h, "quad_degree": degree})
    rows_path = out_dir / "ckc_rows.csv"
    lines = ["node_index,center_index,value"]
    for q, row in enumerate(ck.rows):
        lines.extend(f"{q},{int(i)},{v:.17g}" for i, v in zip(row.support, row.values))
    write_atomic(rows_path, "\n".join(lines) + "\n")
    write_atomic(out_dir / "ckc_summary.json", json.dumps(summary, indent=2) + "\n")
    write_manifest(out_dir, "ckc", {**cfg, "N": len(xi), "quad_degree": degree},
                   ["ckc_rows.csv", "ckc_summary.json"])
    return EXIT_OK


def cmd_approximate(args) -> int:
    cfg = resolve_config(args)
    k = _polyharmonic(cfg)
    ckc_cfg = _ckc_config(cfg["ckc"])
    settings = _study_settings(cfg, args.threads)
    targets = _targets(cfg)
    target = targets[args.target]
    xi = generate_points(settings.point_kind, args.n, seed=settings.seed)
    h = xi.fill_distance_h
    rho = ckc_cfg.initial_radius(h)
    band = target.band_cap if target.closed_form is None else \
        min(target.band_cap, int(math.ceil(settings.band_factor / rho)))
    rule = build_quadrature(2, quadrature_degree(h, band, settings))
    out_dir = Path(args.out_dir)
    try:
        ck = build_kernel(xi, rule, ckc_cfg, threads=args.threads)
        approx = build_approximant(target, k, xi, ck, rule,
                                   kernel_eval=match_gammas(k, settings.J, fit=False).evaluator(), band=band)
    except (CKCError, ValueError) as exc:
        print(f"approximation failed: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    err_rule = build_quadrature(2, int(math.ceil(2 * math.sqrt(4 * args.n))) + 2)
    rep = error_norms(target, approx, err_rule, fibonacci_points(4 * args.n + 1), h=h)
    report = {"target": target.name, "N": args.n, "h": h, "rho": rho, "band": band,
              "norms": {"L1": rep.norms[1], "L2": rep.norms[2], "Linf": rep.norms["inf"]},
              "l1_coeff_norm": rep.l1_coeff_norm, "stability_K": ck.stability_K}
    write_atomic(out_dir / "approximant.json", approx.to_json() + "\n")
    write_atomic(out_dir / "error_report.json", json.dumps(report, indent=2) + "\n")
    write_manifest(out_dir, "approximate", {**cfg, "N": args.n, "target_index": args.target},
                   ["approximant.json", "error_report.json"])
    return EXIT_OK


def evaluate_criteria(result, targets, cfg: dict) -> dict:
    """Pass/fail of the rate criteria for each target kind."""
    tol = cfg["tolerances"]
    checks = {}
    for spec, t in zip(cfg["targets"], targets):
        slopes = result.slopes[t.name]
        rows = result.rows[t.name]
        if spec["type"] == "band_limited":
            norms = [r["l1_coeff_norm"] for r in rows]
            ratio = max(norms) / min(norms) if min(norms) > 0 else float("inf")
            checks[f"{t.name}: L2 slope >= {tol['smooth_slope_min']}"] = slopes[2][0] >= tol["smooth_slope_min"]
            checks[f"{t.name}: Linf slope >= {tol['smooth_slope_min']}"] = \
                slopes["inf"][0] >= tol["smooth_slope_min"]
            checks[f"{t.name}: l1 coefficient ratio <= {tol['coeff_ratio_max']}"] = ratio <= tol["coeff_ratio_max"]
        elif spec["type"] == "spline" and float(spec["t"]) == 1.0:
            lo, hi = tol["rough_slope_min"], tol["rough_slope_max"]
            checks[f"{t.name}: L2 slope in [{lo}, {hi}]"] = lo <= slopes[2][0] <= hi
    return {name: bool(ok) for name, ok in checks.items()}


def cmd_converge(args) -> int:
    cfg = resolve_config(args)
    if len(cfg["sizes"]) < 3:
        raise UsageError("a convergence study needs at least three sizes")
    k = _polyharmonic(cfg)
    ckc_cfg = _ckc_config(cfg["ckc"])
    settings = _study_settings(cfg, args.threads)
    targets = _targets(cfg)
    out_dir = Path(args.out_dir)
    timings = []

    def log(level, rows):
        timings.append({"N": level["N"], "seconds": level["seconds"], "ckc_seconds": level["ckc_seconds"]})
        if not args.quiet:
            print(f"N={level['N']:6d} h={level['h']:.4f} rho={level['rho']:.4f} K={level['stability_K']:.3f} "
                  f"({level['seconds']:.1f}s)", file=sys.stderr)

    try:
        result = convergence_study(targets, k, cfg["sizes"], ckc_cfg, settings, log=log)
    except LevelFailure as exc:
        report = {"failed_level": exc.N, "error": type(exc.cause).__name__, "message": str(exc.cause)}
        write_atomic(out_dir / "converge_summary.json", json.dumps(report, indent=2) + "\n")
        write_manifest(out_dir, "converge", cfg, ["converge_summary.json"])
        print(str(exc), file=sys.stderr)
        return EXIT_NUMERIC
    outputs = []
    for i, t in enumerate(targets):
        name = f"rates_{i}.csv"
        write_atomic(out_dir / name, result.csv_text(t.name))
        outputs.append(name)
    checks = evaluate_criteria(result, targets, cfg)
    summary = result.summary()
    for lv in summary["levels"]:
        lv.pop("seconds", None)
        lv.pop("ckc_seconds", None)
    summary["rate_files"] = {f"rates_{i}.csv": t.name for i, t in enumerate(targets)}
    summary["criteria"] = checks
    summary["passed"] = all(checks.values())
    write_atomic(out_dir / "converge_summary.json", json.dumps(summary, indent=2) + "\n")
    write_atomic(out_dir / "timings.json", json.dumps(timings, indent=2) + "\n")
    outputs += ["converge_summary.json", "timings.json"]
    write_manifest(out_dir, "converge", cfg, outputs)
    for name, ok in checks.items():
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    return EXIT_OK if summary["passed"] else 1


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------

def _add_common(p):
    p.add_argument("--out-dir", default=".", help="directory for outputs and manifest")
    p.add_argument("--seed", type=int, default=None, help="seed for randomized targets and point sets")
    p.add_argument("--threads", type=int, default=1, help="worker threads for row construction")


def _add_ckc(p):
    p.add_argument("--config", help="JSON experiment config (inline, @file or path)")
    p.add_argument("--kernel", help="kernel spec JSON (overrides the config)")
    p.add_argument("--ckc-precision", type=int, dest="ckc_precision")
    p.add_argument("--ckc-radius-constant", type=float, dest="ckc_radius_constant")
    p.add_argument("--ckc-radius-policy", choices=["fixed", "paper", "adaptive"], dest="ckc_radius_policy")
    p.add_argument("--ckc-rho", type=float, dest="ckc_rho", help="radius for the fixed policy")
    p.add_argument("--ckc-solver", choices=["l2", "l1"], dest="ckc_solver")
    p.add_argument("--ckc-tau", type=float, dest="ckc_tau")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="polysbf", description="Polyharmonic quasi-interpolation experiments on the sphere.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("coeffs", help="dump Fourier-Gegenbauer coefficients of a kernel")
    p.add_argument("--kernel", required=True)
    p.add_argument("--lmax", type=int, default=40)
    _add_common(p)
    p.set_defaults(func=cmd_coeffs)

    p = sub.add_parser("expand", help="surface-spline expansion of a polyharmonic kernel")
    p.add_argument("--kernel", required=True)
    p.add_argument("-J", type=int, default=3)
    _add_common(p)
    p.set_defaults(func=cmd_expand)

    p = sub.add_parser("ckc", help="build coefficient-kernel rows at quadrature nodes")
    _add_ckc(p)
    p.add_argument("--points", help="CSV of centers (x,y,z)")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--kind", default="fibonacci", choices=["fibonacci", "uniform_random", "cap_perturbed"])
    p.add_argument("--quad-degree", type=int, dest="quad_degree")
    _add_common(p)
    p.set_defaults(func=cmd_ckc)

    p = sub.add_parser("approximate", help="one quasi-interpolant and its errors")
    _add_ckc(p)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--target", type=int, default=0, help="index into the config's target list")
    _add_common(p)
    p.set_defaults(func=cmd_approximate)

    p = sub.add_parser("converge", help="convergence study over several point-set sizes")
    _add_ckc(p)
    p.add_argument("--sizes", type=int, nargs="+")
    p.add_argument("--quiet", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_converge)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "threads", 1) < 1:
        parser.error("--threads must be >= 1")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"polysbf {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (KernelError, CKCError) as exc:
        print(f"polysbf {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
