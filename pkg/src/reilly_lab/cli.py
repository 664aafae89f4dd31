"""Command-line front end.

Exit codes: 0 success, 1 when a verification run records a violation,
2 for configuration errors (bad flags, unknown shapes, inadmissible p).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .bounds import SCHEMA_VERSION, BoundReport, VerifyOptions, verify
from .conformal import balance, conformal_factor_field, integrated_conformal_check
from .corpus import CORPUS_DOC, build_corpus_immersion
from .curvature import MissingCurvature, analytic_mean_curvature
from .geometry import MeshError, induced_metric, save_mesh, to_json_dict
from .spectrum import linear_eigensolve, minimize_rayleigh

EXIT_OK, EXIT_VIOLATION, EXIT_CONFIG = 0, 1, 2
SUMMARY_COLUMNS = ["shape", "p", "lambda", "main_bound", "margin", "equality", "schema_version"]
PLOT_COLUMNS = ["shape", "p", "lambda", "reilly", "dumao", "main", "lemma32", "schema_version"]

log = logging.getLogger("reilly_lab")


class ConfigError(ValueError):
    pass


def _p_list(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad p list {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty p list")
    return values


def _vector(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad vector {text!r}") from None


def _key_value(text: str) -> tuple[str, float]:
    key, sep, value = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    try:
        return key, float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"non-numeric value in {text!r}") from None


def _add_shape_args(sub: argparse.ArgumentParser) -> None:
    g = sub.add_argument_group("shape")
    g.add_argument("--shape", required=True, help="corpus shape (see `corpus list`)")
    g.add_argument("--n", type=int, help="intrinsic dimension (round_sphere)")
    g.add_argument("--radius", "--r", dest="radius", type=float, help="radius r (minor radius for the torus)")
    g.add_argument("--ambient", type=int, help="ambient dimension N (round_sphere)")
    g.add_argument("--a", type=float, help="ellipsoid semi-axis a")
    g.add_argument("--b", type=float, help="ellipsoid semi-axis b")
    g.add_argument("--c", type=float, help="ellipsoid semi-axis c")
    g.add_argument("--R", type=float, help="torus major radius")
    g.add_argument("--shift", type=_vector, help="ellipsoid translation x,y,z")
    g.add_argument("--param", type=_key_value, action="append", default=[], help="extra key=value parameter")
    g.add_argument(
        "--level", "--grid", "--resolution", dest="resolution", type=int, help="mesh refinement (level or grid size)"
    )


def _add_solver_args(sub: argparse.ArgumentParser) -> None:
    g = sub.add_argument_group("solver")
    g.add_argument("--restarts", type=int, default=6, help="minimizer restarts")
    g.add_argument("--max-iter", type=int, default=1000, help="iterations per restart")
    g.add_argument("--tol", type=float, default=1e-8, help="minimizer tolerance")
    g.add_argument("--seed", type=int, default=0, help="random seed for extra restarts")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(
        prog="reilly-lab",
        description="p-Laplacian eigenvalues and Reilly-type bounds on corpus submanifolds.",
        formatter_class=fmt,
        allow_abbrev=False,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    subs = parser.add_subparsers(dest="command", required=True)

    corpus = subs.add_parser("corpus", help="list corpus shapes", formatter_class=fmt, allow_abbrev=False)
    corpus.add_argument("action", choices=["list"])

    gen = subs.add_parser("generate", help="write a corpus mesh as JSON", formatter_class=fmt, allow_abbrev=False)
    _add_shape_args(gen)
    gen.add_argument("--out", type=Path, help="output file (stdout if omitted)")

    spec = subs.add_parser("spectrum", help="compute lambda_1,p", formatter_class=fmt, allow_abbrev=False)
    _add_shape_args(spec)
    _add_solver_args(spec)
    spec.add_argument("--p", type=_p_list, default=[2.0], help="comma-separated exponents")
    spec.add_argument("--linear", action="store_true", help="also run the linear p=2 solver")
    spec.add_argument("--out", type=Path, help="JSON output (stdout if omitted)")

    bal = subs.add_parser("balance", help="balance the conformal image", formatter_class=fmt, allow_abbrev=False)
    _add_shape_args(bal)
    bal.add_argument("--p", type=float, default=2.0, help="exponent")
    bal.add_argument("--balance-tol", type=float, default=1e-8, help="residual tolerance relative to vol")
    bal.add_argument("--out", type=Path, help="JSON output (stdout if omitted)")

    ver = subs.add_parser("verify", help="check every bound", formatter_class=fmt, allow_abbrev=False)
    _add_shape_args(ver)
    _add_solver_args(ver)
    ver.add_argument("--p", type=_p_list, default=[2.0], help="comma-separated exponents")
    ver.add_argument("--equality-tol", type=float, default=0.02, help="relative gap counted as equality")
    ver.add_argument("--balance-tol", type=float, default=1e-8, help="balancing residual relative to vol")
    ver.add_argument("--out", type=Path, help="report JSON (runtime goes to <out>.timing.json)")
    ver.add_argument("--csv", type=Path, help="summary CSV file")
    ver.add_argument("--sweep", action="store_true", help="also write plot data (lambda and bounds vs p)")
    ver.add_argument("--plot-out", type=Path, default=Path("plot_data.csv"), help="plot-data CSV path")
    ver.add_argument("--inject-curvature-scale", type=float, default=1.0, help=argparse.SUPPRESS)
    return parser


def _shape_params(args: argparse.Namespace) -> dict[str, Any]:
    params: dict[str, Any] = {}
    mapping = {"n": "n", "radius": "r", "ambient": "N", "a": "a", "b": "b", "c": "c", "R": "R"}
    for attr, key in mapping.items():
        value = getattr(args, attr)
        if value is not None:
            params[key] = value
    if args.shift is not None:
        params["shift"] = args.shift
    for key, value in args.param:
        params[key] = value
    return params


def _emit_json(data: Any, out: Path | None) -> None:
    text = json.dumps(data, indent=2, sort_keys=True) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text, encoding="utf-8")


def cmd_corpus(args: argparse.Namespace) -> int:
    for name, doc in CORPUS_DOC.items():
        print(f"{name:22s} {doc}")
    return EXIT_OK


def cmd_generate(args: argparse.Namespace) -> int:
    imm = build_corpus_immersion(args.shape, _shape_params(args), args.resolution)
    try:
        cd = analytic_mean_curvature(imm)
        analytic = {"name": args.shape, "H": cd.H, "S": cd.S, "params": imm.corpus_tag["params"]}
    except MissingCurvature:
        analytic = None
    if args.out is None:
        _emit_json(to_json_dict(imm, analytic), None)
    else:
        save_mesh(imm, args.out, analytic)
    print(f"{args.shape}: {imm.num_vertices} vertices, {imm.num_simplices} simplices", file=sys.stderr)
    return EXIT_OK


def cmd_spectrum(args: argparse.Namespace) -> int:
    imm = build_corpus_immersion(args.shape, _shape_params(args), args.resolution)
    md = induced_metric(imm)
    rows = []
    for p in args.p:
        if p <= 1:
            raise ConfigError(f"p must exceed 1, got {p}")
        res = minimize_rayleigh(imm, md, p, args.restarts, args.max_iter, args.tol, args.seed)
        row = {
            "shape": args.shape,
            "p": p,
            "lambda": res.lam,
            "converged": res.converged,
            "iterations": res.iterations,
            "restart_values": res.restart_values,
            "final_gradient_norm": res.final_gradient_norm,
        }
        if args.linear and p == 2:
            lin = linear_eigensolve(imm, md, seed=args.seed)
            row["linear"] = lin.lam
            row["linear_multiplicity"] = lin.extra["multiplicity"]
        rows.append(row)
    _emit_json({"schema_version": SCHEMA_VERSION, "runs": rows}, args.out)
    return EXIT_OK


def cmd_balance(args: argparse.Namespace) -> int:
    imm = build_corpus_immersion(args.shape, _shape_params(args), args.resolution)
    md = induced_metric(imm)
    bm = balance(imm, md, args.p, tol=args.balance_tol)
    cf = conformal_factor_field(bm, imm, md)
    data: dict[str, Any] = {
        "schema_version": SCHEMA_VERSION,
        "shape": args.shape,
        "p": args.p,
        "base_map": bm.base_map_tag,
        "b": bm.moebius.b.tolist(),
        "t": bm.moebius.t,
        "residual": bm.residual.tolist(),
        "residual_over_vol": bm.residual_norm / md.vol,
        "converged": bm.converged,
        "iterations": bm.iterations,
        "conformal_factor": {"max_deviation": cf.max_deviation, "mean_deviation": cf.mean_deviation},
    }
    try:
        data["integrated_check"] = integrated_conformal_check(bm, imm, md, analytic_mean_curvature(imm))
    except MissingCurvature:
        data["integrated_check"] = None
    _emit_json(data, args.out)
    return EXIT_OK if bm.converged else EXIT_VIOLATION


def _summary_row(r: BoundReport) -> list[Any]:
    return [r.shape, r.p, r.lam["value"], r.bounds["main"], r.margins["main"], r.equality["flag"], SCHEMA_VERSION]


def _plot_row(r: BoundReport) -> list[Any]:
    b = r.bounds
    return [r.shape, r.p, r.lam["value"], b["reilly"], b["dumao"], b["main"], b["lemma32"], SCHEMA_VERSION]


def _write_csv(path: Path | None, header: list[str], rows: list[list[Any]]) -> None:
    stream = sys.stdout if path is None else path.open("w", newline="", encoding="utf-8")
    try:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(["" if v is None else v for v in row])
    finally:
        if path is not None:
            stream.close()


def cmd_verify(args: argparse.Namespace) -> int:
    opts = VerifyOptions(
        restarts=args.restarts,
        max_iter=args.max_iter,
        tol=args.tol,
        seed=args.seed,
        equality_tol=args.equality_tol,
        balance_tol=args.balance_tol,
        curvature_scale=args.inject_curvature_scale,
    )
    reports: list[BoundReport] = []
    for shape in args.shape.split(","):
        reports.extend(verify(shape, _shape_params(args), args.resolution, args.p, opts))

    _write_csv(None, SUMMARY_COLUMNS, [_summary_row(r) for r in reports])
    if args.csv is not None:
        _write_csv(args.csv, SUMMARY_COLUMNS, [_summary_row(r) for r in reports])
    if args.sweep:
        _write_csv(args.plot_out, PLOT_COLUMNS, [_plot_row(r) for r in reports])
    if args.out is not None:
        _emit_json({"schema_version": SCHEMA_VERSION, "reports": [r.to_dict(include_runtime=False) for r in reports]}, args.out)
        timing = {"runtime_ms": [{"shape": r.shape, "p": r.p, "runtime_ms": r.runtime_ms} for r in reports]}
        _emit_json(timing, args.out.with_name(args.out.name + ".timing.json"))
    violations = [(r.shape, r.p, v) for r in reports for v in r.violations]
    for shape, p, v in violations:
        print(f"violation: {shape} p={p}: {json.dumps(v, default=float)}", file=sys.stderr)
    return EXIT_VIOLATION if violations else EXIT_OK


COMMANDS = {
    "corpus": cmd_corpus,
    "generate": cmd_generate,
    "spectrum": cmd_spectrum,
    "balance": cmd_balance,
    "verify": cmd_verify,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, MeshError, MissingCurvature, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
