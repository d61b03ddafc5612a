"""Command-line experiment runner.

Exit status: 0 success, 1 validation failure, 2 usage error, 3 I/O error,
4 budget exhausted before reaching the target.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import os
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import covering, measures, plotting, wbcp
from . import io as cio
from .metrics import (
    Euclidean,
    HebischSikora,
    HeisenbergEps,
    Koranyi,
    LpMeanProduct,
    MaxProduct,
    MetricSpec,
    NonStandardGauge,
    PNorm,
    Snowflake,
)

EXIT_OK, EXIT_INVALID, EXIT_USAGE, EXIT_IO, EXIT_BUDGET = 0, 1, 2, 3, 4
OUT_ENV = "COVLAB_OUT"

METRICS = ("euclidean", "pnorm", "maxproduct", "lpmean", "koranyi", "hs", "eps", "nonstandard")

# flag name -> built-in default; a flag left unset falls back to the config file, then here
DEFAULTS: dict[str, Any] = {
    "metric": "euclidean",
    "dim": 2,
    "p": 2.0,
    "lp_s": 3.0,
    "gamma": 2.0,
    "eps": 1.0,
    "alpha": 2.0,
    "snowflake_s": None,
    "k": 8,
    "radius_cap": None,
    "seed": 0,
    "restarts": 64,
    "iters": 20_000,
    "tolerance": None,
    "out": None,
}


class UsageError(Exception):
    pass


def diag(level: str, message: str, **extra: Any) -> None:
    """One JSON object per line on stderr."""
    record = {"level": level, "message": message, **extra}
    print(json.dumps(record, sort_keys=True, default=str), file=sys.stderr)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def resolve(args: argparse.Namespace) -> argparse.Namespace:
    """Fill unset flags from ``--config`` (JSON object) and then from DEFAULTS."""
    config: dict[str, Any] = {}
    if getattr(args, "config", None):
        try:
            config = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except ValueError as exc:
            raise UsageError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(config, dict):
            raise UsageError("config file must hold a JSON object")
        config = {k.replace("-", "_"): v for k, v in config.items()}
        unknown = set(config) - set(DEFAULTS)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
    for key, default in DEFAULTS.items():
        if getattr(args, key, None) is None:
            setattr(args, key, config.get(key, default))
    if args.metric not in METRICS:
        raise UsageError(f"unknown metric {args.metric!r}")
    return args


def metric_from_args(args: argparse.Namespace) -> MetricSpec:
    try:
        name = args.metric
        if name == "euclidean":
            spec: MetricSpec = Euclidean(int(args.dim))
        elif name == "pnorm":
            spec = PNorm(int(args.dim), float(args.p))
        elif name == "maxproduct":
            spec = MaxProduct(Euclidean(int(args.dim)), Euclidean(int(args.dim)))
        elif name == "lpmean":
            spec = LpMeanProduct(float(args.p), float(args.lp_s))
        elif name == "koranyi":
            spec = Koranyi()
        elif name == "hs":
            spec = HebischSikora(float(args.gamma))
        elif name == "eps":
            spec = HeisenbergEps(float(args.eps))
        else:
            spec = NonStandardGauge(float(args.alpha))
        if args.snowflake_s is not None:
            spec = Snowflake(spec, float(args.snowflake_s))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return spec


def out_dir(args: argparse.Namespace) -> Path:
    path = Path(args.out or os.environ.get(OUT_ENV) or ".")
    path.mkdir(parents=True, exist_ok=True)
    return path


def budget_from_args(args: argparse.Namespace, target: int) -> wbcp.SearchBudget:
    try:
        return wbcp.SearchBudget(
            restarts=int(args.restarts), iterations=int(args.iters), target=target, seed=int(args.seed)
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cert_name(cert: wbcp.BesicovitchCertificate) -> str:
    return f"cert_{cert.spec.label()}_k{cert.k}.json"


def _emit(record: dict[str, Any]) -> None:
    print(json.dumps(record, sort_keys=True))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_search(args: argparse.Namespace) -> int:
    spec = metric_from_args(args)
    k = int(args.k)
    if k < 1:
        raise UsageError("--k must be positive")
    budget = budget_from_args(args, k)
    dest = out_dir(args)
    sizes = range(1, k + 1) if args.sweep else [k]
    for size in sizes:
        cert = wbcp.search_family(spec, size, budget, radius_cap=args.radius_cap)
        if not cert.valid:
            diag("warning", "budget exhausted without a valid family", metric=spec.label(), k=size, margin=cert.margin)
            return EXIT_BUDGET
        path = wbcp.export_certificate(cert, dest / cert_name(cert))
        _emit({"k": size, "margin": cert.margin, "metric": spec.label(), "path": str(path)})
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    invalid = unreadable = False
    for name in args.files:
        try:
            text = Path(name).read_text(encoding="utf-8")
        except OSError as exc:
            diag("error", "cannot read certificate", path=name, error=str(exc))
            unreadable = True
            continue
        try:
            cert = wbcp.loads_certificate(text)
        except wbcp.CertificateError as exc:
            diag("error", "malformed certificate", path=name, error=str(exc))
            invalid = True
            continue
        threshold = cert.accept_threshold() if args.tolerance is None else float(args.tolerance)
        ok = cert.margin > threshold
        _emit({"k": cert.k, "margin": cert.margin, "metric": cert.spec.label(), "path": name, "valid": ok})
        invalid |= not ok
    return EXIT_INVALID if invalid else EXIT_IO if unreadable else EXIT_OK


def cmd_grow(args: argparse.Namespace) -> int:
    try:
        cert = wbcp.import_certificate(args.file)
    except OSError as exc:
        diag("error", "cannot read certificate", path=args.file, error=str(exc))
        return EXIT_IO
    except wbcp.CertificateError as exc:
        diag("error", "malformed certificate", path=args.file, error=str(exc))
        return EXIT_INVALID
    if not cert.valid:
        diag("error", "input certificate is not valid", path=args.file, margin=cert.margin)
        return EXIT_INVALID
    budget = budget_from_args(args, cert.k + 1)
    dest = out_dir(args)
    for _ in range(int(args.steps)):
        grown = wbcp.grow_family(cert, budget)
        if grown.k == cert.k:
            diag("warning", "could not grow family", k=cert.k, metric=cert.spec.label())
            return EXIT_BUDGET
        cert = grown
        path = wbcp.export_certificate(cert, dest / cert_name(cert))
        _emit({"k": cert.k, "margin": cert.margin, "metric": cert.spec.label(), "path": str(path)})
    return EXIT_OK


def cmd_cover(args: argparse.Namespace) -> int:
    spec = metric_from_args(args)
    family = cio.load_ball_family(args.file, spec)
    if args.algo == "5r":
        result = covering.greedy_5r_cover(family)
        check = covering.verify_5r_cover(family, result)
    else:
        result = covering.besicovitch_select(family)
        ok = covering.centers_covered(family, result.selected)
        check = covering.VerificationReport(ok, [] if ok else ["centers not covered"])
    report = cio.cover_report(family, result, check)
    if args.algo == "besicovitch":
        coloring = covering.disjoint_color(family, result)
        report["colors"] = coloring.Q
        report["coloring"] = {str(i): c for i, c in sorted(coloring.colors.items())}
    path = cio.dump_report(report, out_dir(args) / f"cover_{args.algo}_{Path(args.file).stem}.json")
    _emit({"algorithm": args.algo, "path": str(path), "selected": len(result.selected),
           "multiplicity_max": result.multiplicity_max, "verified": check.ok})
    if not check.ok:
        for failure in check.failures:
            diag("error", failure)
        return EXIT_INVALID
    return EXIT_OK


def cmd_extract(args: argparse.Namespace) -> int:
    spec = metric_from_args(args)
    lam = cio.load_measure(args.measure, spec)
    family = cio.load_ball_family(args.balls, spec)
    A = cio.read_columns(args.set) if args.set else lam.points
    try:
        trace = covering.vitali_extract(lam, A, family)
    except ValueError as exc:
        diag("error", str(exc))
        return EXIT_INVALID
    check = covering.verify_extraction(lam, A, family, trace)
    dest = out_dir(args)
    path = cio.dump_report(cio.extraction_report(trace, check), dest / f"extract_{Path(args.measure).stem}.json")
    plotting.plot_extraction(trace, dest / f"extract_{Path(args.measure).stem}.png")
    _emit({"path": str(path), "rounds": len(trace.rounds), "residual": trace.residual, "u": trace.u, "verified": check.ok})
    return EXIT_OK if check.ok else EXIT_INVALID


def cmd_diff(args: argparse.Namespace) -> int:
    dest = out_dir(args)
    if args.experiment == "density":
        spec = metric_from_args(args)
        mu = cio.load_measure(args.mu, spec)
        lam = cio.load_measure(args.lam, spec)
        rows = []
        for p in lam.points:
            est = measures.derivative_at(mu, lam, p)
            rows.append([*map(float, p), float(est.upper), float(est.lower), lam.mass_at(p), mu.mass_at(p)])
        cols = [f"x{i}" for i in range(spec.dim)]
        path = cio.write_csv(dest / "density.csv", [*cols, "upper", "lower", "lam_mass", "mu_mass"], rows)
        residual = measures.density_representation_check(mu, lam)
        _emit({"path": str(path), "representation_residual": float(residual)})
        return EXIT_OK if residual == 0 else EXIT_INVALID
    lam = measures.grid_lebesgue(int(args.grid), 2)
    op = measures.MaximalOperator(lam)
    rng = np.random.default_rng(int(args.seed))
    rows, ok = [], True
    for i in range(int(args.functions)):
        f = random_test_function(rng, len(lam))
        rep = measures.weak11_check(f, lam, operator=op)
        ok &= rep.holds
        rows.append([i, rep.norm, rep.sup_ratio, rep.alpha_star, rep.multiplicity, rep.holds])
    path = cio.write_csv(dest / "weak11.csv", ["function", "norm", "sup_ratio", "alpha_star", "multiplicity", "holds"], rows)
    plotting.plot_weak11([r[2] for r in rows], [r[4] or 0 for r in rows], dest / "weak11.png")
    summary = {"max_ratio": max((r[2] for r in rows), default=0.0),
               "multiplicity": max((r[4] or 0 for r in rows), default=0), "holds": ok}
    cio.dump_report({"kind": "weak11", "grid": int(args.grid), "functions": int(args.functions),
                     "seed": int(args.seed), **summary, "ratios": [r[2] for r in rows]},
                    dest / f"weak11_g{int(args.grid)}_s{int(args.seed)}.json")
    _emit({"path": str(path), **summary})
    return EXIT_OK if ok else EXIT_INVALID


def random_test_function(rng: np.random.Generator, n: int) -> np.ndarray:
    """Nonnegative values, mixing dense noise with sparse spikes."""
    density = rng.uniform(0.002, 1.0)
    return rng.random(n) * (rng.random(n) < density)


def cmd_report(args: argparse.Namespace) -> int:
    dest = out_dir(args)
    best: dict[str, wbcp.BesicovitchCertificate] = {}
    series: dict[str, list[tuple[int, float]]] = {}
    cover_rows, extract_rows, weak_rows, bad = [], [], [], []
    for name in sorted(args.files):
        try:
            text = Path(name).read_text(encoding="utf-8")
            data = json.loads(text)
            if not isinstance(data, dict):
                raise ValueError("expected a JSON object")
            if "format_version" in data:
                cert = wbcp.loads_certificate(text)
                label = cert.spec.label()
                series.setdefault(label, []).append((cert.k, cert.margin))
                cur = best.get(label)
                if cert.valid and (cur is None or (cert.k, cert.margin) > (cur.k, cur.margin)):
                    best[label] = cert
            elif data.get("kind") == "cover":
                cover_rows.append([Path(name).name, data["algorithm"], data["balls"], len(data["selected"]),
                                   data["multiplicity_max"], data.get("colors", ""), data.get("verified", "")])
            elif data.get("kind") == "extract":
                extract_rows.append([Path(name).name, len(data["rounds"]), data["Q"], data["u"],
                                     data["rounds"][-1]["residual"] if data["rounds"] else data["initial_mass"],
                                     data.get("verified", "")])
            elif data.get("kind") == "weak11":
                weak_rows.append([Path(name).name, data["grid"], data["functions"], data["seed"],
                                  data["max_ratio"], data["multiplicity"], data["holds"]])
            else:
                raise ValueError("unrecognised report")
        except (OSError, ValueError, KeyError, TypeError) as exc:
            diag("error", "skipping malformed input", path=name, error=str(exc))
            bad.append(name)
    rows = []
    for label in sorted(best):
        c = best[label]
        rows.append([label, c.k, c.margin, c.seed, c.budget.get("restarts", ""), c.budget.get("iterations", "")])
    cio.write_csv(dest / "wbcp_summary.csv", ["metric", "k", "margin", "seed", "restarts", "iterations"], rows)
    cio.write_csv(dest / "cover_summary.csv",
                  ["file", "algorithm", "balls", "selected", "multiplicity_max", "colors", "verified"], cover_rows)
    cio.write_csv(dest / "extract_summary.csv", ["file", "rounds", "Q", "u", "residual", "verified"], extract_rows)
    cio.write_csv(dest / "weak11_summary.csv",
                  ["file", "grid", "functions", "seed", "max_ratio", "multiplicity", "holds"], weak_rows)
    plotting.plot_margins(series, dest / "wbcp_margins.png")
    for label, cert in sorted(best.items()):
        plotting.plot_certificate(cert, dest / f"family_{label}_k{cert.k}.png")
    stamp = _dt.datetime.now(_dt.timezone.utc).replace(microsecond=0).isoformat()
    (dest / "manifest.txt").write_text(
        f"# generated {stamp}\n" + "".join(f"{n}\n" for n in sorted(args.files)), encoding="utf-8"
    )
    _emit({"metrics": len(rows), "covers": len(cover_rows), "extractions": len(extract_rows),
           "weak11": len(weak_rows), "skipped": len(bad)})
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _metric_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("metric")
    g.add_argument("--metric", choices=METRICS)
    g.add_argument("--dim", type=int, help="dimension for euclidean, pnorm and maxproduct factors")
    g.add_argument("--p", type=float, help="exponent for pnorm and lpmean")
    g.add_argument("--lp-s", type=float, help="second-factor power for lpmean")
    g.add_argument("--gamma", type=float, help="radius of the hs unit ball")
    g.add_argument("--eps", type=float, help="horizontal weight for eps")
    g.add_argument("--alpha", type=float, help="grading exponent for nonstandard")
    g.add_argument("--snowflake-s", type=float, help="wrap the metric in its snowflake d^s")


def _budget_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int)
    p.add_argument("--restarts", type=int)
    p.add_argument("--iters", type=int)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help=f"output directory (default ${OUT_ENV} or the working directory)")
    common.add_argument("--config", help="JSON file of flag values; explicit flags win")
    common.add_argument("--tolerance", type=float)

    parser = argparse.ArgumentParser(prog="covlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("search", parents=[common], help="search for a Besicovitch family")
    _metric_flags(p)
    _budget_flags(p)
    p.add_argument("--k", type=int, help="family size")
    p.add_argument("--radius-cap", type=float)
    p.add_argument("--sweep", action="store_true", help="search sizes 1..k, stop at the first failure")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("validate", parents=[common], help="re-validate certificate files")
    p.add_argument("files", nargs="+")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("grow", parents=[common], help="extend a certificate by one ball at a time")
    _budget_flags(p)
    p.add_argument("file")
    p.add_argument("--steps", type=int, default=1)
    p.set_defaults(func=cmd_grow)

    p = sub.add_parser("cover", parents=[common], help="run a covering algorithm on a ball file")
    _metric_flags(p)
    p.add_argument("file")
    p.add_argument("--algo", choices=("5r", "besicovitch"), default="5r")
    p.set_defaults(func=cmd_cover)

    p = sub.add_parser("extract", parents=[common], help="disjoint extraction on an atomic measure")
    _metric_flags(p)
    p.add_argument("measure")
    p.add_argument("balls")
    p.add_argument("--set", help="points of the target set (default: all atoms)")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("diff", parents=[common], help="measure differentiation experiments")
    _metric_flags(p)
    p.add_argument("experiment", choices=("density", "weak11"))
    p.add_argument("--mu")
    p.add_argument("--lam")
    p.add_argument("--grid", type=int, default=64)
    p.add_argument("--functions", type=int, default=100)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_diff)

    p = sub.add_parser("report", parents=[common], help="summary tables and figures")
    p.add_argument("files", nargs="*")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        resolve(args)
        if args.command == "diff" and args.experiment == "density" and not (args.mu and args.lam):
            raise UsageError("diff density needs --mu and --lam")
        return args.func(args)
    except UsageError as exc:
        diag("error", str(exc), code=EXIT_USAGE)
        return EXIT_USAGE
    except OSError as exc:
        diag("error", str(exc), code=EXIT_IO)
        return EXIT_IO
    except ValueError as exc:
        diag("error", str(exc), code=EXIT_INVALID)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
