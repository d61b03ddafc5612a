"""Columnar text input and structured report output."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .covering import BallFamily, CoverResult, ExtractionTrace, VerificationReport
from .measures import AtomicMeasure
from .metrics import MetricSpec


def read_columns(path: str | Path) -> np.ndarray:
    """Numeric table, one record per line; ``#`` comments, comma or blank separated."""
    text = Path(path).read_text(encoding="utf-8")
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].replace(",", " ").strip()
        if not line:
            continue
        try:
            rows.append([float(tok) for tok in line.split()])
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from exc
    if not rows:
        raise ValueError(f"{path}: no records")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise ValueError(f"{path}: ragged rows")
    return np.array(rows)


def _split(path: str | Path, spec: MetricSpec, what: str) -> tuple[np.ndarray, np.ndarray]:
    table = read_columns(path)
    if table.shape[1] != spec.dim + 1:
        raise ValueError(
            f"{path}: expected {spec.dim} coordinates plus {what} per line, got {table.shape[1]} columns"
        )
    return table[:, :-1], table[:, -1]


def load_ball_family(path: str | Path, spec: MetricSpec) -> BallFamily:
    centers, radii = _split(path, spec, "radius")
    return BallFamily(spec, centers, radii)


def load_measure(path: str | Path, spec: MetricSpec) -> AtomicMeasure:
    points, masses = _split(path, spec, "mass")
    return AtomicMeasure(spec, points, masses)


def _write_columns(path: str | Path, points: np.ndarray, last: np.ndarray, header: str) -> Path:
    path = Path(path)
    buf = io.StringIO()
    buf.write(f"# {header}\n")
    for p, v in zip(points, last):
        buf.write(" ".join(format(float(c), ".17g") for c in p) + " " + format(float(v), ".17g") + "\n")
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path


def save_ball_family(family: BallFamily, path: str | Path) -> Path:
    return _write_columns(path, family.centers, family.radii, "center coordinates, radius")


def save_measure(measure: AtomicMeasure, path: str | Path) -> Path:
    return _write_columns(path, measure.points, measure.masses, "point coordinates, mass")


def cover_report(family: BallFamily, result: CoverResult, check: VerificationReport | None = None) -> dict[str, Any]:
    report: dict[str, Any] = {
        "kind": "cover",
        "metric_spec": family.spec.to_dict(),
        "algorithm": result.algorithm,
        "balls": len(family),
        "tau": result.tau,
        "selected": [int(i) for i in result.selected],
        "multiplicity_max": result.multiplicity_max,
        "multiplicity_hist": {str(k): v for k, v in result.multiplicity_hist.items()},
    }
    if check is not None:
        report["verified"] = check.ok
        report["failures"] = list(check.failures)
    return report


def extraction_report(trace: ExtractionTrace, check: VerificationReport | None = None) -> dict[str, Any]:
    report: dict[str, Any] = {
        "kind": "extract",
        "initial_mass": trace.initial_mass,
        "Q": trace.Q,
        "u": trace.u,
        "rounds": [
            {"kept": r.kept, "captured": r.captured, "residual": r.residual, "colors": r.colors}
            for r in trace.rounds
        ],
    }
    if check is not None:
        report["verified"] = check.ok
        report["failures"] = list(check.failures)
    return report


def dump_report(report: dict[str, Any], path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    return path


def load_report(path: str | Path) -> dict[str, Any]:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format(v, ".17g") if isinstance(v, float) else v for v in row])
    return path
