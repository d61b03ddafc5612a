"""Finite, constructive versions of the classical covering theorems.

Two balls are treated as *disjoint* only when ``d(c, c') > r + r' + strict``;
otherwise they are treated as meeting. In any metric space the first condition
implies disjointness, and in geodesic spaces such as normed spaces the second
one implies a common point, so for Euclidean inputs both tests are exact up
to the strictness margin.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Callable, Sequence

import numpy as np

from .metrics import DELTA_STRICT, Euclidean, MetricSpec, PNorm, as_points

if TYPE_CHECKING:
    from .measures import AtomicMeasure

Overlap = Callable[[int, int], bool]


@dataclass(frozen=True)
class Ball:
    center: np.ndarray
    radius: float

    def __post_init__(self) -> None:
        if not (self.radius > 0 and math.isfinite(self.radius)):
            raise ValueError(f"ball radius must be positive and finite, got {self.radius}")

    def scaled(self, tau: float) -> Ball:
        return Ball(self.center, tau * self.radius)


@dataclass
class BallFamily:
    spec: MetricSpec
    centers: np.ndarray
    radii: np.ndarray

    def __post_init__(self) -> None:
        self.centers = as_points(self.centers, self.spec.dim).reshape(-1, self.spec.dim)
        self.radii = np.asarray(self.radii, dtype=float).reshape(-1)
        if len(self.centers) == 0:
            raise ValueError("ball family is empty")
        if len(self.centers) != len(self.radii):
            raise ValueError("centers and radii differ in length")
        if not np.all((self.radii > 0) & np.isfinite(self.radii)):
            raise ValueError("radii must be positive and finite")
        if not np.all(np.isfinite(self.centers)):
            raise ValueError("centers must be finite")

    @classmethod
    def from_balls(cls, spec: MetricSpec, balls: Sequence[Ball]) -> BallFamily:
        return cls(spec, np.array([b.center for b in balls]), np.array([b.radius for b in balls]))

    def __len__(self) -> int:
        return len(self.radii)

    def ball(self, i: int) -> Ball:
        return Ball(self.centers[i], float(self.radii[i]))

    def order(self) -> np.ndarray:
        """Indices by decreasing radius, ties by input index."""
        return np.lexsort((np.arange(len(self)), -self.radii))

    def subset(self, indices: Sequence[int]) -> BallFamily:
        idx = np.asarray(indices, dtype=int)
        return BallFamily(self.spec, self.centers[idx], self.radii[idx])


@dataclass
class CoverResult:
    selected: np.ndarray
    tau: float
    multiplicity_max: int = 0
    multiplicity_hist: dict[int, int] = field(default_factory=dict)
    algorithm: str = ""


@dataclass
class DisjointColoring:
    colors: dict[int, int]

    @property
    def Q(self) -> int:
        return max(self.colors.values(), default=0)

    def classes(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {}
        for idx, c in self.colors.items():
            out.setdefault(c, []).append(idx)
        return out


@dataclass
class VerificationReport:
    ok: bool
    failures: list[str]
    stats: dict[str, Any] = field(default_factory=dict)

    def __bool__(self) -> bool:
        return self.ok


@dataclass
class ExtractionRound:
    kept: list[int]
    captured: float
    residual: float
    colors: int


@dataclass
class ExtractionTrace:
    initial_mass: float
    rounds: list[ExtractionRound]

    @property
    def Q(self) -> int:
        return max((r.colors for r in self.rounds), default=1)

    @property
    def u(self) -> float:
        return 1.0 - 1.0 / (4.0 * self.Q)

    @property
    def residual(self) -> float:
        return self.rounds[-1].residual if self.rounds else self.initial_mass

    @property
    def kept(self) -> list[int]:
        return [i for r in self.rounds for i in r.kept]


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _pair_distances(spec: MetricSpec, P: np.ndarray, Q: np.ndarray, chunk: int = 2048):
    for start in range(0, len(P), chunk):
        yield start, spec(P[start : start + chunk, None, :], Q[None, :, :])


def coverage_counts(family: BallFamily, selected: Sequence[int], probes: np.ndarray, tol: float = 0.0) -> np.ndarray:
    """Number of selected balls containing each probe point (closed balls)."""
    sel = np.asarray(selected, dtype=int)
    counts = np.zeros(len(probes), dtype=int)
    if len(sel) == 0:
        return counts
    C, R = family.centers[sel], family.radii[sel]
    for start, D in _pair_distances(family.spec, probes, C):
        counts[start : start + len(D)] = np.sum(D <= R[None, :] + tol, axis=1)
    return counts


def circle_probes(family: BallFamily, selected: Sequence[int], strict: float = DELTA_STRICT) -> np.ndarray:
    """Probe points where the depth of a planar disk arrangement is maximal.

    The deepest cell of an arrangement of closed disks has a boundary point that
    is either a crossing of two circles or, when no crossing bounds it, any
    point of a bounding circle. Probing all pairwise crossings, one point per
    circle and all centers therefore finds the exact maximum depth.
    """
    sel = np.asarray(selected, dtype=int)
    C, R = family.centers[sel], family.radii[sel]
    pts = [family.centers, C + np.column_stack([R, np.zeros_like(R)])]
    if len(sel) > 1:
        i, j = np.triu_indices(len(sel), 1)
        d = np.linalg.norm(C[j] - C[i], axis=1)
        ok = (d <= R[i] + R[j]) & (d >= np.abs(R[i] - R[j])) & (d > 0)
        i, j, d = i[ok], j[ok], d[ok]
        along = (R[i] ** 2 - R[j] ** 2 + d**2) / (2 * d)
        h = np.sqrt(np.maximum(R[i] ** 2 - along**2, 0.0))
        e = (C[j] - C[i]) / d[:, None]
        base = C[i] + along[:, None] * e
        perp = np.column_stack([-e[:, 1], e[:, 0]])
        pts += [base + h[:, None] * perp, base - h[:, None] * perp]
    return np.concatenate(pts, axis=0)


def multiplicity_profile(
    family: BallFamily, selected: Sequence[int], probes: np.ndarray | None = None, tol: float = 1e-9
) -> tuple[int, dict[int, int]]:
    """Maximum and histogram of cover counts at probe points.

    Boundary probes are counted with a small tolerance so that rounding can
    only over-count; the recorded maximum is an upper estimate.
    """
    if probes is None:
        if isinstance(family.spec, Euclidean) and family.spec.n == 2:
            probes = circle_probes(family, selected)
        else:
            probes = family.centers
    counts = coverage_counts(family, selected, probes, tol)
    hist = dict(sorted(Counter(counts.tolist()).items()))
    return int(counts.max(initial=0)), hist


# ---------------------------------------------------------------------------
# 5r covering
# ---------------------------------------------------------------------------

def greedy_5r_cover(family: BallFamily, strict: float = DELTA_STRICT) -> CoverResult:
    """Disjointed subfamily whose 5-fold dilates cover every ball of ``family``.

    Balls are scanned by decreasing radius and kept when certifiably disjoint
    from everything kept so far. A rejected ball meets a kept ball that is at
    least as large, hence lies inside its 3-fold (so 5-fold) dilate.
    """
    spec = family.spec
    m = len(family)
    C = np.empty_like(family.centers)
    R = np.empty(m)
    chosen: list[int] = []
    for i in family.order():
        c, r = family.centers[i], family.radii[i]
        n = len(chosen)
        if n == 0 or np.all(spec(C[:n], c) - R[:n] - r > strict):
            C[n], R[n] = c, r
            chosen.append(int(i))
    selected = np.array(chosen, dtype=int)
    mult, hist = multiplicity_profile(family, selected, probes=family.centers)
    return CoverResult(selected, 5.0, mult, hist, "5r")


def verify_5r_cover(family: BallFamily, result: CoverResult, strict: float = DELTA_STRICT) -> VerificationReport:
    """Replay the three guarantees of a 5r cover and itemise failures.

    * disjointness: ``d(c, c') - r - r' > strict`` for selected pairs;
    * half radius: each ball meets (is not certifiably disjoint from) a selected
      ball with at least half its radius;
    * containment: each ball satisfies ``d(c, c') + r <= 5 r'`` for some
      selected ball, which implies ``B`` is inside ``5B'``.
    """
    failures: list[str] = []
    sel = np.asarray(result.selected, dtype=int)
    m = len(family)
    if len(sel) == 0:
        return VerificationReport(False, ["empty selection"])
    if np.any((sel < 0) | (sel >= m)) or len(set(sel.tolist())) != len(sel):
        return VerificationReport(False, ["invalid or repeated indices"])
    spec = family.spec
    C, R = family.centers[sel], family.radii[sel]
    tau = result.tau
    overlapping = 0
    for start, D in _pair_distances(spec, C, C):
        rows = np.arange(start, start + len(D))
        gap = D - R[rows, None] - R[None, :]
        gap[np.arange(len(D)), rows] = np.inf
        bad = np.argwhere(gap <= strict)
        overlapping += len(bad)
        for a, b in bad[:5]:
            if len(failures) < 20:
                failures.append(f"disjointness: selected {sel[rows[a]]} and {sel[b]} overlap")
    no_meet = no_contain = 0
    for start, D in _pair_distances(spec, family.centers, C):
        r = family.radii[start : start + len(D), None]
        meets = (R[None, :] >= r / 2) & (D <= r + R[None, :] + strict)
        contained = D + r <= tau * R[None, :]
        for k in np.nonzero(~meets.any(axis=1))[0]:
            no_meet += 1
            if len(failures) < 20:
                failures.append(f"half-radius: ball {start + k} meets no selected ball of radius >= half")
        for k in np.nonzero(~contained.any(axis=1))[0]:
            no_contain += 1
            if len(failures) < 20:
                failures.append(f"containment: ball {start + k} not inside any {tau:g}B'")
    stats = {"overlapping_pairs": overlapping // 2, "unmet": no_meet, "uncontained": no_contain}
    return VerificationReport(not failures, failures, stats)


# ---------------------------------------------------------------------------
# Besicovitch selection and disjoint colouring
# ---------------------------------------------------------------------------

def besicovitch_select(family: BallFamily, *, probes: np.ndarray | None = None) -> CoverResult:
    """Greedy Besicovitch subfamily covering every input center.

    Balls are scanned by decreasing radius (ties by index); a ball is kept when
    its center is not yet covered by a kept ball.
    """
    if not isinstance(family.spec, (Euclidean, PNorm)):
        raise ValueError(f"besicovitch_select supports normed spaces only, got {family.spec.kind}")
    return _center_greedy(family, probes)


def _center_greedy(family: BallFamily, probes: np.ndarray | None = None) -> CoverResult:
    spec = family.spec
    m = len(family)
    C = np.empty_like(family.centers)
    R = np.empty(m)
    chosen: list[int] = []
    for i in family.order():
        c = family.centers[i]
        n = len(chosen)
        if n == 0 or not np.any(spec(C[:n], c) <= R[:n]):
            C[n], R[n] = c, family.radii[i]
            chosen.append(int(i))
    selected = np.array(chosen, dtype=int)
    mult, hist = multiplicity_profile(family, selected, probes)
    return CoverResult(selected, 1.0, mult, hist, "besicovitch")


def centers_covered(family: BallFamily, selected: Sequence[int]) -> bool:
    return bool(np.all(coverage_counts(family, selected, family.centers) >= 1))


def geometric_overlap(family: BallFamily, strict: float = DELTA_STRICT) -> Overlap:
    spec = family.spec

    def overlap(i: int, j: int) -> bool:
        d = float(spec(family.centers[i], family.centers[j]))
        return d - family.radii[i] - family.radii[j] <= strict

    return overlap


def disjoint_color(
    family: BallFamily,
    selected: CoverResult | Sequence[int],
    *,
    overlap: Overlap | None = None,
    strict: float = DELTA_STRICT,
) -> DisjointColoring:
    """Greedy colouring of the overlap graph, largest balls first.

    Each colour class is a disjointed subfamily; ``Q`` is the number of
    colours actually used.
    """
    sel = np.asarray(selected.selected if isinstance(selected, CoverResult) else selected, dtype=int)
    if overlap is None:
        overlap = geometric_overlap(family, strict)
    order = sorted(sel.tolist(), key=lambda i: (-family.radii[i], i))
    colors: dict[int, int] = {}
    for i in order:
        used = {colors[j] for j in colors if overlap(i, j)}
        c = 1
        while c in used:
            c += 1
        colors[i] = c
    return DisjointColoring(colors)


def verify_coloring(
    family: BallFamily, coloring: DisjointColoring, *, overlap: Overlap | None = None, strict: float = DELTA_STRICT
) -> VerificationReport:
    if overlap is None:
        overlap = geometric_overlap(family, strict)
    failures = []
    for c, members in coloring.classes().items():
        for a in range(len(members)):
            for b in range(a + 1, len(members)):
                if overlap(members[a], members[b]):
                    failures.append(f"colour {c}: balls {members[a]} and {members[b]} overlap")
    return VerificationReport(not failures, failures, {"Q": coloring.Q})


# ---------------------------------------------------------------------------
# Vitali-type extraction on atomic measures
# ---------------------------------------------------------------------------

def vitali_extract(lam: AtomicMeasure, A: Any, family: BallFamily, max_rounds: int = 10_000) -> ExtractionTrace:
    """Disjoint balls exhausting the ``lam``-mass of ``A`` round by round.

    The ambient space is the finite set made of the atoms of ``lam`` and the
    points of ``A``, so each ball is the set of those points within its closed
    radius and two balls are disjoint iff they share no point. Each round:

    1. admissible balls are centred at an uncovered point of ``A`` and contain
       only uncovered points of ``A`` (so they avoid every ball kept earlier and
       carry no mass outside ``A``);
    2. a Besicovitch subfamily covering the uncovered centers is coloured into
       ``Q`` disjointed classes;
    3. the class carrying the most uncovered mass is kept.

    Since the classes cover the uncovered part of ``A``, the kept class carries
    at least a ``1/Q`` share of it and the residual decays at least by the
    factor ``1 - 1/(4Q)``. Stops when the residual is zero or nothing is
    admissible.
    """
    A = as_points(A, lam.spec.dim).reshape(-1, lam.spec.dim)
    if family.spec != lam.spec:
        raise ValueError("ball family and measure use different metrics")
    universe, mass = _universe(lam, A)
    n_a = len(A)
    # membership[b, u]: universe point u lies in ball b
    membership = np.zeros((len(family), len(universe)), dtype=bool)
    for start, D in _pair_distances(family.spec, family.centers, universe):
        membership[start : start + len(D)] = D <= family.radii[start : start + len(D), None]
    center_of = _center_index(family, universe[:n_a])
    missing = set(range(n_a)) - set(center_of[center_of >= 0].tolist())
    if missing:
        raise ValueError(f"points of A are not centers of any ball: {sorted(missing)[:5]}")

    remaining = np.zeros(len(universe), dtype=bool)
    remaining[:n_a] = True
    initial = math.fsum(mass[:n_a])
    rounds: list[ExtractionRound] = []
    residual = initial
    while residual > 0 and len(rounds) < max_rounds:
        admissible = np.nonzero(
            (center_of >= 0) & remaining[np.maximum(center_of, 0)] & ~np.any(membership & ~remaining, axis=1)
        )[0]
        if len(admissible) == 0:
            break
        sub = family.subset(admissible)
        order = sub.order()
        covered = np.zeros(len(universe), dtype=bool)
        chosen: list[int] = []
        for i in order:
            b = admissible[i]
            if not covered[center_of[b]]:
                chosen.append(int(b))
                covered |= membership[b]
        coloring = disjoint_color(
            family, chosen, overlap=lambda i, j: bool(np.any(membership[i] & membership[j]))
        )
        best_mass, best_class = -1.0, []
        for c, members in sorted(coloring.classes().items()):
            union = np.any(membership[members], axis=0) & remaining
            got = math.fsum(mass[union])
            if got > best_mass:
                best_mass, best_class = got, members
        remaining &= ~np.any(membership[best_class], axis=0)
        residual = math.fsum(mass[:n_a][remaining[:n_a]])
        rounds.append(ExtractionRound(sorted(best_class), best_mass, residual, coloring.Q))
    return ExtractionTrace(initial, rounds)


def _universe(lam: AtomicMeasure, A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Points of A first, then atoms of lam not in A, with their masses."""
    index = {tuple(p): i for i, p in enumerate(lam.points.tolist())}
    mass_a = np.array([lam.masses[index[t]] if (t := tuple(p)) in index else 0.0 for p in A.tolist()])
    in_a = {tuple(p) for p in A.tolist()}
    rest = [i for i, p in enumerate(lam.points.tolist()) if tuple(p) not in in_a]
    universe = np.concatenate([A, lam.points[rest]], axis=0)
    return universe, np.concatenate([mass_a, lam.masses[rest]])


def _center_index(family: BallFamily, pts: np.ndarray) -> np.ndarray:
    lookup = {tuple(p): i for i, p in enumerate(pts.tolist())}
    return np.array([lookup.get(tuple(c), -1) for c in family.centers.tolist()], dtype=int)


def verify_extraction(
    lam: AtomicMeasure, A: Any, family: BallFamily, trace: ExtractionTrace
) -> VerificationReport:
    """Replay an extraction: kept balls pairwise disjoint and residual decay."""
    A = as_points(A, lam.spec.dim).reshape(-1, lam.spec.dim)
    universe, mass = _universe(lam, A)
    failures: list[str] = []
    kept = trace.kept
    if len(set(kept)) != len(kept):
        failures.append("a ball was kept twice")
    sets = []
    for b in kept:
        d = family.spec(universe, family.centers[b])
        sets.append(d <= family.radii[b])
    for x in range(len(sets)):
        for y in range(x + 1, len(sets)):
            if np.any(sets[x] & sets[y]):
                failures.append(f"kept balls {kept[x]} and {kept[y]} share a point")
    u = trace.u
    prev = trace.initial_mass
    for m, rnd in enumerate(trace.rounds, start=1):
        if rnd.residual > prev:
            failures.append(f"round {m}: residual increased")
        if rnd.residual > u**m * trace.initial_mass * (1 + 1e-12):
            failures.append(f"round {m}: residual {rnd.residual} exceeds u^m bound")
        prev = rnd.residual
    covered = np.any(sets, axis=0) if sets else np.zeros(len(universe), dtype=bool)
    residual = math.fsum(mass[: len(A)][~covered[: len(A)]])
    if not math.isclose(residual, trace.residual, rel_tol=1e-12, abs_tol=1e-15):
        failures.append(f"replayed residual {residual} != recorded {trace.residual}")
    return VerificationReport(not failures, failures, {"rounds": len(trace.rounds), "Q": trace.Q})
