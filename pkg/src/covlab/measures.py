"""Finite atomic measures and differentiation experiments.

Ball masses of an atomic measure are piecewise constant in the radius and
only jump at distances from the evaluation point to atoms ("breakpoints").
Evaluating at breakpoints therefore gives exact suprema and limits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Sequence

import numpy as np

from .covering import BallFamily, besicovitch_select, coverage_counts
from .metrics import Euclidean, MetricSpec, as_points

Number = float | Fraction


def _key(p: np.ndarray) -> tuple[float, ...]:
    return tuple(float(v) for v in p)


@dataclass(frozen=True, eq=False)
class AtomicMeasure:
    """Finitely many atoms ``(point, mass > 0)`` in the space of ``spec``."""

    spec: MetricSpec
    points: np.ndarray
    masses: np.ndarray

    def __post_init__(self) -> None:
        dim = self.spec.dim
        pts = as_points(self.points, dim).reshape(-1, dim)
        m = np.asarray(self.masses, dtype=float).reshape(-1)
        if len(pts) != len(m):
            raise ValueError("points and masses differ in length")
        if not (np.all(np.isfinite(pts)) and np.all(np.isfinite(m))):
            raise ValueError("atoms must have finite coordinates and masses")
        if np.any(m <= 0):
            raise ValueError("atom masses must be positive")
        if len(np.unique(pts, axis=0)) != len(pts):
            raise ValueError("atom points must be pairwise distinct")
        pts.setflags(write=False)
        m.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "masses", m)

    @classmethod
    def zero(cls, spec: MetricSpec) -> AtomicMeasure:
        return cls(spec, np.empty((0, spec.dim)), np.empty(0))

    @classmethod
    def from_atoms(cls, spec: MetricSpec, atoms: Sequence[tuple[Any, float]]) -> AtomicMeasure:
        """Build a measure, merging repeated points by adding their masses."""
        merged: dict[tuple[float, ...], float] = {}
        for p, w in atoms:
            k = _key(as_points(p, spec.dim))
            merged[k] = merged.get(k, 0.0) + float(w)
        if not merged:
            return cls.zero(spec)
        return cls(spec, np.array(list(merged)), np.array(list(merged.values())))

    def __len__(self) -> int:
        return len(self.masses)

    def __add__(self, other: AtomicMeasure) -> AtomicMeasure:
        if other.spec != self.spec:
            raise ValueError("cannot add measures on different spaces")
        return AtomicMeasure.from_atoms(
            self.spec, list(zip(self.points, self.masses)) + list(zip(other.points, other.masses))
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AtomicMeasure):
            return NotImplemented
        return other.spec == self.spec and self.atom_map() == other.atom_map()

    def atom_map(self) -> dict[tuple[float, ...], float]:
        return {_key(p): float(w) for p, w in zip(self.points, self.masses)}

    def total(self) -> float:
        return math.fsum(self.masses)

    def mass_at(self, x: Any) -> float:
        return self.atom_map().get(_key(as_points(x, self.spec.dim)), 0.0)

    def distances(self, x: Any) -> np.ndarray:
        return self.spec(self.points, as_points(x, self.spec.dim))

    def ball_mass(self, x: Any, r: float) -> float:
        """Mass of the closed ball ``B(x, r)``."""
        return math.fsum(self.masses[self.distances(x) <= r])

    def ball_masses(self, x: Any, radii: Sequence[float]) -> np.ndarray:
        d = self.distances(x)
        order = np.argsort(d, kind="stable")
        cum = np.concatenate([[0.0], np.cumsum(self.masses[order])])
        return cum[np.searchsorted(d[order], np.asarray(radii, dtype=float), side="right")]

    def restrict(self, mask: np.ndarray) -> AtomicMeasure:
        mask = np.asarray(mask, dtype=bool)
        return AtomicMeasure(self.spec, self.points[mask], self.masses[mask])

    def mass_of(self, points: Any) -> float:
        """Mass of a finite point set."""
        amap = self.atom_map()
        pts = as_points(points, self.spec.dim).reshape(-1, self.spec.dim)
        return math.fsum(amap.get(_key(p), 0.0) for p in {_key(p): p for p in pts}.values())


def grid_lebesgue(n: int, dim: int = 1, lo: float = 0.0, hi: float = 1.0, spec: MetricSpec | None = None) -> AtomicMeasure:
    """Uniform atoms at the cell centers of an ``n``-per-axis grid on ``[lo, hi]^dim``.

    Approximates Lebesgue measure: any ball of radius ``r`` has mass within
    ``O(h r^(dim-1))`` of its volume, with ``h = (hi - lo) / n``.
    """
    spec = spec or Euclidean(dim)
    h = (hi - lo) / n
    axis = lo + h * (np.arange(n) + 0.5)
    mesh = np.meshgrid(*([axis] * dim), indexing="ij")
    pts = np.column_stack([g.ravel() for g in mesh])
    return AtomicMeasure(spec, pts, np.full(len(pts), h**dim))


# ---------------------------------------------------------------------------
# Lebesgue decomposition and derivatives
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Decomposition:
    absolutely_continuous: AtomicMeasure
    singular: AtomicMeasure


def lebesgue_decompose(mu: AtomicMeasure, lam: AtomicMeasure) -> Decomposition:
    """Split ``mu`` into the part carried by atoms of ``lam`` and the rest."""
    if mu.spec != lam.spec:
        raise ValueError("measures live on different spaces")
    support = set(lam.atom_map())
    on = np.array([_key(p) in support for p in mu.points], dtype=bool)
    return Decomposition(mu.restrict(on), mu.restrict(~on))


@dataclass
class DensityEstimate:
    point: np.ndarray
    upper: Number
    lower: Number
    radii: np.ndarray
    ratios: np.ndarray

    @property
    def value(self) -> Number:
        """The derivative when upper and lower agree, else ``nan``."""
        return self.upper if self.upper == self.lower else math.nan


def _ratio(a: Number, b: Number) -> Number:
    if b == 0:
        return 0 if a == 0 else math.inf
    return a / b


def breakpoints(x: np.ndarray, *measures: AtomicMeasure) -> np.ndarray:
    """Decreasing schedule: positive atom distances, then half the smallest one.

    The final radius isolates ``x`` from every other atom, so ball masses there
    equal the point masses at ``x``.
    """
    d = np.concatenate([m.distances(x) for m in measures]) if measures else np.empty(0)
    d = np.unique(d[d > 0])[::-1]
    if len(d) == 0:
        return np.array([1.0])
    return np.concatenate([d, [d[-1] / 2]])


def derivative_at(
    mu: AtomicMeasure,
    lam: AtomicMeasure,
    x: Any,
    schedule: Sequence[float] | None = None,
    *,
    tail: int = 1,
    exact: bool = False,
) -> DensityEstimate:
    """Upper and lower ball-mass ratios ``mu(B(x,r)) / lam(B(x,r))`` as ``r`` decreases.

    ``upper``/``lower`` are the max/min over the last ``tail`` radii of the
    schedule. With the default breakpoint schedule the last radius isolates
    ``x``, so ``tail=1`` yields the exact derivative ``mu({x}) / lam({x})``.
    With ``exact`` the tail ratios are rational numbers computed from the
    binary values of the masses.
    """
    x = as_points(x, mu.spec.dim)
    radii = breakpoints(x, mu, lam) if schedule is None else np.asarray(schedule, dtype=float)
    if len(radii) == 0 or np.any(radii <= 0) or np.any(np.diff(radii) >= 0):
        raise ValueError("schedule must be strictly decreasing positive radii")
    if tail < 1:
        raise ValueError("tail must be at least 1")
    mu_b, lam_b = mu.ball_masses(x, radii), lam.ball_masses(x, radii)
    ratios = np.array([_ratio(a, b) for a, b in zip(mu_b, lam_b)], dtype=float)
    if exact:
        dm, dl = mu.distances(x), lam.distances(x)
        last = [
            _ratio(
                sum((Fraction(w) for w in mu.masses[dm <= r]), Fraction(0)),
                sum((Fraction(w) for w in lam.masses[dl <= r]), Fraction(0)),
            )
            for r in radii[-tail:]
        ]
    else:
        last = list(ratios[-tail:])
    return DensityEstimate(x, max(last), min(last), radii, ratios)


def _as_point_set(A: Any, lam: AtomicMeasure) -> np.ndarray:
    if A is None:
        return lam.points
    pts = as_points(A, lam.spec.dim).reshape(-1, lam.spec.dim)
    return np.unique(pts, axis=0) if len(pts) else pts


def density_representation_check(mu: AtomicMeasure, lam: AtomicMeasure, A: Any = None) -> Fraction:
    """Exact ``|mu_lam(A) - sum_{x in A} D(mu, lam, x) lam({x})|``.

    ``A`` is a finite point set (default: all atoms of ``lam``). Points of
    ``A`` that are not ``lam``-atoms form a ``lam``-null set and contribute
    nothing to the integral.
    """
    ac = lebesgue_decompose(mu, lam).absolutely_continuous
    pts = _as_point_set(A, lam)
    amap_ac = ac.atom_map()
    amap_lam = lam.atom_map()
    lhs = sum((Fraction(amap_ac.get(_key(p), 0.0)) for p in pts), Fraction(0))
    rhs = Fraction(0)
    for p in pts:
        w = amap_lam.get(_key(p), 0.0)
        if w == 0:
            continue
        rhs += derivative_at(mu, lam, p, exact=True).upper * Fraction(w)
    return abs(lhs - rhs)


@dataclass
class DensityBoundCheck:
    c: Fraction
    mass: Fraction
    reference: Fraction
    premise: bool
    holds: bool


def density_bound_checks(mu: AtomicMeasure, lam: AtomicMeasure, c: Number, A: Any = None) -> tuple[DensityBoundCheck, DensityBoundCheck]:
    """Exact checks of the two density comparison inequalities on ``A``.

    Returns ``(below, above)``: if the lower derivative is ``< c`` on all of
    ``A`` then ``mu_lam(A) <= c lam(A)``; if the upper derivative is ``> c`` on
    all of ``A`` then ``mu_lam(A) >= c lam(A)``. ``holds`` is true whenever the
    premise fails.
    """
    c = Fraction(c)
    ac = lebesgue_decompose(mu, lam).absolutely_continuous.atom_map()
    lam_map = lam.atom_map()
    pts = _as_point_set(A, lam)
    mass = sum((Fraction(ac.get(_key(p), 0.0)) for p in pts), Fraction(0))
    ref = c * sum((Fraction(lam_map.get(_key(p), 0.0)) for p in pts), Fraction(0))
    est = [derivative_at(mu, lam, p, exact=True) for p in pts]
    below = all(e.lower < c for e in est)
    above = all(e.upper > c for e in est)
    return (
        DensityBoundCheck(c, mass, ref, below, (not below) or mass <= ref),
        DensityBoundCheck(c, mass, ref, above, (not above) or mass >= ref),
    )


# ---------------------------------------------------------------------------
# Maximal function
# ---------------------------------------------------------------------------

def _values_on(f: Any, lam: AtomicMeasure) -> np.ndarray:
    vals = f(lam.points) if callable(f) else f
    vals = np.asarray(vals, dtype=float).reshape(-1)
    if len(vals) != len(lam):
        raise ValueError(f"f has {len(vals)} values for {len(lam)} atoms")
    return vals


def maximal_function(
    f: Any, lam: AtomicMeasure, x: Any, schedule: Sequence[float] | None = None, *, return_radius: bool = False
) -> float | tuple[float, float]:
    """``sup_r`` of the ``lam``-average of ``|f|`` over ``B(x, r)``.

    ``f`` holds one value per atom of ``lam`` (or is a callable evaluated at
    the atoms). Without a schedule every breakpoint radius is visited, which
    gives the exact supremum; empty balls average to 0.
    """
    x = as_points(x, lam.spec.dim)
    g = np.abs(_values_on(f, lam)) * lam.masses
    d = lam.distances(x)
    if schedule is None:
        radii = np.unique(d)
        if len(radii) and radii[0] == 0:
            # any radius below the nearest other atom gives the ball {x}
            radii[0] = radii[1] / 2 if len(radii) > 1 else 1.0
    else:
        radii = np.asarray(schedule, dtype=float)
    order = np.argsort(d, kind="stable")
    ds = d[order]
    cg = np.concatenate([[0.0], np.cumsum(g[order])])
    cm = np.concatenate([[0.0], np.cumsum(lam.masses[order])])
    idx = np.searchsorted(ds, radii, side="right")
    with np.errstate(invalid="ignore", divide="ignore"):
        avg = np.where(cm[idx] > 0, cg[idx] / np.where(cm[idx] > 0, cm[idx], 1.0), 0.0)
    k = int(np.argmax(avg)) if len(avg) else 0
    value = float(avg[k]) if len(avg) else 0.0
    return (value, float(radii[k])) if return_radius else value


class MaximalOperator:
    """Maximal function of many ``f`` on one atomic measure, evaluated at its atoms.

    The per-point distance orderings are computed once; each call is then a
    cumulative sum over the sorted atoms, keeping only the last index of each
    group of tied distances.
    """

    def __init__(self, lam: AtomicMeasure, chunk: int = 512) -> None:
        self.lam = lam
        self.chunk = chunk
        n = len(lam)
        self.order = np.empty((n, n), dtype=np.int32)
        self.last = np.empty((n, n), dtype=bool)
        self.cum_mass = np.empty((n, n), dtype=float)
        for s in range(0, n, chunk):
            d = lam.spec(lam.points[s : s + chunk, None, :], lam.points[None, :, :])
            o = np.argsort(d, axis=1, kind="stable")
            ds = np.take_along_axis(d, o, axis=1)
            self.order[s : s + chunk] = o
            self.last[s : s + chunk, :-1] = ds[:, 1:] != ds[:, :-1]
            self.last[s : s + chunk, -1] = True
            self.cum_mass[s : s + chunk] = np.cumsum(lam.masses[o], axis=1)

    def __call__(self, f: Any) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(Mf, radius)`` at every atom; ``radius`` attains the sup."""
        g = np.abs(_values_on(f, self.lam)) * self.lam.masses
        n = len(self.lam)
        values = np.empty(n)
        radii = np.empty(n)
        for s in range(0, n, self.chunk):
            o = self.order[s : s + self.chunk]
            avg = np.cumsum(g[o], axis=1) / self.cum_mass[s : s + self.chunk]
            avg[~self.last[s : s + self.chunk]] = -np.inf
            k = np.argmax(avg, axis=1)
            rows = np.arange(len(o))
            values[s : s + len(o)] = avg[rows, k]
            far = self.lam.points[o[rows, k]]
            radii[s : s + len(o)] = self.lam.spec(self.lam.points[s : s + len(o)], far)
        # a sup attained at distance 0 uses any radius below the nearest neighbour
        zero = radii == 0
        if np.any(zero):
            radii[zero] = self._isolating_radius(np.nonzero(zero)[0])
        return values, radii

    def _isolating_radius(self, idx: np.ndarray) -> np.ndarray:
        out = np.empty(len(idx))
        for j, i in enumerate(idx):
            d = self.lam.distances(self.lam.points[i])
            pos = d[d > 0]
            out[j] = pos.min() / 2 if len(pos) else 1.0
        return out


# ---------------------------------------------------------------------------
# Weak (1,1) inequality, differentiation, doubling
# ---------------------------------------------------------------------------

@dataclass
class Weak11Report:
    norm: float
    alphas: np.ndarray
    ratios: np.ndarray
    sup_ratio: float
    alpha_star: float
    multiplicity: int | None = None
    selected: int = 0

    @property
    def holds(self) -> bool:
        return self.multiplicity is None or self.sup_ratio <= self.multiplicity + 1e-9


def weak11_check(
    f: Any,
    lam: AtomicMeasure,
    alphas: Sequence[float] | None = None,
    *,
    operator: MaximalOperator | None = None,
    measure_multiplicity: bool = True,
) -> Weak11Report:
    """Weak (1,1) ratios ``alpha * lam{Mf > alpha} / ||f||_1``.

    ``sup_ratio`` is the supremum over all ``alpha > 0``: as ``alpha`` rises to
    a value ``v`` of ``Mf`` the superlevel set tends to ``{Mf >= v}``, so the
    supremum is ``max_v v * lam{Mf >= v} / ||f||_1``.

    With ``measure_multiplicity`` the balls attaining ``Mf`` on the extremal
    superlevel set are passed through Besicovitch selection and the largest
    number of selected balls containing one atom is reported as
    ``multiplicity``; the weak-type bound with constant 1 says
    ``sup_ratio <= multiplicity``.
    """
    vals = np.abs(_values_on(f, lam))
    norm = math.fsum(vals * lam.masses)
    grid = np.asarray(alphas if alphas is not None else [], dtype=float)
    if norm == 0:
        return Weak11Report(0.0, grid, np.zeros(len(grid)), 0.0, 0.0, None)
    if operator is None:
        mf = np.empty(len(lam))
        rad = np.empty(len(lam))
        for i, p in enumerate(lam.points):
            mf[i], rad[i] = maximal_function(vals, lam, p, return_radius=True)
    else:
        mf, rad = operator(vals)
    ratios = np.array([a * math.fsum(lam.masses[mf > a]) / norm for a in grid])
    order = np.argsort(-mf, kind="stable")
    cum = np.cumsum(lam.masses[order])
    sm = mf[order]
    last = np.append(sm[1:] != sm[:-1], True)
    cand = sm[last] * cum[last] / norm
    k = int(np.argmax(cand))
    sup_ratio, alpha_star = float(cand[k]), float(sm[last][k])
    report = Weak11Report(norm, grid, ratios, sup_ratio, alpha_star)
    if measure_multiplicity and alpha_star > 0:
        members = np.nonzero(mf >= alpha_star)[0]
        family = BallFamily(lam.spec, lam.points[members], rad[members])
        cover = besicovitch_select(family, probes=lam.points)
        report.multiplicity = int(coverage_counts(family, cover.selected, lam.points).max())
        report.selected = len(cover.selected)
    return report


@dataclass
class DifferentiationRow:
    point: np.ndarray
    value: float
    average: float
    error: float
    errors: np.ndarray
    converged: bool


def ball_averages(f_atoms: np.ndarray, lam: AtomicMeasure, x: np.ndarray, radii: np.ndarray) -> np.ndarray:
    d = lam.distances(x)
    order = np.argsort(d, kind="stable")
    idx = np.searchsorted(d[order], radii, side="right")
    cg = np.concatenate([[0.0], np.cumsum((f_atoms * lam.masses)[order])])
    cm = np.concatenate([[0.0], np.cumsum(lam.masses[order])])
    safe = np.where(cm[idx] > 0, cm[idx], 1.0)
    return np.where(cm[idx] > 0, cg[idx] / safe, 0.0)


def differentiation_check(
    f: Callable[[np.ndarray], np.ndarray] | np.ndarray,
    lam: AtomicMeasure,
    points: Any,
    schedule: Sequence[float] | None = None,
    *,
    tol: float = 1e-9,
) -> list[DifferentiationRow]:
    """Distance between ``f(x)`` and ``lam``-averages of ``f`` on shrinking balls.

    ``f`` is a callable on points, or an array of values at the atoms (then
    every sample point must be an atom). ``error`` is taken at the smallest
    radius of the schedule; ``errors`` follows the whole schedule.
    """
    pts = as_points(points, lam.spec.dim).reshape(-1, lam.spec.dim)
    f_atoms = _values_on(f, lam)
    if callable(f):
        fx = np.asarray(f(pts), dtype=float).reshape(-1)
    else:
        amap = {_key(p): v for p, v in zip(lam.points, f_atoms)}
        try:
            fx = np.array([amap[_key(p)] for p in pts])
        except KeyError as exc:
            raise ValueError("array-valued f needs sample points at atoms") from exc
    rows = []
    for x, v in zip(pts, fx):
        radii = breakpoints(x, lam) if schedule is None else np.asarray(schedule, dtype=float)
        avg = ball_averages(f_atoms, lam, x, radii)
        errs = np.abs(avg - v)
        rows.append(DifferentiationRow(x, float(v), float(avg[-1]), float(errs[-1]), errs, bool(errs[-1] <= tol)))
    return rows


@dataclass
class DoublingAudit:
    ratio: float
    center: np.ndarray
    radius: float
    checked: int = field(default=0)


def doubling_audit(lam: AtomicMeasure, radii: Sequence[float], centers: Any = None) -> DoublingAudit:
    """Largest ``lam(B(x, 2r)) / lam(B(x, r))`` over the given centers and radii."""
    cs = lam.points if centers is None else as_points(centers, lam.spec.dim).reshape(-1, lam.spec.dim)
    radii = np.asarray(radii, dtype=float)
    best = DoublingAudit(0.0, cs[0], float(radii[0]))
    count = 0
    for x in cs:
        small = lam.ball_masses(x, radii)
        big = lam.ball_masses(x, 2 * radii)
        ok = small > 0
        count += int(ok.sum())
        if not np.any(ok):
            continue
        r = big[ok] / small[ok]
        k = int(np.argmax(r))
        if r[k] > best.ratio:
            best = DoublingAudit(float(r[k]), x, float(radii[ok][k]))
    best.checked = count
    return best
