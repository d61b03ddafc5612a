"""Besicovitch families: validation, search, growth, certificates.

A Besicovitch family is a finite set of closed balls ``B(x_i, r_i)`` that share
a common point (the witness ``w``) and such that no ball contains the center of
another one:

    d(x_i, w) <= r_i            for every i,
    d(x_i, x_j) > r_i           for every i != j.

All searches fix the witness at the origin. Every supported metric is
translation or left invariant and admits a dilation under which it is
one-homogeneous, so this loses no generality, and configurations are kept
normalised so that ``max_i d(w, x_i) = 1``. Margins reported by the search are
therefore comparable across metrics and family sizes.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Callable

import numpy as np
from scipy.optimize import minimize

from .metrics import DELTA_STRICT, Euclidean, MetricSpec, as_points, spec_from_dict

FORMAT_VERSION = 1
DEFAULT_PRECISION = 1e-12


class CertificateError(ValueError):
    """Malformed certificate file or certificate that fails re-validation."""

    def __init__(self, message: str, margin: float | None = None):
        super().__init__(message)
        self.margin = margin


class ResourceLimitError(RuntimeError):
    pass


@dataclass
class BesicovitchConfig:
    spec: MetricSpec
    witness: np.ndarray
    centers: np.ndarray
    radii: np.ndarray
    radius_cap: float | None = None

    def __post_init__(self) -> None:
        self.witness = as_points(self.witness, self.spec.dim).reshape(self.spec.dim)
        self.centers = as_points(self.centers, self.spec.dim).reshape(-1, self.spec.dim)
        self.radii = np.asarray(self.radii, dtype=float).reshape(-1)
        if len(self.centers) != len(self.radii):
            raise ValueError(f"{len(self.centers)} centers but {len(self.radii)} radii")
        if len(self.centers) < 1:
            raise ValueError("a configuration needs at least one ball")

    @property
    def k(self) -> int:
        return len(self.centers)

    def drop(self, index: int) -> BesicovitchConfig:
        keep = np.arange(self.k) != index
        return replace(self, centers=self.centers[keep], radii=self.radii[keep])


@dataclass(frozen=True)
class SearchBudget:
    restarts: int = 64
    iterations: int = 20_000
    target: int = 8
    seed: int = 0
    step_start: float = 0.3
    step_end: float = 1e-4
    polish_top: int = 8

    def __post_init__(self) -> None:
        for name in ("restarts", "iterations", "target", "polish_top"):
            if getattr(self, name) < 1:
                raise ValueError(f"budget field {name} must be positive")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if not 0 < self.step_end <= self.step_start:
            raise ValueError("need 0 < step_end <= step_start")


@dataclass
class BesicovitchCertificate:
    config: BesicovitchConfig
    margin: float
    precision: float = DEFAULT_PRECISION
    seed: int | None = None
    budget: dict[str, Any] = field(default_factory=dict)

    @property
    def k(self) -> int:
        return self.config.k

    @property
    def spec(self) -> MetricSpec:
        return self.config.spec

    def accept_threshold(self, strict: float = DELTA_STRICT) -> float:
        return max(strict, 10.0 * self.precision)

    @property
    def valid(self) -> bool:
        return self.margin > self.accept_threshold()


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def slack_terms(config: BesicovitchConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return the witness slacks, the separation slack matrix and the cap slacks."""
    spec = config.spec
    a = np.atleast_1d(spec(config.centers, config.witness))
    witness_slack = config.radii - a
    D = spec(config.centers[:, None, :], config.centers[None, :, :])
    sep = D - config.radii[:, None]
    np.fill_diagonal(sep, np.inf)
    if config.radius_cap is None:
        cap = np.full(config.k, np.inf)
    else:
        cap = config.radius_cap - config.radii
    return witness_slack, sep, cap


def validate_config(config: BesicovitchConfig) -> float:
    """Minimum slack over every Besicovitch constraint.

    The configuration is a Besicovitch family iff the result is positive; in
    floating point we require it to exceed ``DELTA_STRICT``.
    """
    witness_slack, sep, cap = slack_terms(config)
    return float(min(witness_slack.min(), sep.min(), cap.min()))


def is_besicovitch(config: BesicovitchConfig, strict: float = DELTA_STRICT) -> bool:
    return validate_config(config) > strict


def canonical_tighten(config: BesicovitchConfig, eta: float = 1e-6) -> BesicovitchConfig:
    """Shrink every radius to ``(1 + eta) d(w, x_i)``.

    After tightening, validity reduces to the pairwise condition
    ``d(x_i, x_j) > max(d(w, x_i), d(w, x_j))`` up to ``eta``.
    """
    a = np.atleast_1d(config.spec(config.centers, config.witness))
    if np.any(a == 0):
        raise ValueError("witness coincides with a center; tight radius would vanish")
    return replace(config, radii=a * (1.0 + eta))


def polished_radii(spec: MetricSpec, witness: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Radii halfway between the witness distance and the nearest other center.

    This choice maximises the minimum slack for fixed centers: each ball's
    worst constraint sits at distance ``(b_i - a_i) / 2`` on both sides.
    """
    a = np.atleast_1d(spec(centers, witness))
    if len(centers) == 1:
        return np.where(a > 0, 2.0 * a, 1.0)
    D = spec(centers[:, None, :], centers[None, :, :])
    np.fill_diagonal(D, np.inf)
    return 0.5 * (a + D.min(axis=1))


def make_config(
    spec: MetricSpec,
    centers: np.ndarray,
    *,
    radius_cap: float | None = None,
) -> BesicovitchConfig:
    """Normalised, radius-polished configuration with witness at the origin."""
    witness = np.zeros(spec.dim)
    centers = normalize_centers(spec, centers)
    radii = polished_radii(spec, witness, centers)
    if radius_cap is not None and radii.max() >= radius_cap:
        t = radius_cap / (2.0 * radii.max())
        centers = spec.dilate(t, centers)
        radii = polished_radii(spec, witness, centers)
    return BesicovitchConfig(spec, witness, centers, radii, radius_cap)


def normalize_centers(spec: MetricSpec, centers: np.ndarray) -> np.ndarray:
    a = np.atleast_1d(spec(centers, np.zeros(spec.dim)))
    top = a.max()
    if not top > 0:
        return centers
    return spec.dilate(1.0 / top, centers)


def config_hash(config: BesicovitchConfig) -> str:
    payload = json.dumps(
        [config.spec.to_dict(), config.centers.tolist(), config.radii.tolist()], sort_keys=True
    )
    return hashlib.sha256(payload.encode()).hexdigest()


# ---------------------------------------------------------------------------
# Stochastic search
# ---------------------------------------------------------------------------

def restart_rng(seed: int, k: int, restart: int, salt: int = 0) -> np.random.Generator:
    """Counter-based stream for one restart; independent of batching."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(salt, k, restart))
    return np.random.Generator(np.random.Philox(ss))


def _pair_state(spec: MetricSpec, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    k = X.shape[-2]
    a = spec(X, np.zeros(spec.dim))
    D = spec(X[..., :, None, :], X[..., None, :, :])
    idx = np.arange(k)
    D[..., idx, idx] = np.inf
    return a, D


def _scaled_margin(a: np.ndarray, D: np.ndarray) -> np.ndarray:
    # Polished-radius margin of each configuration, at unit scale.
    b = D.min(axis=-1)
    return 0.5 * (b - a).min(axis=-1) / a.max(axis=-1)


def _local_search(
    spec: MetricSpec,
    X: np.ndarray,
    rngs: list[np.random.Generator],
    iterations: int,
    step_start: float,
    step_end: float,
    chunk: int = 1000,
) -> tuple[np.ndarray, np.ndarray]:
    """Greedy single-center moves on a batch of configurations.

    Each move dilates the chosen center to unit size, adds Gaussian noise of
    the current step, and dilates back, so centers at very different scales
    move proportionally. Moves that do not decrease the margin are kept.
    """
    R, k, n = X.shape
    rows = np.arange(R)
    X = normalize_batch(spec, X)
    a, D = _pair_state(spec, X)
    m = _scaled_margin(a, D)
    if k == 1:
        return X, m
    ratio = step_end / step_start
    for start in range(0, iterations, chunk):
        stop = min(start + chunk, iterations)
        size = stop - start
        picks = np.stack([g.integers(0, k, size) for g in rngs], axis=1)
        noise = np.stack([g.standard_normal((size, n)) for g in rngs], axis=1)
        for s in range(size):
            it = start + s
            step = step_start * ratio ** (it / max(iterations - 1, 1))
            i = picks[s]
            ai = a[rows, i]
            moved = spec.dilate(ai, spec.dilate(1.0 / ai, X[rows, i]) + step * noise[s])
            a_new = spec(moved, np.zeros(n))
            row = spec(moved[:, None, :], X)
            row[rows, i] = np.inf
            a2 = a.copy()
            a2[rows, i] = a_new
            D2 = D.copy()
            D2[rows, i, :] = row
            D2[rows, :, i] = row
            m2 = _scaled_margin(a2, D2)
            ok = m2 >= m
            if ok.any():
                X[ok, i[ok]] = moved[ok]
                a[ok] = a2[ok]
                D[ok] = D2[ok]
                m[ok] = m2[ok]
        X = normalize_batch(spec, X)
        a, D = _pair_state(spec, X)
        m = _scaled_margin(a, D)
    return X, m


def normalize_batch(spec: MetricSpec, X: np.ndarray) -> np.ndarray:
    a = spec(X, np.zeros(spec.dim))
    return spec.dilate((1.0 / a.max(axis=-1))[:, None], X)


def polish_centers(spec: MetricSpec, centers: np.ndarray, maxiter: int = 500) -> np.ndarray:
    """Maximise the minimum separation slack with SLSQP, starting from ``centers``.

    Variables are the centers and the slack ``t``; constraints are
    ``d(x_i, x_j) - d(w, x_i) >= 2 t`` for ``i != j`` and ``d(w, x_i) <= 1``.
    """
    k, n = centers.shape
    if k == 1:
        return centers
    I, J = np.nonzero(~np.eye(k, dtype=bool))
    origin = np.zeros(n)

    def constraints(v: np.ndarray) -> np.ndarray:
        X = v[:-1].reshape(k, n)
        a = spec(X, origin)
        return np.concatenate([spec(X[I], X[J]) - a[I] - 2.0 * v[-1], 1.0 - a])

    a0, D0 = _pair_state(spec, centers)
    t0 = 0.5 * float((D0.min(axis=1) - a0).min())
    v0 = np.concatenate([centers.ravel(), [t0]])
    grad = np.zeros_like(v0)
    grad[-1] = -1.0
    with np.errstate(all="ignore"):
        res = minimize(
            lambda v: -v[-1],
            v0,
            jac=lambda v: grad,
            constraints=[{"type": "ineq", "fun": constraints}],
            method="SLSQP",
            options={"maxiter": maxiter, "ftol": 1e-15},
        )
    X = res.x[:-1].reshape(k, n)
    if not np.all(np.isfinite(X)) or np.any(spec(X, origin) == 0):
        return centers
    return X


def _finish(
    spec: MetricSpec,
    X: np.ndarray,
    m: np.ndarray,
    budget: SearchBudget,
    radius_cap: float | None,
    precision: float,
) -> BesicovitchCertificate:
    """Polish the best restarts and return the overall best certificate."""
    order = np.lexsort((np.arange(len(m)), -m))
    candidates: list[BesicovitchCertificate] = []
    for r in order[: budget.polish_top]:
        for centers in (X[r], polish_centers(spec, X[r])):
            config = make_config(spec, centers, radius_cap=radius_cap)
            candidates.append(
                BesicovitchCertificate(config, validate_config(config), precision, budget.seed, asdict(budget))
            )
    return best_certificate(candidates)


def best_certificate(certs: list[BesicovitchCertificate]) -> BesicovitchCertificate:
    """Merge rule: largest margin, ties broken by configuration hash."""
    return min(certs, key=lambda c: (-c.margin, config_hash(c.config)))


def random_centers(spec: MetricSpec, rng: np.random.Generator, k: int) -> np.ndarray:
    X = rng.standard_normal((k, spec.dim))
    X[np.all(X == 0, axis=1)] = 1.0
    return X


def search_family(
    spec: MetricSpec,
    k: int,
    budget: SearchBudget = SearchBudget(),
    *,
    radius_cap: float | None = None,
    precision: float = DEFAULT_PRECISION,
    init: Callable[[np.random.Generator, int], np.ndarray] | None = None,
    salt: int = 0,
) -> BesicovitchCertificate:
    """Best family of exactly ``k`` balls found within the budget."""
    rngs = [restart_rng(budget.seed, k, r, salt) for r in range(budget.restarts)]
    if init is None:
        X = np.stack([random_centers(spec, g, k) for g in rngs])
    else:
        X = np.stack([init(g, r) for r, g in enumerate(rngs)])
    X, m = _local_search(spec, X, rngs, budget.iterations, budget.step_start, budget.step_end)
    return _finish(spec, X, m, budget, radius_cap, precision)


def search_max_family(
    spec: MetricSpec,
    budget: SearchBudget = SearchBudget(),
    *,
    radius_cap: float | None = None,
    precision: float = DEFAULT_PRECISION,
    progress: Callable[[BesicovitchCertificate], None] | None = None,
) -> dict[int, BesicovitchCertificate]:
    """Best certificate for every size ``k = 1 .. budget.target``.

    A returned certificate with margin at or below its acceptance threshold
    means no family of that size was found.
    """
    results: dict[int, BesicovitchCertificate] = {}
    for k in range(1, budget.target + 1):
        cert = search_family(spec, k, budget, radius_cap=radius_cap, precision=precision)
        results[k] = cert
        if progress is not None:
            progress(cert)
    return results


def largest_found(results: dict[int, BesicovitchCertificate]) -> int:
    found = [k for k, c in results.items() if c.valid]
    return max(found, default=0)


def grow_family(
    cert: BesicovitchCertificate,
    budget: SearchBudget = SearchBudget(),
    *,
    scale_range: tuple[float, float] = (1e-3, 1.0),
) -> BesicovitchCertificate:
    """Try to add one ball to a valid certificate, re-optimising all centers.

    Each restart starts from the certificate's centers plus one new center
    drawn in a random direction at a log-uniform scale. Returns the larger
    certificate if one is found, otherwise the input unchanged.
    """
    spec = cert.spec
    k = cert.k + 1
    base = normalize_centers(spec, spec.to_origin(cert.config.witness, cert.config.centers))
    lo, hi = np.log(scale_range[0]), np.log(scale_range[1])

    def init(rng: np.random.Generator, restart: int) -> np.ndarray:
        direction = random_centers(spec, rng, 1)
        direction = normalize_centers(spec, direction)
        new = spec.dilate(np.exp(rng.uniform(lo, hi)), direction)
        return np.concatenate([base, new], axis=0)

    grown = search_family(
        spec,
        k,
        budget,
        radius_cap=cert.config.radius_cap,
        precision=cert.precision,
        init=init,
        salt=1,
    )
    return grown if grown.valid else cert


# ---------------------------------------------------------------------------
# Brute force for low-dimensional Euclidean spaces
# ---------------------------------------------------------------------------

@dataclass
class BruteForceVerdict:
    spec: MetricSpec
    k: int
    resolution: int
    feasible: bool
    nodes_visited: int
    witness_family: np.ndarray | None = None


def _candidate_grid(spec: Euclidean, resolution: int, radial_levels: int) -> np.ndarray:
    if spec.n == 1:
        mags = np.arange(resolution, 0, -1) / resolution
        return np.concatenate([mags, -mags])[:, None]
    theta = 2.0 * np.pi * np.arange(resolution) / resolution
    rhos = np.arange(1, radial_levels + 1) / radial_levels
    pts = [(rho * np.cos(t), rho * np.sin(t)) for rho in rhos[::-1] for t in theta]
    return np.array(pts)


def brute_force_bound(
    spec: MetricSpec,
    k: int,
    resolution: int = 72,
    *,
    radial_levels: int = 4,
    strict: float = DELTA_STRICT,
    max_nodes: int = 5_000_000,
) -> BruteForceVerdict:
    """Decide whether a tight Besicovitch family of size ``k`` exists on a grid.

    With tight radii a family is valid iff every pair of centers satisfies
    ``|x_i - x_j| > max(|x_i|, |x_j|)``, so the question is whether the
    compatibility graph on the candidate grid has a ``k``-clique. By scaling
    and rotation (reflection in dimension one) the center of largest norm is
    fixed at ``e_1``; all other candidates have norm at most one.
    """
    if not isinstance(spec, Euclidean) or spec.n not in (1, 2):
        raise ValueError("brute force is implemented for Euclidean(1) and Euclidean(2) only")
    if not 1 <= k <= 7:
        raise ValueError("brute force supports 1 <= k <= 7")
    pts = _candidate_grid(spec, resolution, radial_levels)
    norms = spec(pts, np.zeros(spec.n))
    D = spec(pts[:, None, :], pts[None, :, :])
    compat = D > np.maximum(norms[:, None], norms[None, :]) + strict
    np.fill_diagonal(compat, False)
    anchor = 0  # e_1: first grid point has norm one and angle zero
    nbr = [sum(1 << int(j) for j in np.nonzero(compat[i])[0]) for i in range(len(pts))]
    nodes = 0

    def extend(chosen: list[int], cand: int) -> list[int] | None:
        nonlocal nodes
        nodes += 1
        if nodes > max_nodes:
            raise ResourceLimitError(f"brute force exceeded {max_nodes} nodes")
        if len(chosen) == k:
            return chosen
        if bin(cand).count("1") < k - len(chosen):
            return None
        while cand:
            low = cand & -cand
            j = low.bit_length() - 1
            cand ^= low
            found = extend(chosen + [j], cand & nbr[j])
            if found is not None:
                return found
        return None

    found = extend([anchor], nbr[anchor]) if k > 1 else [anchor]
    return BruteForceVerdict(
        spec, k, resolution, found is not None, nodes, None if found is None else pts[found]
    )


# ---------------------------------------------------------------------------
# Certificate files
# ---------------------------------------------------------------------------

def _fmt(value: Any) -> str:
    if isinstance(value, float):
        if math.isnan(value) or math.isinf(value):
            return json.dumps(str(value))
        return format(value, ".17g")
    if isinstance(value, bool) or value is None or isinstance(value, (int, str)):
        return json.dumps(value)
    if isinstance(value, dict):
        body = ", ".join(f"{json.dumps(str(k))}: {_fmt(v)}" for k, v in value.items())
        return "{" + body + "}"
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_fmt(v) for v in value) + "]"
    raise TypeError(f"cannot serialise {type(value).__name__}")


def certificate_to_dict(cert: BesicovitchCertificate) -> dict[str, Any]:
    cfg = cert.config
    data: dict[str, Any] = {
        "format_version": FORMAT_VERSION,
        "metric_spec": cfg.spec.to_dict(),
        "witness": [float(v) for v in cfg.witness],
        "centers": [[float(v) for v in row] for row in cfg.centers],
        "radii": [float(v) for v in cfg.radii],
    }
    if cfg.radius_cap is not None:
        data["radius_cap"] = float(cfg.radius_cap)
    data["margin"] = float(cert.margin)
    data["precision"] = float(cert.precision)
    data["seed"] = cert.seed
    data["budget"] = dict(cert.budget)
    return data


def dumps_certificate(cert: BesicovitchCertificate) -> str:
    """Certificate text; floats carry 17 significant digits for bit-exact replay."""
    data = certificate_to_dict(cert)
    lines = ["{"]
    items = list(data.items())
    for n, (key, value) in enumerate(items):
        sep = "," if n < len(items) - 1 else ""
        if key == "centers":
            inner = ",\n".join("    " + _fmt(row) for row in value)
            lines.append(f'  "centers": [\n{inner}\n  ]{sep}')
        else:
            lines.append(f"  {json.dumps(key)}: {_fmt(value)}{sep}")
    lines.append("}")
    return "\n".join(lines) + "\n"


def export_certificate(cert: BesicovitchCertificate, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(dumps_certificate(cert), encoding="utf-8")
    return path


def loads_certificate(text: str, *, strict: float = DELTA_STRICT) -> BesicovitchCertificate:
    """Parse and re-validate a certificate; the stored margin is never trusted."""
    try:
        data = json.loads(text)
        if data.get("format_version") != FORMAT_VERSION:
            raise CertificateError(f"unsupported format_version {data.get('format_version')!r}")
        spec = spec_from_dict(data["metric_spec"])
        config = BesicovitchConfig(
            spec,
            np.array(data["witness"], dtype=float),
            np.array(data["centers"], dtype=float),
            np.array(data["radii"], dtype=float),
            data.get("radius_cap"),
        )
        precision = float(data.get("precision", DEFAULT_PRECISION))
    except CertificateError:
        raise
    except (ValueError, KeyError, TypeError) as exc:
        raise CertificateError(f"malformed certificate: {exc}") from exc
    margin = validate_config(config)
    return BesicovitchCertificate(config, margin, precision, data.get("seed"), data.get("budget") or {})


def import_certificate(path: str | Path) -> BesicovitchCertificate:
    return loads_certificate(Path(path).read_text(encoding="utf-8"))
