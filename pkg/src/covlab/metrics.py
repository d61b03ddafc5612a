"""Metric specifications, Heisenberg group operations and homogeneous distances.

Every distance accepts arrays of shape ``(..., n)`` and broadcasts over the
leading axes, so the same object serves scalar checks and batched searches.
Points of the first Heisenberg group are written in exponential coordinates
``(x, y, z)`` with the product

    (x, y, z) . (x', y', z') = (x + x', y + y', z + z' + (x y' - y x') / 2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, ClassVar

import numpy as np

DELTA_STRICT = 1e-9


class DimensionError(ValueError):
    """Raised when a point does not have the dimension a metric expects."""


def as_points(p: Any, dim: int | None = None) -> np.ndarray:
    arr = np.asarray(p, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if dim is not None and arr.shape[-1] != dim:
        raise DimensionError(f"expected points of dimension {dim}, got shape {arr.shape}")
    return arr


# ---------------------------------------------------------------------------
# Heisenberg group
# ---------------------------------------------------------------------------

def heis_mul(p: Any, q: Any) -> np.ndarray:
    p = as_points(p, 3)
    q = as_points(q, 3)
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    u, v, w = q[..., 0], q[..., 1], q[..., 2]
    return np.stack(np.broadcast_arrays(x + u, y + v, z + w + 0.5 * (x * v - y * u)), axis=-1)


def heis_inv(p: Any) -> np.ndarray:
    return -as_points(p, 3)


def heis_left_diff(p: Any, q: Any) -> np.ndarray:
    """Return ``p^{-1} . q`` without forming the inverse explicitly."""
    p = as_points(p, 3)
    q = as_points(q, 3)
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    u, v, w = q[..., 0], q[..., 1], q[..., 2]
    return np.stack(
        np.broadcast_arrays(u - x, v - y, (w - z) + 0.5 * (y * u - x * v)), axis=-1
    )


def _factor(r: float | np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if not np.all(r > 0):
        raise ValueError(f"dilation factor must be positive, got {r}")
    return r[..., None]


def heis_dilate(r: float | np.ndarray, p: Any) -> np.ndarray:
    """Standard dilation ``(x, y, z) -> (r x, r y, r^2 z)``; ``r`` may be an array."""
    t = _factor(r)
    return as_points(p, 3) * np.concatenate([t, t, t * t], axis=-1)


def nonstandard_dilate(alpha: float, r: float | np.ndarray, p: Any) -> np.ndarray:
    """Dilation ``(x, y, z) -> (r x, r^alpha y, r^(alpha+1) z)``."""
    if not alpha > 1:
        raise ValueError(f"grading exponent must exceed 1, got {alpha}")
    t = _factor(r)
    return as_points(p, 3) * np.concatenate([t, t**alpha, t ** (alpha + 1)], axis=-1)


def koranyi_gauge(w: np.ndarray) -> np.ndarray:
    rho2 = w[..., 0] ** 2 + w[..., 1] ** 2
    return np.sqrt(np.hypot(rho2, 4.0 * w[..., 2]))


def hs_gauge(gamma: float, w: np.ndarray) -> np.ndarray:
    # Positive root of rho^2 u + z^2 u^2 = gamma^2 in u = r^-2, written without
    # cancellation; z = 0 reduces to rho / gamma.
    rho2 = w[..., 0] ** 2 + w[..., 1] ** 2
    root = np.hypot(rho2, 2.0 * gamma * w[..., 2])
    return np.sqrt((rho2 + root) / (2.0 * gamma * gamma))


def eps_gauge(eps: float, w: np.ndarray) -> np.ndarray:
    rho2 = w[..., 0] ** 2 + w[..., 1] ** 2
    return np.sqrt(eps * rho2 + np.hypot(rho2, 4.0 * w[..., 2]))


def nonstandard_gauge_at(alpha: float, w: np.ndarray) -> np.ndarray:
    return np.maximum(
        np.abs(w[..., 0]),
        np.maximum(np.abs(w[..., 1]) ** (1.0 / alpha), np.abs(w[..., 2]) ** (1.0 / (alpha + 1.0))),
    )


# ---------------------------------------------------------------------------
# Metric specifications
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MetricSpec:
    """Base class for the closed set of supported metrics.

    Subclasses implement ``_dist`` on validated arrays and ``dilate``, a
    dilation under which the distance is exactly one-homogeneous:
    ``d(dilate(t, p), dilate(t, q)) == t * d(p, q)``.
    """

    kind: ClassVar[str] = ""
    quasi: ClassVar[bool] = False
    heisenberg: ClassVar[bool] = False

    @property
    def dim(self) -> int:
        raise NotImplementedError

    def __call__(self, p: Any, q: Any) -> np.ndarray:
        return self._dist(as_points(p, self.dim), as_points(q, self.dim))

    def _dist(self, p: np.ndarray, q: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def dilate(self, t: float | np.ndarray, p: Any) -> np.ndarray:
        raise NotImplementedError

    def to_origin(self, base: Any, p: Any) -> np.ndarray:
        """Translate ``p`` by the isometry sending ``base`` to the origin."""
        return as_points(p, self.dim) - as_points(base, self.dim)

    def ball_contains(self, center: Any, radius: float, p: Any) -> tuple[bool, float]:
        d = float(self(center, p))
        return d <= radius, radius - d

    def to_dict(self) -> dict[str, Any]:
        raise NotImplementedError

    def label(self) -> str:
        return self.kind


@dataclass(frozen=True)
class Euclidean(MetricSpec):
    n: int = 2
    kind: ClassVar[str] = "euclidean"

    def __post_init__(self) -> None:
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"dimension must be a positive integer, got {self.n}")

    @property
    def dim(self) -> int:
        return self.n

    def _dist(self, p, q):
        return np.sqrt(np.sum((q - p) ** 2, axis=-1))

    def dilate(self, t, p):
        return np.asarray(t, dtype=float)[..., None] * as_points(p, self.n)

    def to_dict(self):
        return {"kind": self.kind, "n": self.n}

    def label(self):
        return f"euclidean{self.n}"


@dataclass(frozen=True)
class PNorm(MetricSpec):
    n: int = 2
    p: float = 2.0
    kind: ClassVar[str] = "pnorm"

    def __post_init__(self) -> None:
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"dimension must be a positive integer, got {self.n}")
        if not self.p >= 1:
            raise ValueError(f"p must be >= 1, got {self.p}")

    @property
    def dim(self) -> int:
        return self.n

    def _dist(self, p, q):
        diff = np.abs(q - p)
        if math.isinf(self.p):
            return np.max(diff, axis=-1)
        return np.sum(diff**self.p, axis=-1) ** (1.0 / self.p)

    def dilate(self, t, p):
        return np.asarray(t, dtype=float)[..., None] * as_points(p, self.n)

    def to_dict(self):
        return {"kind": self.kind, "n": self.n, "p": self.p}

    def label(self):
        return f"pnorm{self.n}_p{self.p:g}"


@dataclass(frozen=True)
class Snowflake(MetricSpec):
    """The snowflake ``d^s`` of a base metric; its balls are balls of the base."""

    base: MetricSpec = Euclidean(1)
    s: float = 0.5
    kind: ClassVar[str] = "snowflake"

    def __post_init__(self) -> None:
        if not 0 < self.s < 1:
            raise ValueError(f"snowflake exponent must lie in (0, 1), got {self.s}")

    @property
    def dim(self) -> int:
        return self.base.dim

    @property
    def quasi(self) -> bool:  # type: ignore[override]
        return self.base.quasi

    @property
    def heisenberg(self) -> bool:  # type: ignore[override]
        return self.base.heisenberg

    def _dist(self, p, q):
        return self.base._dist(p, q) ** self.s

    def to_origin(self, base, p):
        return self.base.to_origin(base, p)

    def dilate(self, t, p):
        return self.base.dilate(np.asarray(t, dtype=float) ** (1.0 / self.s), p)

    def ball_contains(self, center, radius, p):
        # Same comparison as the base metric with the reparametrised radius.
        d = float(self.base(center, p))
        return d <= radius ** (1.0 / self.s), radius - d**self.s

    def to_dict(self):
        return {"kind": self.kind, "base": self.base.to_dict(), "s": self.s}

    def label(self):
        return f"snowflake{self.s:g}({self.base.label()})"


@dataclass(frozen=True)
class MaxProduct(MetricSpec):
    left: MetricSpec = Euclidean(1)
    right: MetricSpec = Euclidean(1)
    kind: ClassVar[str] = "max_product"

    @property
    def dim(self) -> int:
        return self.left.dim + self.right.dim

    @property
    def quasi(self) -> bool:  # type: ignore[override]
        return self.left.quasi or self.right.quasi

    def _split(self, p):
        k = self.left.dim
        return p[..., :k], p[..., k:]

    def _dist(self, p, q):
        pl, pr = self._split(p)
        ql, qr = self._split(q)
        return np.maximum(self.left._dist(pl, ql), self.right._dist(pr, qr))

    def to_origin(self, base, p):
        bl, br = self._split(as_points(base, self.dim))
        pl, pr = self._split(as_points(p, self.dim))
        return np.concatenate([self.left.to_origin(bl, pl), self.right.to_origin(br, pr)], axis=-1)

    def dilate(self, t, p):
        pl, pr = self._split(as_points(p, self.dim))
        return np.concatenate([self.left.dilate(t, pl), self.right.dilate(t, pr)], axis=-1)

    def to_dict(self):
        return {"kind": self.kind, "left": self.left.to_dict(), "right": self.right.to_dict()}

    def label(self):
        return f"max({self.left.label()},{self.right.label()})"


@dataclass(frozen=True)
class LpMeanProduct(MetricSpec):
    """``(|x'-x|^p + |y'-y|^(p/s))^(1/p)`` on the plane, with ``1 <= p < s``."""

    p: float = 2.0
    s: float = 3.0
    kind: ClassVar[str] = "lp_mean_product"

    def __post_init__(self) -> None:
        if not self.p >= 1:
            raise ValueError(f"p must be >= 1, got {self.p}")
        if not self.s > self.p:
            raise ValueError(f"s must exceed p, got s={self.s}, p={self.p}")

    @property
    def dim(self) -> int:
        return 2

    def _dist(self, p, q):
        dx = np.abs(q[..., 0] - p[..., 0])
        dy = np.abs(q[..., 1] - p[..., 1])
        return (dx**self.p + dy ** (self.p / self.s)) ** (1.0 / self.p)

    def dilate(self, t, p):
        t = np.asarray(t, dtype=float)[..., None]
        return as_points(p, 2) * np.concatenate(np.broadcast_arrays(t, t**self.s), axis=-1)

    def to_dict(self):
        return {"kind": self.kind, "p": self.p, "s": self.s}

    def label(self):
        return f"lpmean_p{self.p:g}_s{self.s:g}"


@dataclass(frozen=True)
class _HeisenbergMetric(MetricSpec):
    heisenberg: ClassVar[bool] = True

    @property
    def dim(self) -> int:
        return 3

    def gauge(self, w: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _dist(self, p, q):
        return self.gauge(heis_left_diff(p, q))

    def to_origin(self, base, p):
        return heis_left_diff(base, p)

    def dilate(self, t, p):
        t = np.asarray(t, dtype=float)[..., None]
        return as_points(p, 3) * np.concatenate(np.broadcast_arrays(t, t, t * t), axis=-1)


@dataclass(frozen=True)
class Koranyi(_HeisenbergMetric):
    kind: ClassVar[str] = "koranyi"

    def gauge(self, w):
        return koranyi_gauge(w)

    def to_dict(self):
        return {"kind": self.kind}


@dataclass(frozen=True)
class HebischSikora(_HeisenbergMetric):
    """Homogeneous distance whose unit ball at the identity is the Euclidean ball of radius gamma."""

    gamma: float = 2.0
    kind: ClassVar[str] = "hebisch_sikora"

    def __post_init__(self) -> None:
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")

    def gauge(self, w):
        return hs_gauge(self.gamma, w)

    def to_dict(self):
        return {"kind": self.kind, "gamma": self.gamma}

    def label(self):
        return f"hs_gamma{self.gamma:g}"


@dataclass(frozen=True)
class HeisenbergEps(_HeisenbergMetric):
    eps: float = 1.0
    kind: ClassVar[str] = "heisenberg_eps"

    def __post_init__(self) -> None:
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")

    def gauge(self, w):
        return eps_gauge(self.eps, w)

    def to_dict(self):
        return {"kind": self.kind, "eps": self.eps}

    def label(self):
        return f"heis_eps{self.eps:g}"


@dataclass(frozen=True)
class NonStandardGauge(_HeisenbergMetric):
    """Quasi-distance ``max(|x|, |y|^(1/a), |z|^(1/(a+1)))`` at ``p^{-1} q``.

    One-homogeneous for the non-standard dilations ``(r x, r^a y, r^(a+1) z)``.
    The triangle inequality only holds up to a multiplicative constant.
    """

    alpha: float = 2.0
    kind: ClassVar[str] = "nonstandard_gauge"
    quasi: ClassVar[bool] = True

    def __post_init__(self) -> None:
        if not self.alpha > 1:
            raise ValueError(f"alpha must exceed 1, got {self.alpha}")

    def gauge(self, w):
        return nonstandard_gauge_at(self.alpha, w)

    def dilate(self, t, p):
        t = np.asarray(t, dtype=float)[..., None]
        scale = np.concatenate(np.broadcast_arrays(t, t**self.alpha, t ** (self.alpha + 1)), axis=-1)
        return as_points(p, 3) * scale

    def to_dict(self):
        return {"kind": self.kind, "alpha": self.alpha}

    def label(self):
        return f"nonstd_alpha{self.alpha:g}"


_KINDS: dict[str, type[MetricSpec]] = {
    cls.kind: cls
    for cls in (
        Euclidean,
        PNorm,
        Snowflake,
        MaxProduct,
        LpMeanProduct,
        Koranyi,
        HebischSikora,
        HeisenbergEps,
        NonStandardGauge,
    )
}


def spec_from_dict(data: dict[str, Any]) -> MetricSpec:
    """Rebuild a MetricSpec from its ``{"kind": ..., ...}`` record."""
    try:
        kind = data["kind"]
        cls = _KINDS[kind]
    except (KeyError, TypeError) as exc:
        raise ValueError(f"unknown metric record: {data!r}") from exc
    params = {k: v for k, v in data.items() if k != "kind"}
    for key in ("base", "left", "right"):
        if key in params:
            params[key] = spec_from_dict(params[key])
    try:
        return cls(**params)
    except TypeError as exc:
        raise ValueError(f"bad parameters for {kind}: {params!r}") from exc


def distance(spec: MetricSpec, p: Any, q: Any) -> float | np.ndarray:
    d = spec(p, q)
    return float(d) if np.ndim(d) == 0 else d


def ball_contains(spec: MetricSpec, center: Any, radius: float, p: Any) -> tuple[bool, float]:
    """Closed-ball membership with signed slack ``radius - d(center, p)``."""
    if not (radius > 0 and math.isfinite(radius)):
        raise ValueError(f"ball radius must be positive and finite, got {radius}")
    return spec.ball_contains(center, radius, p)


def koranyi_distance(p: Any, q: Any) -> float | np.ndarray:
    return distance(Koranyi(), p, q)


def hs_distance(gamma: float, p: Any, q: Any) -> float | np.ndarray:
    return distance(HebischSikora(gamma), p, q)


def eps_distance(eps: float, p: Any, q: Any) -> float | np.ndarray:
    return distance(HeisenbergEps(eps), p, q)


def nonstandard_gauge(alpha: float, p: Any, q: Any) -> float | np.ndarray:
    return distance(NonStandardGauge(alpha), p, q)


def sample_points(spec: MetricSpec, rng: np.random.Generator, size: int, scale: float = 1.0) -> np.ndarray:
    """Gaussian sample points of the right dimension for ``spec``."""
    return scale * rng.standard_normal((size, spec.dim))


def quasi_triangle_constant(spec: MetricSpec, rng: np.random.Generator, samples: int = 100_000) -> float:
    """Largest observed ``d(p, r) / (d(p, q) + d(q, r))`` over random triples."""
    p, q, r = (sample_points(spec, rng, samples) for _ in range(3))
    lhs = spec(p, r)
    rhs = spec(p, q) + spec(q, r)
    ok = rhs > 0
    return float(np.max(lhs[ok] / rhs[ok]))
