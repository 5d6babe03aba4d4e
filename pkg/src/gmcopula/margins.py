"""Per-draw marginal CDF estimates for numeric variables.

A margin estimate is a monotone piecewise-cubic curve through knots at the
unique observed values, anchored at 0 and 1 on the support bounds. The knot
heights come either from the latent ordering (margin adjustment) or from the
observed-data ECDF.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import AugmentedView, ColumnSpec, MixedDataset
from .model import ColumnMarginal, GmcState

U_EPS = 1e-12
_INVERSE_ITERS = 80


class DegenerateMarginError(ValueError):
    """A margin was requested for a column with no observed values."""


def fritsch_carlson_slopes(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Hermite slopes that keep the cubic interpolant monotone (Fritsch & Carlson, 1980)."""
    n = x.size
    if n < 2:
        return np.zeros(n)
    with np.errstate(over="ignore"):
        return _limited_slopes(np.diff(y) / np.diff(x), n)


def _limited_slopes(d: np.ndarray, n: int) -> np.ndarray:
    m = np.empty(n)
    m[0], m[-1] = d[0], d[-1]
    m[1:-1] = 0.5 * (d[:-1] + d[1:])
    m[1:-1][d[:-1] * d[1:] <= 0] = 0.0
    for i in range(n - 1):
        if d[i] == 0.0:
            m[i] = m[i + 1] = 0.0
            continue
        a, b = m[i] / d[i], m[i + 1] / d[i]
        s = a * a + b * b
        if s > 9.0:
            t = 3.0 / math.sqrt(s)
            m[i], m[i + 1] = t * a * d[i], t * b * d[i]
    return m


def _hermite(t, y0, y1, m0, m1, h):
    t2 = t * t
    t3 = t2 * t
    return ((2 * t3 - 3 * t2 + 1) * y0 + (t3 - 2 * t2 + t) * h * m0
            + (-2 * t3 + 3 * t2) * y1 + (t3 - t2) * h * m1)


@dataclass
class MarginEstimate:
    """Monotone CDF estimate for one numeric variable.

    ``knots_x``/``knots_u`` exclude the two anchors ``(lo, 0)`` and ``(hi, 1)``.
    ``grid`` is the discreteness of the variable ("continuous" or "integer");
    ``clip`` is the range imputed values are confined to.
    """

    variable: str
    var: int
    kind: str  # "margin_adjust" or "ecdf"
    knots_x: np.ndarray
    knots_u: np.ndarray
    lo: float
    hi: float
    grid: str = "continuous"
    clip: tuple[float | None, float | None] = (None, None)
    draw: int | None = None

    def __post_init__(self):
        self.knots_x = np.asarray(self.knots_x, dtype=float)
        self.knots_u = np.asarray(self.knots_u, dtype=float)
        self._x = np.concatenate(([self.lo], self.knots_x, [self.hi]))
        self._u = np.concatenate(([0.0], self.knots_u, [1.0]))
        if not (np.diff(self._x) > 0).all():
            raise ValueError(f"{self.variable}: knots must be strictly inside (lo, hi) and increasing")
        if not (np.diff(self._u) >= 0).all():
            raise ValueError(f"{self.variable}: knot probabilities must be nondecreasing")
        self._m = fritsch_carlson_slopes(self._x, self._u)

    def cdf(self, x):
        """Evaluate the interpolant; 0 below ``lo`` and 1 above ``hi``."""
        x = np.asarray(x, dtype=float)
        xs, us, ms = self._x, self._u, self._m
        i = np.clip(np.searchsorted(xs, x, side="right") - 1, 0, xs.size - 2)
        h = xs[i + 1] - xs[i]
        t = np.clip((x - xs[i]) / h, 0.0, 1.0)
        out = _hermite(t, us[i], us[i + 1], ms[i], ms[i + 1], h)
        out = np.where(x <= xs[0], 0.0, np.where(x >= xs[-1], 1.0, out))
        return np.clip(out, 0.0, 1.0)

    def continuous_inverse(self, u):
        """Smallest x with cdf(x) >= u, before any support rounding."""
        u = np.clip(np.asarray(u, dtype=float), U_EPS, 1.0 - U_EPS)
        xs, us, ms = self._x, self._u, self._m
        i = np.clip(np.searchsorted(us, u, side="left"), 1, xs.size - 1) - 1
        h = xs[i + 1] - xs[i]
        t_lo = np.zeros_like(u)
        t_hi = np.ones_like(u)
        for _ in range(_INVERSE_ITERS):
            t = 0.5 * (t_lo + t_hi)
            below = _hermite(t, us[i], us[i + 1], ms[i], ms[i + 1], h) < u
            t_lo = np.where(below, t, t_lo)
            t_hi = np.where(below, t_hi, t)
        return xs[i] + t_hi * h

    def inverse(self, u):
        """Generalized inverse, rounded up onto the integer grid for discrete variables."""
        x = self.continuous_inverse(u)
        if self.grid == "integer":
            x = np.ceil(x - 1e-9)
        lo, hi = self.clip
        if lo is not None or hi is not None:
            x = np.clip(x, -np.inf if lo is None else lo, np.inf if hi is None else hi)
        return x

    def to_json(self) -> dict:
        return {"variable": self.variable, "var": self.var, "kind": self.kind,
                "knots_x": self.knots_x.tolist(), "knots_u": self.knots_u.tolist(),
                "lo": self.lo, "hi": self.hi, "grid": self.grid, "clip": list(self.clip),
                "draw": self.draw}

    @classmethod
    def from_json(cls, obj: dict) -> "MarginEstimate":
        obj = dict(obj)
        obj["clip"] = tuple(obj.get("clip", (None, None)))
        return cls(**obj)


def margin_inverse(est: MarginEstimate, u):
    return est.inverse(u)


def support_anchors(spec: ColumnSpec, observed: np.ndarray) -> tuple[float, float, str, tuple]:
    """Anchor points (lo, hi), grid type and clip range for a numeric variable.

    Continuous: schema bounds, else the observed range widened by 10% each
    side. Count: lo = min(0, min observed) unless the schema says otherwise,
    hi = max observed + ceil(10% of the range). Ordinal level indices: one
    step beyond the observed extremes, clipped to the valid levels. Anchors
    that would coincide with an extreme knot are pushed just outside it.
    """
    xmin, xmax = float(observed.min()), float(observed.max())
    rng_ = xmax - xmin
    if spec.kind == "continuous":
        pad = 0.1 * rng_ if rng_ > 0 else max(0.1 * abs(xmin), 1.0)
        lo = spec.support_lo if spec.support_lo is not None else xmin - pad
        hi = spec.support_hi if spec.support_hi is not None else xmax + pad
        tiny = 1e-9 * max(1.0, rng_)
        lo = min(lo, xmin - tiny)
        hi = max(hi, xmax + tiny)
        return lo, hi, "continuous", (spec.support_lo, spec.support_hi)
    if spec.kind == "count":
        lo = spec.support_lo if spec.support_lo is not None else min(0.0, xmin)
        hi = spec.support_hi if spec.support_hi is not None else xmax + max(1.0, math.ceil(0.1 * rng_))
        lo = min(lo, xmin - 1.0)
        hi = max(hi, xmax + 1.0)
        clip_lo = spec.support_lo if spec.support_lo is not None else 0.0
        return lo, hi, "integer", (clip_lo, spec.support_hi)
    # ordinal treated through ranks; values are level indices
    return xmin - 1.0, xmax + 1.0, "integer", (0.0, float(len(spec.levels) - 1))


def _observed(data: MixedDataset, var: int) -> tuple[np.ndarray, np.ndarray]:
    obs = ~data.mask[:, var]
    if not obs.any():
        raise DegenerateMarginError(f"column {data.schema[var].name!r} has no observed values")
    return np.flatnonzero(obs), data.cells[obs, var]


def margin_knot_latents(j: int, Z: np.ndarray, data: MixedDataset, var: int | None = None):
    """Unique observed values x with Z^n(x), the largest observed latent whose
    value is <= x (the latents at the observed minimum when none qualifies).

    ``j`` is the latent column; ``var`` the source variable (defaults to ``j``).
    """
    var = j if var is None else var
    rows, y = _observed(data, var)
    z = Z[rows, j]
    xs, inv = np.unique(y, return_inverse=True)
    level_max = np.full(xs.size, -np.inf)
    np.maximum.at(level_max, inv, z)
    return xs, np.maximum.accumulate(level_max)


def _latent_column(view: AugmentedView, var: int) -> int:
    cols = view.columns_of(var)
    if len(cols) != 1 or view.col_map[cols[0]].kind != "rank":
        raise ValueError(f"variable {var} is not a rank (numeric) variable")
    return cols[0]


def margin_adjust(var: int, state: GmcState, data: MixedDataset, view: AugmentedView,
                  draw: int | None = None) -> MarginEstimate:
    """Margin-adjusted CDF estimate for one numeric variable at one posterior draw."""
    j = _latent_column(view, var)
    xs, zn = margin_knot_latents(j, state.Z, data, var)
    u = ColumnMarginal.from_state(state, j).cdf(zn)
    spec = data.schema[var]
    lo, hi, grid, clip = support_anchors(spec, xs)
    return MarginEstimate(spec.name, var, "margin_adjust", xs, np.maximum.accumulate(u),
                          lo, hi, grid, clip, draw)


def ecdf(var: int, data: MixedDataset, draw: int | None = None) -> MarginEstimate:
    """Observed-data ECDF with the n/(n+1) convention, on the same interpolation machinery."""
    _, y = _observed(data, var)
    xs, counts = np.unique(y, return_counts=True)
    u = np.cumsum(counts) / (y.size + 1.0)
    spec = data.schema[var]
    lo, hi, grid, clip = support_anchors(spec, xs)
    return MarginEstimate(spec.name, var, "ecdf", xs, u, lo, hi, grid, clip, draw)


def numeric_variables(data: MixedDataset) -> list[int]:
    return [v for v, s in enumerate(data.schema) if s.is_numeric]


def estimate_margins(state: GmcState, data: MixedDataset, view: AugmentedView,
                     kind: str = "margin_adjust", draw: int | None = None) -> dict[int, MarginEstimate]:
    if kind == "margin_adjust":
        return {v: margin_adjust(v, state, data, view, draw) for v in numeric_variables(data)}
    if kind == "ecdf":
        return {v: ecdf(v, data, draw) for v in numeric_variables(data)}
    raise ValueError(f"unknown margin kind {kind!r}")
