"""Vectorized truncated normal sampling.

Central regions use the inverse-CDF method, evaluated on whichever side of the
mean keeps the tail probabilities away from 1. Standardized bounds beyond
``TAIL_CUTOFF`` switch to rejection from a translated exponential proposal
(Robert, 1995), or from a uniform proposal when the interval is narrow.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

TAIL_CUTOFF = 5.0


@dataclass(frozen=True)
class TruncationBound:
    lo: float = -np.inf
    hi: float = np.inf

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"empty truncation interval ({self.lo}, {self.hi})")


def _tail_rejection(a, b, rng):
    """Standard normal restricted to (a, b) with a >= TAIL_CUTOFF."""
    out = np.empty_like(a)
    todo = np.arange(a.size)
    lam = 0.5 * (a + np.sqrt(a * a + 4.0))
    narrow = (b - a) * (b + a) < 2.0
    while todo.size:
        aa, bb, ll, nn = a[todo], b[todo], lam[todo], narrow[todo]
        # exponential proposal for wide intervals, uniform for narrow ones
        x_exp = aa + rng.exponential(size=todo.size) / ll
        x_uni = aa + rng.random(todo.size) * np.where(np.isfinite(bb), bb - aa, 0.0)
        x = np.where(nn, x_uni, x_exp)
        log_acc = np.where(nn, -0.5 * (x * x - aa * aa), -0.5 * (x - ll) ** 2)
        ok = (np.log(rng.random(todo.size)) <= log_acc) & (x < bb) & (x > aa)
        out[todo[ok]] = x[ok]
        todo = todo[~ok]
    return out


def standard_truncated_normal(a, b, rng):
    """Draws from N(0, 1) restricted to (a, b), elementwise."""
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    a, b = a.ravel().copy(), b.ravel().copy()
    if (~(a < b)).any():
        raise ValueError("truncation bounds require lo < hi")
    out = np.empty(a.size)
    upper = a >= TAIL_CUTOFF
    lower = b <= -TAIL_CUTOFF
    central = ~(upper | lower)
    if upper.any():
        out[upper] = _tail_rejection(a[upper], b[upper], rng)
    if lower.any():
        out[lower] = -_tail_rejection(-b[lower], -a[lower], rng)
    if central.any():
        ac, bc = a[central], b[central]
        u = rng.random(ac.size)
        right = ac > 0
        # right of the mean: work with survival probabilities
        sa, sb = ndtr(-ac), ndtr(-bc)
        x_right = -ndtri(sa - u * (sa - sb))
        fa, fb = ndtr(ac), ndtr(bc)
        x_left = ndtri(fa + u * (fb - fa))
        x = np.where(right, x_right, x_left)
        lo_in = np.nextafter(ac, np.inf)
        hi_in = np.nextafter(bc, -np.inf)
        out[central] = np.clip(x, lo_in, hi_in)
    return out


def sample_truncated_normal(mean, var, lo=-np.inf, hi=np.inf, rng=None):
    """Draw from N(mean, var) restricted to the open interval (lo, hi).

    All arguments broadcast; a scalar call returns a float.
    """
    rng = np.random.default_rng() if rng is None else rng
    mean, var, lo, hi = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (mean, var, lo, hi)))
    if (var <= 0).any() or np.isnan(var).any():
        raise ValueError("variance must be positive")
    sd = np.sqrt(var)
    z = standard_truncated_normal((lo - mean) / sd, (hi - mean) / sd, rng).reshape(mean.shape)
    x = mean + sd * z
    # the affine map can round onto a bound
    x = np.clip(x, np.nextafter(lo, np.inf), np.nextafter(hi, -np.inf))
    return float(x) if x.ndim == 0 else x

