"""Gaussian mixture copula parameterization: hyperparameters, posterior state, and
the induced marginal CDF of each latent column."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace

import numpy as np
from scipy.special import ndtr

QUANTILE_MAX_ITER = 200


@dataclass(frozen=True)
class Hyperparams:
    H: int
    k: int
    delta: float = 10.0
    kappa0: float = 0.001
    nu0: float | None = None
    mu0: float = 0.0  # scalar fill for the k-vector prior mean
    a_alpha: float = 1.0
    b_alpha: float = 1.0
    a_sigma: float = 1.0
    b_sigma: float = 1.0
    a1: float = 2.0
    a2: float = 3.0
    nu_phi: float = 3.0
    resample_threshold: int = 350

    def __post_init__(self):
        if self.nu0 is None:
            object.__setattr__(self, "nu0", float(self.k + 2))
        if self.H < 1:
            raise ValueError("H must be >= 1")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.nu0 < self.k + 2:
            raise ValueError("nu0 must be >= k + 2")
        for name in ("delta", "kappa0", "a_alpha", "b_alpha", "a_sigma", "b_sigma", "a1", "a2", "nu_phi"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.resample_threshold < 0:
            raise ValueError("resample_threshold must be >= 0")

    def check_dims(self, p_star: int) -> None:
        if self.k > p_star:
            raise ValueError(f"k={self.k} exceeds p*={p_star}")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "Hyperparams":
        names = {f.name for f in fields(cls)}
        unknown = set(obj) - names
        if unknown:
            raise ValueError(f"unknown hyperparameters: {sorted(unknown)}")
        return cls(**obj)


def default_hyperparams(p_star: int, **overrides) -> Hyperparams:
    """Defaults: k = ceil(0.7 p*), delta = 10, kappa0 = 0.001, nu0 = k + 2,
    shrinkage (a1, a2, nu_phi) = (2, 3, 3), rank-resampling threshold 350, H = 20."""
    if p_star < 1:
        raise ValueError("p_star must be >= 1")
    k = overrides.pop("k", None) or math.ceil(0.7 * p_star - 1e-12)
    return Hyperparams(H=overrides.pop("H", 20), k=k, **overrides)


def stick_break(V) -> np.ndarray:
    """Weights pi_h = V_h prod_{l<h} (1 - V_l) from stick fractions."""
    V = np.asarray(V, dtype=float)
    if V.ndim != 1 or V.size == 0:
        raise ValueError("V must be a non-empty vector")
    if ((V < 0) | (V > 1) | np.isnan(V)).any():
        raise ValueError("stick fractions must lie in [0, 1]")
    if V[-1] != 1.0:
        raise ValueError("last stick fraction must be 1 to close the truncation")
    remaining = np.concatenate(([1.0], np.cumprod(1.0 - V[:-1])))
    return V * remaining


@dataclass
class GmcState:
    """One posterior draw of the mixture-of-factor-models copula."""

    Lambda: np.ndarray  # p* x k
    sigma2: np.ndarray  # p*
    V: np.ndarray  # H
    pi: np.ndarray  # H
    mu: np.ndarray  # H x k
    Delta: np.ndarray  # H x k x k
    c: np.ndarray  # n, cluster labels 0..H-1
    eta: np.ndarray  # n x k
    Z: np.ndarray  # n x p*
    alpha: float
    phi: np.ndarray  # p* x k
    delta_tau: np.ndarray  # k
    tau: np.ndarray  # k

    @property
    def H(self) -> int:
        return self.pi.shape[0]

    @property
    def k(self) -> int:
        return self.Lambda.shape[1]

    def copy(self) -> "GmcState":
        return replace(self, **{f.name: np.array(getattr(self, f.name), copy=True)
                                for f in fields(self) if f.name != "alpha"})

    def component_means(self) -> np.ndarray:
        """H x p* matrix of (Lambda mu_h)_j."""
        return self.mu @ self.Lambda.T

    def component_variances(self) -> np.ndarray:
        """H x p* matrix of (Lambda Delta_h Lambda' + Sigma)_jj."""
        quad = np.einsum("jk,hkl,jl->hj", self.Lambda, self.Delta, self.Lambda)
        return quad + self.sigma2[None, :]

    def component_covariance(self, h: int) -> np.ndarray:
        return self.Lambda @ self.Delta[h] @ self.Lambda.T + np.diag(self.sigma2)

    def occupied(self) -> int:
        return int(np.unique(self.c).size) if self.c.size else 0

    def to_json(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.tolist() if isinstance(v, np.ndarray) else float(v)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "GmcState":
        kw = {}
        for f in fields(cls):
            v = obj[f.name]
            if f.name == "alpha":
                kw[f.name] = float(v)
            elif f.name == "c":
                kw[f.name] = np.asarray(v, dtype=np.int64)
            else:
                kw[f.name] = np.asarray(v, dtype=float)
        k = len(kw["tau"])
        n = len(kw["c"])
        kw["eta"] = kw["eta"].reshape(n, k)
        kw["Z"] = kw["Z"].reshape(n, len(kw["sigma2"]))
        return cls(**kw)


class ColumnMarginal:
    """Marginal law psi_j of one latent column: a univariate Gaussian mixture."""

    def __init__(self, weights, means, variances):
        self.weights = np.asarray(weights, dtype=float)
        self.means = np.asarray(means, dtype=float)
        self.sd = np.sqrt(np.asarray(variances, dtype=float))
        if (self.sd <= 0).any():
            raise ValueError("component variances must be positive")

    @classmethod
    def from_state(cls, state: GmcState, j: int) -> "ColumnMarginal":
        return cls(state.pi, state.component_means()[:, j], state.component_variances()[:, j])

    def cdf(self, z):
        z = np.asarray(z, dtype=float)
        # ndtr of negative arguments is computed via erfc, so lower tails keep precision
        u = ndtr((z[..., None] - self.means) / self.sd) @ self.weights
        return np.clip(u, 0.0, 1.0)

    def sf(self, z):
        z = np.asarray(z, dtype=float)
        return np.clip(ndtr((self.means - z[..., None]) / self.sd) @ self.weights, 0.0, 1.0)

    def quantile(self, u):
        """Invert the mixture CDF by bracketing bisection."""
        u = np.asarray(u, dtype=float)
        if ((u <= 0) | (u >= 1) | np.isnan(u)).any():
            raise ValueError("quantile level must lie strictly in (0, 1)")
        scalar = u.ndim == 0
        u = np.atleast_1d(u)
        spread = 10.0 * self.sd.max()
        lo = np.full(u.shape, self.means.min() - spread)
        hi = np.full(u.shape, self.means.max() + spread)
        step = spread
        for _ in range(64):
            low_bad = self.cdf(lo) > u
            if not low_bad.any():
                break
            lo = np.where(low_bad, lo - step, lo)
            step *= 2.0
        step = spread
        for _ in range(64):
            high_bad = self.cdf(hi) < u
            if not high_bad.any():
                break
            hi = np.where(high_bad, hi + step, hi)
            step *= 2.0
        for _ in range(QUANTILE_MAX_ITER):
            mid = 0.5 * (lo + hi)
            f = self.cdf(mid)
            below = f < u
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
            if (hi - lo <= 4e-16 * np.maximum(1.0, np.abs(mid))).all():
                break
        z = 0.5 * (lo + hi)
        return float(z[0]) if scalar else z


def mixture_marginal_cdf(j: int, z, state: GmcState):
    return ColumnMarginal.from_state(state, j).cdf(z)


def mixture_marginal_quantile(j: int, u, state: GmcState):
    return ColumnMarginal.from_state(state, j).quantile(u)
