"""Multiple imputation, posterior-predictive datasets, Rubin pooling and
stratified quantile summaries built on retained sampler draws."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from .data import AugmentedView, MixedDataset, write_dataset
from .margins import MarginEstimate, ecdf, numeric_variables
from .model import ColumnMarginal, GmcState
from .sampler import Draw, orthant_probabilities


@dataclass
class CompletedDataset:
    data: MixedDataset
    draw: int
    seed: int | None = None


@dataclass(frozen=True)
class PooledEstimate:
    point: float
    within_var: float
    between_var: float
    total_var: float
    df: float
    interval: tuple[float, float]
    level: float = 0.95
    m: int = 0


# ----------------------------------------------------------------------------
# single-cell operations


def impute_numeric(j: int, i: int, state: GmcState, margin: MarginEstimate) -> float:
    """F~_j^{-1}(psi_j(z_ij)) for latent column ``j`` and row ``i``."""
    u = ColumnMarginal.from_state(state, j).cdf(state.Z[i, j])
    return float(margin.inverse(u))


def categorical_probabilities(cols: Sequence[int], rows, state: GmcState) -> np.ndarray:
    """Predictive level probabilities (rows x levels) given the current factors."""
    cols = list(cols)
    means = state.eta[np.atleast_1d(rows)] @ state.Lambda[cols].T
    sd = np.sqrt(state.sigma2[cols])
    if len(cols) == 1:
        p_pos = stats.norm.sf(0.0, loc=means[:, 0], scale=sd[0])
        return np.column_stack([1.0 - p_pos, p_pos])
    return orthant_probabilities(means, sd)


def impute_categorical(cols: Sequence[int], i: int, state: GmcState,
                       rng: np.random.Generator | None = None) -> tuple[int, np.ndarray]:
    """Sample a level for a missing categorical cell; also return the probability vector.

    ``cols`` are the latent columns of the variable (one for a binary variable).
    """
    probs = categorical_probabilities(cols, i, state)[0]
    rng = np.random.default_rng() if rng is None else rng
    return int(rng.choice(probs.size, p=probs)), probs


def decode_categorical(z: np.ndarray) -> np.ndarray:
    """Level indices from latent rows (n x levels, or n x 1 for binary).

    Rows of a k >= 3 block with no single positive coordinate fall back to argmax.
    """
    if z.shape[1] == 1:
        return (z[:, 0] > 0).astype(float)
    return np.argmax(z, axis=1).astype(float)


def decode_predictive(z: np.ndarray, means: np.ndarray, sd: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Levels for fresh latent rows of one categorical block.

    A row with exactly one positive coordinate takes that level. Any other row
    draws its level from the orthant probabilities given its factor mean, so the
    decoded level has exactly the normalized predictive law of impute_categorical.
    """
    if z.shape[1] == 1:
        return (z[:, 0] > 0).astype(float)
    pos = z > 0
    level = np.argmax(z, axis=1)
    odd = pos.sum(axis=1) != 1
    if odd.any():
        probs = orthant_probabilities(means[odd], sd)
        cum = np.cumsum(probs, axis=1)
        u = rng.random(int(odd.sum()))[:, None]
        level[odd] = np.minimum((cum < u).sum(axis=1), z.shape[1] - 1)
    return level.astype(float)


# ----------------------------------------------------------------------------
# whole-dataset operations


def _margins_for(draw: Draw, data: MixedDataset, kind: str) -> dict[int, MarginEstimate]:
    if kind == "margin_adjust":
        return draw.margins
    if kind == "ecdf":
        return {v: ecdf(v, data, draw.iteration) for v in numeric_variables(data)}
    raise ValueError(f"unknown margin kind {kind!r}")


def complete_from_draw(draw: Draw, data: MixedDataset, view: AugmentedView,
                       kind: str = "margin_adjust") -> CompletedDataset:
    """Fill every missing cell of ``data`` from one retained draw."""
    state = draw.state
    cells = data.cells.copy()
    margins = _margins_for(draw, data, kind)
    for var, cols in view.variable_groups().items():
        miss = data.mask[:, var]
        if not miss.any():
            continue
        if data.schema[var].is_numeric:
            j = cols[0]
            u = ColumnMarginal.from_state(state, j).cdf(state.Z[miss, j])
            cells[miss, var] = margins[var].inverse(u)
        else:
            cells[miss, var] = decode_categorical(state.Z[np.ix_(miss, cols)])
    return CompletedDataset(MixedDataset(data.schema, cells, np.zeros_like(data.mask)), draw.iteration)


def multiple_impute(draws: Sequence[Draw], data: MixedDataset, view: AugmentedView,
                    kind: str = "margin_adjust") -> list[CompletedDataset]:
    """One completed dataset per retained draw.

    Categorical cells come from the orthant of the retained latent row, which
    the sampler drew after classifying the cell, so no extra randomness is used.
    """
    if not draws:
        raise ValueError("need at least one retained draw")
    return [complete_from_draw(d, data, view, kind) for d in draws]


def posterior_predictive(draws: Sequence[Draw], n_new: int, data: MixedDataset, view: AugmentedView,
                         reps: int | None = None, rng: np.random.Generator | None = None,
                         kind: str = "margin_adjust") -> list[MixedDataset]:
    """Fresh datasets of ``n_new`` rows from the posterior predictive.

    Per row: a component h ~ pi, factors eta ~ N(mu_h, Delta_h), latents
    z ~ N(Lambda eta, Sigma); numeric cells map through psi_j and the margin
    inverse, categorical cells through :func:`decode_predictive`.

    ``reps`` datasets are generated (default one per draw), cycling through the
    draws when more datasets than draws are requested. ``data`` supplies the
    schema and, for ECDF margins, the observed values.
    """
    if not draws:
        raise ValueError("need at least one retained draw")
    rng = np.random.default_rng() if rng is None else rng
    reps = len(draws) if reps is None else reps
    out = []
    for r in range(reps):
        draw = draws[r % len(draws)]
        s = draw.state
        margins = _margins_for(draw, data, kind)
        h = rng.choice(s.H, size=n_new, p=s.pi / s.pi.sum())
        L = np.linalg.cholesky(s.Delta)
        eta = s.mu[h] + (L[h] @ rng.standard_normal((n_new, s.k, 1)))[:, :, 0]
        means = eta @ s.Lambda.T
        sd = np.sqrt(s.sigma2)
        z = means + sd * rng.standard_normal((n_new, s.Lambda.shape[0]))
        cells = np.empty((n_new, data.p))
        for var, cols in view.variable_groups().items():
            if data.schema[var].is_numeric:
                j = cols[0]
                cells[:, var] = margins[var].inverse(ColumnMarginal.from_state(s, j).cdf(z[:, j]))
            else:
                cells[:, var] = decode_predictive(z[:, cols], means[:, cols], sd[cols], rng)
        out.append(MixedDataset(data.schema, cells))
    return out


# ----------------------------------------------------------------------------
# analysis helpers


def rubin_combine(estimates, variances, level: float = 0.95) -> PooledEstimate:
    """Pool m point estimates and their sampling variances by Rubin's rules."""
    q = np.asarray(estimates, dtype=float)
    u = np.asarray(variances, dtype=float)
    m = q.size
    if m < 2 or u.size != m:
        raise ValueError("rubin_combine needs m >= 2 estimates with matching variances")
    if (u <= 0).any():
        raise ValueError("variances must be positive")
    point = float(q.mean())
    W = float(u.mean())
    B = float(q.var(ddof=1))
    T = W + (1.0 + 1.0 / m) * B
    df = math.inf if B == 0 else (m - 1) * (1.0 + W / ((1.0 + 1.0 / m) * B)) ** 2
    crit = stats.t.ppf(0.5 * (1.0 + level), df)
    half = crit * math.sqrt(T)
    return PooledEstimate(point, W, B, T, df, (point - half, point + half), level, m)


@dataclass(frozen=True)
class OlsFit:
    coef: np.ndarray
    se: np.ndarray
    df: int
    sigma2: float


def ols(X: np.ndarray, y: np.ndarray) -> OlsFit:
    """Least squares with classical standard errors."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if n <= p:
        raise ValueError(f"OLS needs more rows ({n}) than columns ({p})")
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    df = n - p
    s2 = float(resid @ resid) / df
    cov = s2 * np.linalg.inv(X.T @ X)
    return OlsFit(coef, np.sqrt(np.diag(cov)), df, s2)


def type1_quantile(x: np.ndarray, q) -> np.ndarray:
    """Inverse-ECDF quantile: the smallest x with F_n(x) >= q."""
    return np.quantile(np.asarray(x, dtype=float), q, method="inverted_cdf")


def hpd_interval(samples, mass: float = 0.95) -> tuple[float, float]:
    """Shortest window holding ceil(mass * n) of the sorted samples (first one on ties)."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    if n == 0:
        raise ValueError("no samples")
    w = max(1, math.ceil(mass * n - 1e-12))
    widths = x[w - 1:] - x[:n - w + 1]
    i = int(np.argmin(widths))
    return float(x[i]), float(x[i + w - 1])


@dataclass(frozen=True)
class QuantileRow:
    stratum: tuple[str, ...]
    q: float
    median: float
    hpd_lo: float
    hpd_hi: float
    n_datasets: int


def stratified_quantile_summary(datasets: Sequence[MixedDataset], strata_vars: Sequence[str], target: str,
                                q: Sequence[float], mass: float = 0.95) -> list[QuantileRow]:
    """Per-stratum type-1 sample quantiles of ``target`` summarized across datasets.

    Strata absent from a dataset are skipped for that dataset; a stratum absent
    from every dataset produces no rows.
    """
    if not datasets:
        raise ValueError("no datasets")
    first = datasets[0]
    svars = [first.column_index(s) for s in strata_vars]
    for v in svars:
        if first.schema[v].kind != "categorical":
            raise ValueError(f"stratum variable {first.schema[v].name!r} is not categorical")
    t = first.column_index(target)
    level_sets = [first.schema[v].levels for v in svars]
    collected: dict[tuple[int, ...], list[np.ndarray]] = {}
    for d in datasets:
        keys = d.cells[:, svars].astype(int)
        for key in {tuple(k) for k in keys.tolist()}:
            rows = (keys == np.array(key)).all(axis=1)
            collected.setdefault(key, []).append(type1_quantile(d.cells[rows, t], q))
    out = []
    for key in sorted(collected):
        vals = np.array(collected[key])
        label = tuple(level_sets[i][k] for i, k in enumerate(key))
        for c, qq in enumerate(q):
            lo, hi = hpd_interval(vals[:, c], mass)
            out.append(QuantileRow(label, float(qq), float(np.median(vals[:, c])), lo, hi, vals.shape[0]))
    return out


# ----------------------------------------------------------------------------
# writers


def write_completed(datasets: Sequence[CompletedDataset], outdir) -> list[Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = []
    for r, cd in enumerate(datasets, start=1):
        p = outdir / f"imputed_{r:04d}.csv"
        write_dataset(cd.data, p)
        paths.append(p)
    return paths


POOLED_HEADER = ("term", "estimate", "within_var", "between_var", "total_var", "df", "lo", "hi", "level", "m")


def write_pooled(terms: Sequence[str], pooled: Sequence[PooledEstimate], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(POOLED_HEADER)
        for name, p in zip(terms, pooled):
            w.writerow([name, repr(p.point), repr(p.within_var), repr(p.between_var), repr(p.total_var),
                        repr(p.df), repr(p.interval[0]), repr(p.interval[1]), p.level, p.m])


QUANTILE_HEADER = ("stratum", "q", "median", "hpd_lo", "hpd_hi", "n_datasets")


def write_quantile_table(rows: Sequence[QuantileRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(QUANTILE_HEADER)
        for r in rows:
            w.writerow(["/".join(r.stratum), r.q, repr(r.median), repr(r.hpd_lo), repr(r.hpd_hi), r.n_datasets])
