"""Rank-probit-likelihood Gibbs sampler for the mixture-of-factor-models copula.

One sweep updates, in order: cluster parameters (labels, stick fractions,
NIW component parameters, DP concentration), factor-model parameters
(factors, loadings, idiosyncratic variances, shrinkage scales), and finally
the latent matrix Z under the rank and diagonal-orthant constraints.
"""
from __future__ import annotations

import json
import logging
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular
from scipy.special import log_ndtr, ndtr, ndtri

from .data import AugmentedView, MixedDataset
from .margins import MarginEstimate, estimate_margins
from .model import GmcState, Hyperparams, default_hyperparams, stick_break
from .truncnorm import TruncationBound, standard_truncated_normal

log = logging.getLogger(__name__)

SIGMA2_FLOOR = 1e-8
BETA_CLAMP = 1e-12
JITTER = 1e-8
LABEL_UPDATES = ("marginal", "conditional")


class NumericalError(RuntimeError):
    """A posterior update failed numerically (e.g. a Cholesky factorization)."""


class DegenerateColumnError(ValueError):
    """A numeric column carries no ordering information."""


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ChainConfig:
    n_iter: int
    burn_in: int
    thin: int = 1
    seed: int = 0
    hyper: Hyperparams | None = None
    labels: str = "conditional"

    def __post_init__(self):
        if self.labels not in LABEL_UPDATES:
            raise ConfigError(f"labels must be one of {LABEL_UPDATES}")
        if self.n_iter < 1:
            raise ConfigError("n_iter must be >= 1")
        if not 0 <= self.burn_in < self.n_iter:
            raise ConfigError(f"burn_in ({self.burn_in}) must be < n_iter ({self.n_iter})")
        if self.thin < 1:
            raise ConfigError("thin must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    def retained_iterations(self) -> list[int]:
        return list(range(self.burn_in + self.thin, self.n_iter + 1, self.thin))


@dataclass
class Draw:
    """A retained posterior draw with its margin estimates."""

    iteration: int
    state: GmcState
    margins: dict[int, MarginEstimate] = field(default_factory=dict)


# ----------------------------------------------------------------------------
# truncation bounds


def rank_bounds(j: int, i: int, Z: np.ndarray, y: np.ndarray, mask: np.ndarray | None = None) -> TruncationBound:
    """Bounds for z_ij implied by the observed ranks of column ``y``.

    ``j`` indexes the latent column of ``Z``; ``y`` is the source variable's
    column and ``mask`` its missingness (True = missing). Ties give no constraint.
    """
    obs = ~np.isnan(y) if mask is None else ~np.asarray(mask, dtype=bool)
    obs = obs.copy()
    obs[i] = False
    z, yy = Z[obs, j], y[obs]
    below = z[yy < y[i]]
    above = z[yy > y[i]]
    lo = below.max() if below.size else -np.inf
    hi = above.min() if above.size else np.inf
    return TruncationBound(lo, hi)


def orthant_bounds(gamma_ij: int) -> TruncationBound:
    if gamma_ij == 1:
        return TruncationBound(0.0, np.inf)
    if gamma_ij == 0:
        return TruncationBound(-np.inf, 0.0)
    raise ValueError("indicator is unset; classify the cell before bounding it")


def orthant_probabilities(means: np.ndarray, sds: np.ndarray) -> np.ndarray:
    """Probability that only coordinate m of N(means, diag(sds^2)) is positive,
    normalized over m. Rows index cells, columns index levels."""
    means = np.atleast_2d(means)
    sds = np.broadcast_to(sds, means.shape)
    log_neg = log_ndtr(-means / sds)
    log_pos = log_ndtr(means / sds)
    logp = log_neg.sum(axis=1, keepdims=True) - log_neg + log_pos
    logp -= logp.max(axis=1, keepdims=True)
    p = np.exp(logp)
    return p / p.sum(axis=1, keepdims=True)


# ----------------------------------------------------------------------------
# precomputed structure of the latent columns


@dataclass
class _RankColumn:
    j: int
    var: int
    resample: bool
    order: np.ndarray  # observed rows sorted by value
    starts: np.ndarray  # start offsets of each tie group within order
    missing: np.ndarray


@dataclass
class _CategoricalGroup:
    var: int
    cols: list[int]
    missing: np.ndarray


@dataclass
class SamplerPlan:
    n: int
    p_star: int
    rank: list[_RankColumn]
    binary: list[_CategoricalGroup]
    orthant: list[_CategoricalGroup]
    gamma: np.ndarray

    @property
    def categorical_columns(self) -> list[int]:
        return [j for grp in self.binary + self.orthant for j in grp.cols]

    @classmethod
    def build(cls, data: MixedDataset, view: AugmentedView, resample_threshold: int) -> "SamplerPlan":
        rank, binary, orthant = [], [], []
        for var, cols in view.variable_groups().items():
            kind = view.col_map[cols[0]].kind
            miss = np.flatnonzero(data.mask[:, var])
            if kind == "rank":
                obs = np.flatnonzero(~data.mask[:, var])
                y = data.cells[obs, var]
                order = obs[np.argsort(y, kind="stable")]
                ys = data.cells[order, var]
                starts = np.flatnonzero(np.r_[True, ys[1:] != ys[:-1]]) if ys.size else np.zeros(0, int)
                rank.append(_RankColumn(cols[0], var, starts.size <= resample_threshold, order, starts, miss))
            elif kind == "binary":
                binary.append(_CategoricalGroup(var, cols, miss))
            else:
                orthant.append(_CategoricalGroup(var, cols, miss))
        return cls(data.n, view.p_star, rank, binary, orthant, view.gamma)


# ----------------------------------------------------------------------------
# initialization


def _normal_scores(y: np.ndarray) -> np.ndarray:
    from scipy.stats import rankdata

    return ndtri((rankdata(y, method="average") - 0.5) / y.size)


def _standardize(x: np.ndarray) -> np.ndarray:
    sd = x.std()
    return (x - x.mean()) / (sd if sd > 0 else 1.0)


def init_latent(data: MixedDataset, view: AugmentedView, rng: np.random.Generator,
                resample_threshold: int | None = None) -> np.ndarray:
    """Starting latent matrix.

    Observed numeric cells get mid-rank normal scores, standardized. Columns
    with more than ``resample_threshold`` unique values are never resampled and
    instead hold the standardized raw values (pseudo-data), which keep the
    column's skew and multimodality. Observed categorical cells are drawn in
    their orthant; missing cells are standard normal.
    """
    Z = rng.standard_normal((data.n, view.p_star))
    for j, col in enumerate(view.col_map):
        var = col.var
        obs = ~data.mask[:, var]
        if col.kind == "rank":
            y = data.cells[obs, var]
            n_unique = np.unique(y).size
            if n_unique < 2:
                raise DegenerateColumnError(
                    f"column {data.schema[var].name!r} needs >= 2 distinct observed values, has {n_unique}")
            if resample_threshold is not None and n_unique > resample_threshold:
                Z[obs, j] = _standardize(y)
            else:
                Z[obs, j] = _standardize(_normal_scores(y))
        else:
            g = view.gamma[obs, j]
            Z[obs, j] = np.abs(Z[obs, j]) * np.where(g == 1, 1.0, -1.0)
    return Z


def _initial_labels(eta: np.ndarray, H: int) -> np.ndarray:
    """k-means partition of the starting factor scores into max(1, H // 4) groups.

    Starting every row in one cluster leaves the label update to split it,
    which can take thousands of sweeps.
    """
    n = eta.shape[0]
    G = max(1, H // 4)
    if G == 1 or n < 4 * G:
        return np.zeros(n, dtype=np.int64)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        _, lab = kmeans2(eta, G, minit="++", seed=0)
    return lab.astype(np.int64)


def initial_state(Z: np.ndarray, hyper: Hyperparams) -> GmcState:
    """Deterministic parameter start: principal-component factors and a
    k-means partition of their scores."""
    n, p_star = Z.shape
    H, k = hyper.H, hyper.k
    if n > 0:
        U, S, Vt = np.linalg.svd(Z, full_matrices=False)
        kk = min(k, S.size)
        Lambda = np.zeros((p_star, k))
        Lambda[:, :kk] = Vt[:kk].T * (S[:kk] / np.sqrt(n))
        eta = np.zeros((n, k))
        eta[:, :kk] = U[:, :kk] * np.sqrt(n)
        resid = Z - eta @ Lambda.T
        sigma2 = np.clip(resid.var(axis=0), 0.1, 1.0)
    else:
        Lambda = np.zeros((p_star, k))
        eta = np.zeros((0, k))
        sigma2 = np.ones(p_star)
    V = np.ones(H)
    V[:-1] = 1.0 / (H - np.arange(H - 1))
    c = _initial_labels(eta, H)
    mu = np.zeros((H, k))
    for h in np.unique(c):
        mu[h] = eta[c == h].mean(axis=0)
    return GmcState(
        Lambda=Lambda, sigma2=sigma2, V=V, pi=stick_break(V),
        mu=mu, Delta=np.tile(np.eye(k), (H, 1, 1)),
        c=c, eta=eta, Z=Z.copy(), alpha=1.0,
        phi=np.ones((p_star, k)), delta_tau=np.ones(k), tau=np.ones(k),
    )


# ----------------------------------------------------------------------------
# conjugate building blocks


def _chol(A: np.ndarray, what: str) -> np.ndarray:
    try:
        return cholesky(A, lower=True)
    except LinAlgError:
        pass
    try:
        return cholesky(A + JITTER * np.eye(A.shape[0]), lower=True)
    except LinAlgError:
        raise NumericalError(f"Cholesky factorization failed for {what}") from None


def niw_posterior(eta_h: np.ndarray, hyper: Hyperparams) -> tuple[np.ndarray, float, float, np.ndarray]:
    """(mu_post, kappa_post, nu_post, Psi_post) for the rows of one cluster."""
    k = hyper.k
    mu0 = np.full(k, hyper.mu0)
    Psi = hyper.delta ** 2 * np.eye(k)
    nh = eta_h.shape[0]
    if nh == 0:
        return mu0, hyper.kappa0, hyper.nu0, Psi
    bar = eta_h.mean(axis=0)
    dev = eta_h - bar
    S = dev.T @ dev
    T = np.outer(mu0 - bar, mu0 - bar)
    kappa = hyper.kappa0 + nh
    Psi = Psi + S + (hyper.kappa0 * nh / kappa) * T
    return (hyper.kappa0 * mu0 + nh * bar) / kappa, kappa, hyper.nu0 + nh, Psi


def _batched_chol(A: np.ndarray, what: str) -> np.ndarray:
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        return np.stack([_chol(a, f"{what}[{h}]") for h, a in enumerate(A)])


def sample_inverse_wishart_batch(nu: np.ndarray, Psi: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Independent IW(nu[h], Psi[h]) draws for a stack of scale matrices."""
    H, k, _ = Psi.shape
    C = _batched_chol(Psi, "inverse-Wishart scale")
    A = np.zeros((H, k, k))
    A[:, np.arange(k), np.arange(k)] = np.sqrt(rng.chisquare(nu[:, None] - np.arange(k)[None, :]))
    li = np.tril_indices(k, -1)
    A[:, li[0], li[1]] = rng.standard_normal((H, li[0].size))
    M = np.linalg.solve(A, np.swapaxes(C, 1, 2))
    out = np.swapaxes(M, 1, 2) @ M
    return 0.5 * (out + np.swapaxes(out, 1, 2))


def sample_inverse_wishart(nu: float, Psi: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """IW(nu, Psi) draw (mean Psi / (nu - k - 1)) via the Bartlett decomposition."""
    return sample_inverse_wishart_batch(np.array([float(nu)]), Psi[None], rng)[0]


def niw_posterior_batch(eta: np.ndarray, c: np.ndarray, H: int, hyper: Hyperparams):
    """Posterior (mean, kappa, nu, Psi) of every component; empty ones keep the prior."""
    n, k = eta.shape
    onehot = np.zeros((n, H))
    onehot[np.arange(n), c] = 1.0
    nh = onehot.sum(axis=0)
    sums = onehot.T @ eta
    bar = sums / np.maximum(nh, 1.0)[:, None]
    second = (onehot.T @ (eta[:, :, None] * eta[:, None, :]).reshape(n, k * k)).reshape(H, k, k)
    S = second - nh[:, None, None] * bar[:, :, None] * bar[:, None, :]
    mu0 = np.full(k, hyper.mu0)
    d0 = mu0[None, :] - bar
    kappa = hyper.kappa0 + nh
    Psi = (hyper.delta ** 2 * np.eye(k))[None] + S \
        + (hyper.kappa0 * nh / kappa)[:, None, None] * d0[:, :, None] * d0[:, None, :]
    Psi = 0.5 * (Psi + np.swapaxes(Psi, 1, 2))
    mean = (hyper.kappa0 * mu0[None, :] + sums) / kappa[:, None]
    return mean, kappa, hyper.nu0 + nh, Psi


def _label_logits(state: GmcState, marginal: bool) -> np.ndarray:
    """n x H unnormalized log label probabilities.

    ``marginal`` integrates the factors out, scoring z_i against
    N(Lambda mu_h, Lambda Delta_h Lambda' + Sigma); otherwise eta_i is scored
    against N(mu_h, Delta_h).
    """
    if marginal:
        x = state.Z
        means = state.component_means()
        cov = state.Lambda @ state.Delta @ state.Lambda.T + np.diag(state.sigma2)[None]
    else:
        x, means, cov = state.eta, state.mu, state.Delta
    L = _batched_chol(cov, "component covariance")
    Linv = np.linalg.inv(L)
    # whitened residuals, H x n x d
    dev = (x[None, :, :] - means[:, None, :]) @ np.swapaxes(Linv, 1, 2)
    with np.errstate(divide="ignore"):
        log_w = np.log(state.pi) - np.log(np.diagonal(L, axis1=1, axis2=2)).sum(axis=1)
    return log_w[None, :] - 0.5 * (dev * dev).sum(axis=2).T



def update_clusters(state: GmcState, hyper: Hyperparams, rng: np.random.Generator,
                    labels: str = "conditional") -> None:
    """Labels, stick fractions, NIW component parameters and the DP concentration.

    With ``labels="marginal"`` the labels are drawn with the factors integrated
    out and the factors are then redrawn given the new labels, i.e. (c, eta)
    is updated as one block. ``"conditional"`` draws c given the current eta.
    """
    H, n, k = state.H, state.eta.shape[0], hyper.k
    if labels not in LABEL_UPDATES:
        raise ValueError(f"unknown label update {labels!r}")
    if H == 1:
        state.c = np.zeros(n, dtype=np.int64)
    elif n:
        logp = _label_logits(state, labels == "marginal")
        logp -= logp.max(axis=1, keepdims=True)
        state.c = _categorical_draw(np.exp(logp), rng).astype(np.int64)
    if labels == "marginal":
        update_eta(state, hyper, rng)
    eta = state.eta
    counts = np.bincount(state.c, minlength=H)
    tail = np.concatenate((np.cumsum(counts[::-1])[::-1][1:], [0]))
    V = np.ones(H)
    if H > 1:
        V[:-1] = rng.beta(1.0 + counts[:-1], state.alpha + tail[:-1])
        V[:-1] = np.clip(V[:-1], BETA_CLAMP, 1.0 - BETA_CLAMP)
    state.V = V
    state.pi = stick_break(V)

    mean, kappa, nu, Psi = niw_posterior_batch(eta, state.c, H, hyper)
    Delta = sample_inverse_wishart_batch(nu, Psi, rng)
    Lmu = _batched_chol(Delta / kappa[:, None, None], "Delta / kappa")
    state.Delta = Delta
    state.mu = mean + (Lmu @ rng.standard_normal((H, k, 1)))[:, :, 0]
    rate = hyper.b_alpha - np.log1p(-V[:-1]).sum()
    state.alpha = float(rng.gamma(hyper.a_alpha + H - 1, 1.0 / rate))


def update_eta(state: GmcState, hyper: Hyperparams, rng: np.random.Generator) -> None:
    """Factors from their Gaussian full conditional, cluster by cluster."""
    Z, Lambda = state.Z, state.Lambda
    n, k = Z.shape[0], hyper.k
    sinv = 1.0 / state.sigma2
    LtSL = Lambda.T @ (Lambda * sinv[:, None])
    LtSz = (Z * sinv) @ Lambda
    eta = np.empty((n, k))
    for h in np.unique(state.c):
        rows = state.c == h
        Dinv = np.linalg.inv(state.Delta[h])
        L = _chol(Dinv + LtSL, f"factor precision (cluster {h})")
        b = LtSz[rows] + Dinv @ state.mu[h]
        mean = cho_solve((L, True), b.T).T
        noise = solve_triangular(L.T, rng.standard_normal((k, rows.sum())), lower=False).T
        eta[rows] = mean + noise
    state.eta = eta


def update_factors(state: GmcState, hyper: Hyperparams, rng: np.random.Generator,
                   draw_eta: bool = True) -> None:
    """Factors (unless already drawn with the labels), loadings, idiosyncratic
    variances and the shrinkage scales."""
    if draw_eta:
        update_eta(state, hyper, rng)
    Z, Lambda, eta = state.Z, state.Lambda, state.eta
    n, p_star = Z.shape
    k = hyper.k
    sinv = 1.0 / state.sigma2

    EtE = eta.T @ eta
    EtZ = eta.T @ Z
    for j in range(p_star):
        P = np.diag(state.phi[j] * state.tau) + EtE * sinv[j]
        L = _chol(P, f"loading precision (row {j})")
        mean = cho_solve((L, True), EtZ[:, j] * sinv[j])
        Lambda[j] = mean + solve_triangular(L.T, rng.standard_normal(k), lower=False)

    resid = Z - eta @ Lambda.T
    prec = rng.gamma(hyper.a_sigma + 0.5 * n, 1.0 / (hyper.b_sigma + 0.5 * (resid * resid).sum(axis=0)))
    state.sigma2 = np.maximum(1.0 / prec, SIGMA2_FLOOR)

    nu = hyper.nu_phi
    state.phi = rng.gamma(0.5 * (nu + 1.0), 1.0 / (0.5 * (nu + state.tau[None, :] * Lambda ** 2)))
    weighted = (state.phi * Lambda ** 2).sum(axis=0)
    d = state.delta_tau
    for h in range(k):
        tau_excl = np.cumprod(d)[h:] / d[h]
        shape = (hyper.a1 if h == 0 else hyper.a2) + 0.5 * p_star * (k - h)
        rate = 1.0 + 0.5 * (tau_excl * weighted[h:]).sum()
        d[h] = rng.gamma(shape, 1.0 / rate)
    state.delta_tau = d
    state.tau = np.cumprod(d)


def _rank_block(zj: np.ndarray, mj: np.ndarray, sd: float, col: _RankColumn, parity: int, rng) -> None:
    """Redraw every other tie group of one rank column given its neighbours.

    Conditioned on the odd groups the even ones are independent (and vice
    versa), so each half is a single vectorized truncated-normal draw.
    """
    z = zj[col.order]
    G = col.starts.size
    lo_g = np.concatenate(([-np.inf], np.maximum.reduceat(z, col.starts)[:-1]))
    hi_g = np.concatenate((np.minimum.reduceat(z, col.starts)[1:], [np.inf]))
    sizes = np.diff(np.append(col.starts, z.size))
    which = np.repeat(np.arange(G) % 2 == parity, sizes)
    rows = col.order[which]
    lo = np.repeat(lo_g, sizes)[which]
    hi = np.repeat(hi_g, sizes)[which]
    m = mj[rows]
    x = m + sd * standard_truncated_normal((lo - m) / sd, (hi - m) / sd, rng)
    # the affine map can round onto a bound
    zj[rows] = np.clip(x, np.nextafter(lo, np.inf), np.nextafter(hi, -np.inf))


def _categorical_draw(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One category index per row, proportional to nonnegative ``weights``."""
    cum = np.cumsum(weights, axis=1)
    u = rng.random(weights.shape[0]) * cum[:, -1]
    return np.minimum((cum < u[:, None]).sum(axis=1), weights.shape[1] - 1)


def update_latent(state: GmcState, plan: SamplerPlan, rng: np.random.Generator) -> None:
    """Resample Z under the rank and diagonal-orthant constraints."""
    Z = state.Z
    M = state.eta @ state.Lambda.T
    sd = np.sqrt(state.sigma2)
    for col in plan.rank:
        j = col.j
        if col.resample and col.order.size:
            for parity in (0, 1):
                _rank_block(Z[:, j], M[:, j], sd[j], col, parity, rng)
        if col.missing.size:
            Z[col.missing, j] = M[col.missing, j] + sd[j] * rng.standard_normal(col.missing.size)
    cat = plan.categorical_columns
    if not cat:
        return
    G = plan.gamma.copy()
    for grp in plan.binary:
        j = grp.cols[0]
        if grp.missing.size:
            G[grp.missing, j] = rng.random(grp.missing.size) < ndtr(M[grp.missing, j] / sd[j])
    for grp in plan.orthant:
        if grp.missing.size:
            cols = grp.cols
            level = _categorical_draw(orthant_probabilities(M[np.ix_(grp.missing, cols)], sd[cols]), rng)
            G[np.ix_(grp.missing, cols)] = np.arange(len(cols))[None, :] == level[:, None]
    pos = G[:, cat] == 1
    m, s = M[:, cat], sd[cat][None, :]
    a = np.where(pos, -m / s, -np.inf)
    b = np.where(pos, np.inf, -m / s)
    x = m + s * standard_truncated_normal(a, b, rng).reshape(pos.shape)
    tiny = np.nextafter(0.0, 1.0)
    Z[:, cat] = np.where(pos, np.maximum(x, tiny), np.minimum(x, -tiny))


BLOCKS = ("clusters", "factors", "latent")


def gibbs_sweep(state: GmcState, plan: SamplerPlan, hyper: Hyperparams, rng: np.random.Generator,
                timings: dict | None = None, labels: str = "conditional") -> GmcState:
    """One full sweep; mutates and returns ``state``."""
    t0 = time.perf_counter()
    update_clusters(state, hyper, rng, labels)
    t1 = time.perf_counter()
    update_factors(state, hyper, rng, draw_eta=labels != "marginal")
    t2 = time.perf_counter()
    update_latent(state, plan, rng)
    t3 = time.perf_counter()
    if timings is not None:
        for name, dt in zip(BLOCKS, (t1 - t0, t2 - t1, t3 - t2)):
            timings[name] = timings.get(name, 0.0) + dt
    return state


def prepare(data: MixedDataset, view: AugmentedView, hyper: Hyperparams | None = None) -> Hyperparams:
    hyper = hyper or default_hyperparams(view.p_star)
    hyper.check_dims(view.p_star)
    return hyper


def run_chain(data: MixedDataset, view: AugmentedView, config: ChainConfig, *,
              on_draw=None, timings: dict | None = None) -> list[Draw]:
    """Run the sampler and return the retained draws with their margin estimates.

    ``on_draw`` (optional) is called with each retained :class:`Draw` as soon
    as it is produced, e.g. to stream it to disk.
    """
    hyper = prepare(data, view, config.hyper)
    rng = np.random.default_rng(config.seed)
    plan = SamplerPlan.build(data, view, hyper.resample_threshold)
    skipped = [data.schema[c.var].name for c in plan.rank if not c.resample]
    if skipped:
        log.info("rank resampling disabled (> %d unique values) for %s", hyper.resample_threshold, skipped)
    state = initial_state(init_latent(data, view, rng, hyper.resample_threshold), hyper)
    keep = set(config.retained_iterations())
    draws: list[Draw] = []
    crowded = False
    for t in range(1, config.n_iter + 1):
        try:
            gibbs_sweep(state, plan, hyper, rng, timings, config.labels)
        except (NumericalError, LinAlgError, ValueError) as exc:
            raise NumericalError(f"iteration {t}: {exc}") from exc
        if t in keep:
            t0 = time.perf_counter()
            draw = Draw(t, state.copy(), estimate_margins(state, data, view, "margin_adjust", draw=t))
            if timings is not None:
                timings["margins"] = timings.get("margins", 0.0) + time.perf_counter() - t0
            if not crowded and state.occupied() > hyper.H / 2:
                crowded = True
                warnings.warn(f"more than H/2 = {hyper.H / 2:g} clusters occupied at iteration {t}; "
                              "consider a larger truncation level H", RuntimeWarning, stacklevel=2)
            draws.append(draw)
            if on_draw is not None:
                on_draw(draw)
    return draws


# ----------------------------------------------------------------------------
# draw export


def draw_to_json(draw: Draw) -> dict:
    return {"iteration": draw.iteration, "state": draw.state.to_json(),
            "margins": [draw.margins[v].to_json() for v in sorted(draw.margins)]}


def draw_from_json(obj: dict) -> Draw:
    margins = [MarginEstimate.from_json(m) for m in obj["margins"]]
    return Draw(int(obj["iteration"]), GmcState.from_json(obj["state"]), {m.var: m for m in margins})


def dump_draw(draw: Draw) -> str:
    """One JSON-Lines record; float formatting is repr-exact, so output is byte-deterministic."""
    return json.dumps(draw_to_json(draw), sort_keys=True, separators=(",", ":"), allow_nan=False)


def write_draws(draws, path) -> None:
    with open(path, "w") as fh:
        for d in draws:
            fh.write(dump_draw(d) + "\n")


def read_draws(path) -> list[Draw]:
    with open(path) as fh:
        return [draw_from_json(json.loads(line)) for line in fh if line.strip()]
