"""Simulation designs and the replicate evaluation harness.

Study 1 is a three-variable nonlinear design (normal, Poisson count, binary)
with missingness driven by |Y1|. Study 2 is a regression design on family
income, age and BMI with a correlated, BMI-driven missingness mechanism.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import ndtr, softmax

from .data import ColumnSpec, MixedDataset, SchemaError, expand_rpl
from .imputation import multiple_impute, ols, rubin_combine
from .model import ColumnMarginal, default_hyperparams
from .sampler import ChainConfig, Draw, run_chain

log = logging.getLogger(__name__)

# ----------------------------------------------------------------------------
# study 1

STUDY1_SCHEMA = [
    ColumnSpec("Y1", "continuous"),
    ColumnSpec("Y2", "count"),
    ColumnSpec("Y3", "categorical", ("0", "1")),
]


@dataclass(frozen=True)
class Study1Config:
    n: int = 2000
    beta: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 10:
            raise ValueError("study 1 needs n >= 10")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")


def study1_missing_prob(y1: np.ndarray, beta: float) -> np.ndarray:
    return ndtr(-0.5 + beta * np.abs(y1))


def gen_study1(cfg: Study1Config) -> tuple[MixedDataset, MixedDataset]:
    """(full, masked) datasets; Y1 is always observed."""
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n
    y1 = rng.standard_normal(n)
    y2 = rng.poisson(5.0 * np.abs(y1)).astype(float)
    sd = y2.std()
    y2s = (y2 - y2.mean()) / (sd if sd > 0 else 1.0)
    y3 = (rng.random(n) < ndtr(-0.5 + y2s)).astype(float)
    full = MixedDataset(STUDY1_SCHEMA, np.column_stack([y1, y2, y3]))
    p_miss = study1_missing_prob(y1, cfg.beta)
    mask = np.zeros((n, 3), dtype=bool)
    mask[:, 1:] = rng.random((n, 2)) < p_miss[:, None]
    return full, MixedDataset(STUDY1_SCHEMA, full.cells, mask)


def _ecdf_at(sample: np.ndarray, x: np.ndarray) -> np.ndarray:
    s = np.sort(sample)
    return np.searchsorted(s, x, side="right") / s.size


@dataclass
class Study1Report:
    n: int
    beta: float
    x: np.ndarray  # unique observed Y2 values
    true_ecdf: np.ndarray
    observed_ecdf: np.ndarray
    ma_mean: np.ndarray
    ma_lo: np.ndarray
    ma_hi: np.ndarray
    p3_draws: np.ndarray
    p3_observed: float
    p3_full: float

    @property
    def sup_ma(self) -> float:
        return float(np.abs(self.ma_mean - self.true_ecdf).max())

    @property
    def sup_observed(self) -> float:
        return float(np.abs(self.observed_ecdf - self.true_ecdf).max())

    @property
    def p3_mean(self) -> float:
        return float(self.p3_draws.mean())

    @property
    def p3_interval(self) -> tuple[float, float]:
        lo, hi = np.quantile(self.p3_draws, [0.025, 0.975])
        return float(lo), float(hi)

    def rows(self) -> list[dict]:
        """Plot-ready rows, one per observed support point."""
        return [{"n": self.n, "beta": self.beta, "x": float(x), "true_ecdf": float(t),
                 "observed_ecdf": float(o), "ma_mean": float(m), "ma_lo": float(lo), "ma_hi": float(hi)}
                for x, t, o, m, lo, hi in zip(self.x, self.true_ecdf, self.observed_ecdf,
                                              self.ma_mean, self.ma_lo, self.ma_hi)]


def study1_margin_report(full: MixedDataset, masked: MixedDataset, draws: Sequence[Draw],
                         beta: float = float("nan")) -> Study1Report:
    """Margin recovery for Y2 and the posterior of P(Y3 = 1) from one fitted chain."""
    if masked.n == 0 or full.n == 0:
        raise ValueError("study-1 report needs a non-empty dataset")
    if not draws:
        raise ValueError("study-1 report needs at least one retained draw")
    view = expand_rpl(masked)
    j2 = view.columns_of(1)[0]
    j3 = view.columns_of(2)[0]
    obs2 = ~masked.mask[:, 1]
    x = np.unique(masked.cells[obs2, 1])
    curves = np.array([d.margins[1].cdf(x) for d in draws])
    # binary coding: the positive orthant is level "1"
    p3 = np.array([1.0 - ColumnMarginal.from_state(d.state, j3).cdf(0.0) for d in draws])
    obs3 = ~masked.mask[:, 2]
    return Study1Report(
        n=masked.n, beta=beta, x=x,
        true_ecdf=_ecdf_at(full.cells[:, 1], x),
        observed_ecdf=_ecdf_at(masked.cells[obs2, 1], x),
        ma_mean=curves.mean(axis=0),
        ma_lo=np.quantile(curves, 0.025, axis=0), ma_hi=np.quantile(curves, 0.975, axis=0),
        p3_draws=p3, p3_observed=float(masked.cells[obs3, 2].mean()),
        p3_full=float(full.cells[:, 2].mean()),
    )


# ----------------------------------------------------------------------------
# study 2

FI_LEVELS = ("Low", "Middle", "High")
STUDY2_SCHEMA = [
    ColumnSpec("FI", "categorical", FI_LEVELS),
    ColumnSpec("Age", "count"),
    ColumnSpec("BMI", "continuous"),
    ColumnSpec("New", "continuous"),
]
TERMS = ("Intercept", "Middle", "High", "Age", "BMI", "Middle:BMI", "High:BMI")
BETA_TRUE = (1.0, 1.0, 2.0, 0.5, -2.0, 2.0, 4.0)
STUDY2_N = 2434
BMI_RANGE = (13.4, 81.2)


@dataclass(frozen=True)
class Study2Config:
    beta_true: tuple[float, ...] = BETA_TRUE
    snr: float = 1.0
    m: int = 10
    replicates: int = 20
    protected_rows: int = 300
    seed: int = 0
    base_csv: str | None = None
    n_synthetic: int = STUDY2_N

    def __post_init__(self):
        if not self.snr > 0:
            raise ValueError("SNR must be > 0")
        if self.m < 2:
            raise ValueError("m must be >= 2")
        if len(self.beta_true) != len(TERMS):
            raise ValueError(f"beta_true needs {len(TERMS)} entries")
        if self.replicates < 1 or self.protected_rows < 0:
            raise ValueError("replicates must be >= 1 and protected_rows >= 0")


@dataclass
class Study2Base:
    fi: np.ndarray  # level index 0..2
    age: np.ndarray
    bmi: np.ndarray
    synthetic: bool


def synthetic_base(n: int, rng: np.random.Generator, bmi_shift: float = BMI_RANGE[0]) -> Study2Base:
    """Stand-in covariates: uniform integer Age 18-80, right-skewed BMI with
    mean 28 and sd 7 (``bmi_shift`` plus a lognormal), and family income
    mildly tied to BMI."""
    age = rng.integers(18, 81, n).astype(float)
    lo, hi = BMI_RANGE
    m, s = 28.0 - bmi_shift, 7.0
    sdl = math.sqrt(math.log1p((s / m) ** 2))
    bmi = np.clip(bmi_shift + rng.lognormal(math.log(m) - 0.5 * sdl ** 2, sdl, n), lo, hi)
    b = (bmi - bmi.mean()) / bmi.std()
    logits = np.log([0.3, 0.4, 0.3])[None, :] + 0.2 * np.column_stack([b, np.zeros(n), -b])
    cum = np.cumsum(softmax(logits, axis=1), axis=1)
    fi = np.minimum((cum < rng.random(n)[:, None]).sum(axis=1), 2).astype(float)
    return Study2Base(fi, age, bmi, synthetic=True)


def load_base(path) -> Study2Base:
    """Read FI/Age/BMI from a CSV; incomplete rows are dropped."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"FI", "Age", "BMI"} - set(reader.fieldnames or ())
        if missing:
            raise SchemaError(f"{path}: base covariates lack columns {sorted(missing)}")
        fi, age, bmi = [], [], []
        for r, row in enumerate(reader, start=1):
            vals = row["FI"].strip(), row["Age"].strip(), row["BMI"].strip()
            if any(v in ("", "NA") for v in vals):
                continue
            if vals[0] not in FI_LEVELS:
                raise SchemaError(f"{path}: row {r}: FI level {vals[0]!r} not in {FI_LEVELS}")
            fi.append(FI_LEVELS.index(vals[0]))
            age.append(float(vals[1]))
            bmi.append(float(vals[2]))
    return Study2Base(np.array(fi, float), np.array(age), np.array(bmi), synthetic=False)


def _standardize(x: np.ndarray) -> np.ndarray:
    return (x - x.mean()) / x.std()


def study2_design(fi: np.ndarray, age: np.ndarray, bmi: np.ndarray) -> np.ndarray:
    """Design matrix in TERMS order; Age and BMI are standardized on the rows given."""
    a, b = _standardize(age), _standardize(bmi)
    mid, high = (fi == 1).astype(float), (fi == 2).astype(float)
    return np.column_stack([np.ones(fi.size), mid, high, a, b, mid * b, high * b])


def study2_fit(data: MixedDataset, rows=None):
    """OLS of New on the study-2 design over ``rows`` (default: all rows)."""
    c = data.cells if rows is None else data.cells[rows]
    return ols(study2_design(c[:, 0], c[:, 1], c[:, 2]), c[:, 3])


def study2_omega(n: int, n_vars: int, rng: np.random.Generator, mean: float = -0.2, rho: float = 0.3):
    """Equicorrelated unit-variance Gaussian shocks with the given mean."""
    g = rng.standard_normal((n, 1))
    e = rng.standard_normal((n, n_vars))
    return mean + math.sqrt(rho) * g + math.sqrt(1.0 - rho) * e


def gen_study2(cfg: Study2Config) -> list[tuple[MixedDataset, MixedDataset]]:
    """Replicate (full, masked) pairs sharing one set of base covariates."""
    root = np.random.SeedSequence(cfg.seed)
    base_seq, *rep_seqs = root.spawn(cfg.replicates + 1)
    base = load_base(cfg.base_csv) if cfg.base_csv else synthetic_base(cfg.n_synthetic, np.random.default_rng(base_seq))
    n = base.fi.size
    if cfg.protected_rows > n:
        raise ValueError("more protected rows than observations")
    X = study2_design(base.fi, base.age, base.bmi)
    mean = X @ np.asarray(cfg.beta_true)
    sigma = math.sqrt(mean.var() / cfg.snr)
    b = _standardize(base.bmi)
    out = []
    for seq in rep_seqs:
        rng = np.random.default_rng(seq)
        new = mean + sigma * rng.standard_normal(n)
        full = MixedDataset(STUDY2_SCHEMA, np.column_stack([base.fi, base.age, base.bmi, new]))
        omega = study2_omega(n, 3, rng)
        hit = rng.random((n, 3)) < ndtr(-0.7 + b[:, None] + omega)
        hit[rng.choice(n, cfg.protected_rows, replace=False)] = False
        mask = np.zeros((n, 4), dtype=bool)
        mask[:, [0, 1, 3]] = hit
        out.append((full, MixedDataset(STUDY2_SCHEMA, full.cells, mask)))
    return out


# ----------------------------------------------------------------------------
# benchmark harness

METHODS = ("gmc_ma", "gmc_ecdf", "complete_case")


@dataclass
class ReplicateResult:
    method: str
    replicate: int
    estimate: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    failed: str | None = None


@dataclass
class BenchmarkSettings:
    n_iter: int = 4000
    burn_in: int = 2000
    m: int = 10
    level: float = 0.99
    delta: float = 5.0
    H: int = 20
    seed: int = 0
    extra_hyper: dict = field(default_factory=dict)

    @property
    def thin(self) -> int:
        return max(1, (self.n_iter - self.burn_in) // self.m)


def _pooled_result(method: str, r: int, fits, level: float) -> ReplicateResult:
    est, lo, hi = [], [], []
    for t in range(len(TERMS)):
        pe = rubin_combine([f.coef[t] for f in fits], [f.se[t] ** 2 for f in fits], level)
        est.append(pe.point)
        lo.append(pe.interval[0])
        hi.append(pe.interval[1])
    return ReplicateResult(method, r, np.array(est), np.array(lo), np.array(hi))


def complete_case_result(masked: MixedDataset, r: int, level: float) -> ReplicateResult:
    from scipy import stats

    rows = masked.complete_rows()
    if rows.sum() <= len(TERMS):
        return ReplicateResult("complete_case", r, *(np.full(len(TERMS), np.nan),) * 3,
                               failed=f"only {int(rows.sum())} complete cases")
    fit = study2_fit(masked, rows)
    half = stats.t.ppf(0.5 * (1 + level), fit.df) * fit.se
    return ReplicateResult("complete_case", r, fit.coef, fit.coef - half, fit.coef + half)


def run_replicate(masked: MixedDataset, r: int, methods: Sequence[str], settings: BenchmarkSettings,
                  seed: int) -> list[ReplicateResult]:
    """All requested methods on one masked replicate; the GMC methods share one chain."""
    out = []
    if "complete_case" in methods:
        out.append(complete_case_result(masked, r, settings.level))
    gmc = [m for m in methods if m != "complete_case"]
    if gmc:
        view = expand_rpl(masked)
        hyper = default_hyperparams(view.p_star, H=settings.H, delta=settings.delta, **settings.extra_hyper)
        cfg = ChainConfig(settings.n_iter, settings.burn_in, settings.thin, seed, hyper)
        draws = run_chain(masked, view, cfg)[-settings.m:]
        for method in gmc:
            kind = "margin_adjust" if method == "gmc_ma" else "ecdf"
            fits = [study2_fit(cd.data) for cd in multiple_impute(draws, masked, view, kind)]
            out.append(_pooled_result(method, r, fits, settings.level))
    return out


@dataclass
class MetricRow:
    method: str
    term: str
    truth: float
    mean_estimate: float
    bias: float
    coverage: float
    width: float
    replicates: int
    failures: int


def summarize(results: Sequence[ReplicateResult], beta_true=BETA_TRUE) -> list[MetricRow]:
    """Per method and coefficient: bias of the mean estimate, interval coverage and width."""
    rows = []
    for method in sorted({r.method for r in results}, key=lambda m: METHODS.index(m) if m in METHODS else 99):
        ok = [r for r in results if r.method == method and r.failed is None]
        failures = sum(1 for r in results if r.method == method and r.failed is not None)
        if not ok:
            continue
        est = np.array([r.estimate for r in ok])
        lo = np.array([r.lo for r in ok])
        hi = np.array([r.hi for r in ok])
        truth = np.asarray(beta_true)
        cover = ((lo <= truth) & (truth <= hi)).mean(axis=0)
        for t, term in enumerate(TERMS):
            rows.append(MetricRow(method, term, float(truth[t]), float(est[:, t].mean()),
                                  float(est[:, t].mean() - truth[t]), float(cover[t]),
                                  float((hi[:, t] - lo[:, t]).mean()), len(ok), failures))
    return rows


def run_benchmark(replicates: Sequence[tuple[MixedDataset, MixedDataset]], methods: Sequence[str],
                  settings: BenchmarkSettings | None = None, beta_true=BETA_TRUE,
                  n_jobs: int = 1) -> tuple[list[MetricRow], list[ReplicateResult]]:
    """Evaluate methods over study-2 replicates; returns (metrics, per-replicate results).

    Each replicate's chain seed is spawned from ``settings.seed``; ``n_jobs > 1``
    runs replicates in worker processes with identical results.
    """
    settings = settings or BenchmarkSettings()
    bad = set(methods) - set(METHODS)
    if bad:
        raise ValueError(f"unknown methods {sorted(bad)}")
    seeds = [int(s.generate_state(1, np.uint64)[0]) for s in np.random.SeedSequence(settings.seed).spawn(len(replicates))]
    jobs = [(masked, r, tuple(methods), settings, seeds[r]) for r, (_, masked) in enumerate(replicates)]
    if n_jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(n_jobs) as ex:
            chunks = list(ex.map(_run_job, jobs))
    else:
        chunks = [_run_job(j) for j in jobs]
    results = [res for chunk in chunks for res in chunk]
    return summarize(results, beta_true), results


def _run_job(job):
    masked, r, methods, settings, seed = job
    log.info("replicate %d", r)
    return run_replicate(masked, r, methods, settings, seed)


METRIC_HEADER = ("method", "coefficient", "truth", "mean_estimate", "bias", "coverage", "width",
                 "replicates", "failures")


def write_metrics(rows: Sequence[MetricRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_HEADER)
        for r in rows:
            w.writerow([r.method, r.term, r.truth, repr(r.mean_estimate), repr(r.bias), repr(r.coverage),
                        repr(r.width), r.replicates, r.failures])


def write_study1_report(reports: Sequence[Study1Report], path) -> None:
    path = Path(path)
    keys = ("n", "beta", "x", "true_ecdf", "observed_ecdf", "ma_mean", "ma_lo", "ma_hi")
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for rep in reports:
            w.writerows(rep.rows())
