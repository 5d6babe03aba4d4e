"""Shared builders and exhaustive constraint checks for the test suite."""
from __future__ import annotations

import numpy as np

from gmcopula.data import ColumnSpec, MixedDataset, expand_rpl
from gmcopula.model import GmcState, stick_break

MIXED_SCHEMA = [
    ColumnSpec("x", "continuous"),
    ColumnSpec("cnt", "count"),
    ColumnSpec("ord", "ordinal", ("lo", "mid", "hi", "top")),
    ColumnSpec("cat", "categorical", ("A", "B", "C")),
]


def mixed_dataset(n: int, rng: np.random.Generator, miss_rate: float = 0.2) -> MixedDataset:
    """Continuous, count, ordinal and 3-level categorical columns that depend on
    one another, with MAR missingness driven by the always-observed ``x``."""
    x = rng.standard_normal(n)
    cnt = rng.poisson(np.exp(0.5 + 0.5 * x)).astype(float)
    ord_ = np.clip(np.round(1.5 + x + 0.7 * rng.standard_normal(n)), 0, 3)
    logits = np.column_stack([x, np.zeros(n), -x]) + rng.gumbel(size=(n, 3))
    cat = logits.argmax(axis=1).astype(float)
    cells = np.column_stack([x, cnt, ord_, cat])
    mask = np.zeros_like(cells, dtype=bool)
    # probability rises with |x| and averages roughly ``miss_rate``
    p = np.clip(miss_rate * (0.5 + np.abs(x)) / 1.3, 0, 0.9)
    mask[:, 1:] = rng.random((n, 3)) < p[:, None]
    return MixedDataset(MIXED_SCHEMA, cells, mask)


def rank_violations(Z: np.ndarray, data: MixedDataset, view) -> int:
    """Count observed pairs with y_i < y_k but z_i >= z_k, over every rank column."""
    bad = 0
    for j, col in enumerate(view.col_map):
        if col.kind != "rank":
            continue
        obs = ~data.mask[:, col.var]
        y, z = data.cells[obs, col.var], Z[obs, j]
        less = y[:, None] < y[None, :]
        bad += int((less & ~(z[:, None] < z[None, :])).sum())
    return bad


def orthant_violations(Z: np.ndarray, data: MixedDataset, view) -> int:
    """Count observed categorical cells whose latent signs disagree with the level."""
    bad = 0
    for var, cols in view.variable_groups().items():
        if view.col_map[cols[0]].kind == "rank":
            continue
        obs = ~data.mask[:, var]
        level = data.cells[obs, var].astype(int)
        z = Z[np.ix_(obs, cols)]
        if len(cols) == 1:
            bad += int(((z[:, 0] > 0) != (level == 1)).sum())
        else:
            want = np.arange(len(cols))[None, :] == level[:, None]
            bad += int(((z > 0) != want).any(axis=1).sum())
    return bad


def random_state(rng: np.random.Generator, n: int, p_star: int, k: int, H: int) -> GmcState:
    """An arbitrary valid state, for oracles on the marginal and predictive maps."""
    V = np.append(rng.uniform(0.2, 0.8, H - 1), 1.0)
    A = rng.standard_normal((H, k, k))
    Delta = A @ np.swapaxes(A, 1, 2) + 0.5 * np.eye(k)
    return GmcState(
        Lambda=rng.standard_normal((p_star, k)), sigma2=rng.uniform(0.2, 1.0, p_star), V=V,
        pi=stick_break(V), mu=rng.standard_normal((H, k)), Delta=Delta,
        c=rng.integers(0, H, n), eta=rng.standard_normal((n, k)), Z=rng.standard_normal((n, p_star)),
        alpha=1.0, phi=np.ones((p_star, k)), delta_tau=np.ones(k), tau=np.ones(k),
    )


def identity_state(n: int, p_star: int, k: int | None = None) -> GmcState:
    """One component, Lambda = [I 0], unit factor covariance and small noise."""
    k = p_star if k is None else k
    Lambda = np.zeros((p_star, k))
    Lambda[np.arange(min(p_star, k)), np.arange(min(p_star, k))] = 1.0
    return GmcState(
        Lambda=Lambda, sigma2=np.full(p_star, 1e-6), V=np.ones(1), pi=np.ones(1),
        mu=np.zeros((1, k)), Delta=np.eye(k)[None], c=np.zeros(n, dtype=np.int64),
        eta=np.zeros((n, k)), Z=np.zeros((n, p_star)), alpha=1.0,
        phi=np.ones((p_star, k)), delta_tau=np.ones(k), tau=np.ones(k),
    )


def view_of(data: MixedDataset):
    return expand_rpl(data)


# acceptance verdict lines, printed again in the terminal summary
VERDICTS: list[str] = []


def verdict(number: int, checks: dict, detail: str = "", fail_now: bool = True) -> bool:
    """Record and print one PASS/FAIL line; unless ``fail_now`` is off, fail the
    test if any check failed."""
    failed = [name for name, ok in checks.items() if not ok]
    line = f"CRITERION {number}: {'FAIL' if failed else 'PASS'}  {detail}".rstrip()
    if failed:
        line += f"  [failed: {', '.join(failed)}]"
    VERDICTS.append(line)
    print(line)
    if fail_now:
        assert not failed, line
    return not failed
