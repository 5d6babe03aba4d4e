import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from gmcopula.data import ColumnSpec, MixedDataset, expand_rpl
from gmcopula.margins import (DegenerateMarginError, MarginEstimate, ecdf, estimate_margins, margin_adjust,
                              margin_knot_latents, support_anchors)
from gmcopula.sampler import ChainConfig, run_chain
from gmcopula.model import default_hyperparams

from support import identity_state


def _one_col(y, kind="continuous", **kw):
    y = np.asarray(y, dtype=float)
    return MixedDataset([ColumnSpec("y", kind, **kw)], y[:, None])


def test_knot_latents_example():
    d = _one_col([1, 2, 2, 5])
    Z = np.array([[-1.2], [0.1], [0.3], [2.0]])
    xs, zn = margin_knot_latents(0, Z, d)
    assert xs.tolist() == [1, 2, 5]
    assert zn.tolist() == [-1.2, 0.3, 2.0]


def test_knot_at_minimum_uses_minimum_set():
    d = _one_col([3, 3, 7])
    Z = np.array([[0.4], [-0.2], [1.0]])
    xs, zn = margin_knot_latents(0, Z, d)
    assert zn[0] == 0.4


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 6), st.floats(-5, 5), st.booleans()), min_size=1, max_size=15))
def test_knot_latents_match_set_definition(cells):
    y = np.array([c[0] for c in cells], dtype=float)
    z = np.array([c[1] for c in cells])
    miss = np.array([c[2] for c in cells])
    if miss.all():
        miss[0] = False
    d = MixedDataset([ColumnSpec("y", "count")], y[:, None], miss[:, None])
    xs, zn = margin_knot_latents(0, z[:, None], d)
    yo, zo = y[~miss], z[~miss]
    for x, got in zip(xs, zn):
        qualifying = set(zo[yo <= x]) | set(zo[yo == yo.min()])
        assert got == max(qualifying)
    assert (np.diff(zn) >= 0).all()


def test_no_observed_values():
    d = MixedDataset([ColumnSpec("y", "continuous")], np.array([[np.nan], [np.nan]]))
    with pytest.raises(DegenerateMarginError):
        margin_knot_latents(0, np.zeros((2, 1)), d)


def test_ecdf_n_plus_one():
    est = ecdf(0, _one_col([1, 2, 3]))
    assert est.knots_u.tolist() == [0.25, 0.5, 0.75]
    assert est.cdf(np.array([1.0, 2.0, 3.0])).tolist() == [0.25, 0.5, 0.75]


def test_margin_adjust_median_knot():
    d = _one_col([1.0, 2.0, 3.0])
    s = identity_state(3, 1)
    s.sigma2[:] = 1.0
    s.Lambda[:] = 0.0
    s.Z[:, 0] = [-1.0, 0.0, 1.0]
    est = margin_adjust(0, s, d, expand_rpl(d))
    assert est.knots_u[1] == 0.5
    assert est.knots_u[2] == pytest.approx(stats.norm.cdf(1.0), abs=1e-15)


@st.composite
def knot_sets(draw):
    raw = sorted(set(draw(st.lists(st.floats(-100, 100), min_size=1, max_size=12))))
    # knots closer than double resolution at this scale never arise from data
    xs = [x for i, x in enumerate(raw) if i == 0 or x - raw[i - 1] > 1e-12]
    us = sorted(draw(st.lists(st.floats(1e-6, 1.0), min_size=len(xs), max_size=len(xs))))
    return np.array(xs), np.array(us)


@settings(max_examples=150, deadline=None)
@given(knot_sets())
def test_interpolant_monotone_and_exact(ks):
    xs, us = ks
    span = max(xs[-1] - xs[0], 1.0)
    est = MarginEstimate("y", 0, "ecdf", xs, us, xs[0] - 0.1 * span, xs[-1] + 0.1 * span)
    assert np.array_equal(est.cdf(xs), us)
    grid = np.linspace(est.lo - 1, est.hi + 1, 4001)
    f = est.cdf(grid)
    assert (np.diff(f) >= -1e-15).all()
    assert est.cdf(est.lo) == 0.0 and est.cdf(est.hi) == 1.0


@settings(max_examples=100, deadline=None)
@given(knot_sets(), st.floats(1e-6, 1 - 1e-6))
def test_inverse_round_trip(ks, u):
    xs, us = ks
    span = max(xs[-1] - xs[0], 1.0)
    est = MarginEstimate("y", 0, "ecdf", xs, us, xs[0] - 0.1 * span, xs[-1] + 0.1 * span)
    x = est.continuous_inverse(u)
    assert est.cdf(x) >= u - 1e-8
    assert abs(est.cdf(x) - u) <= 1e-8 or np.isclose(x, est._x).any()
    assert est.lo <= x <= est.hi


def test_inverse_below_first_knot():
    est = ecdf(0, _one_col([2.0, 4.0, 6.0]))
    x = est.inverse(0.01)
    assert est.lo < x <= 2.0


def test_count_rounds_up():
    est = MarginEstimate("c", 0, "ecdf", np.array([4.0, 5.0]), np.array([0.4, 0.8]), -1.0, 6.0, "integer", (0.0, None))
    u = float(est.cdf(4.3))
    assert est.continuous_inverse(u) == pytest.approx(4.3, abs=1e-9)
    assert est.inverse(u) == 5.0
    assert est.inverse(0.4) == 4.0
    x = est.inverse(np.linspace(0.01, 0.99, 99))
    assert (x == np.round(x)).all() and (x >= 0).all()


def test_support_anchors():
    lo, hi, grid, clip = support_anchors(ColumnSpec("c", "count"), np.array([2.0, 12.0]))
    assert (lo, hi, grid) == (0.0, 13.0, "integer")
    lo, hi, _, _ = support_anchors(ColumnSpec("x", "continuous"), np.array([0.0, 10.0]))
    assert (lo, hi) == (-1.0, 11.0)
    lo, hi, _, clip = support_anchors(ColumnSpec("x", "continuous", support_lo=-5.0, support_hi=50.0),
                                      np.array([0.0, 10.0]))
    assert (lo, hi, clip) == (-5.0, 50.0, (-5.0, 50.0))


def test_json_round_trip_is_exact():
    est = ecdf(0, _one_col([0.1, 0.7, 2.9, 3.3]), draw=4)
    back = MarginEstimate.from_json(est.to_json())
    grid = np.linspace(-1, 5, 101)
    assert np.array_equal(back.cdf(grid), est.cdf(grid))
    assert back.draw == 4


def test_complete_data_recovers_known_margin():
    # Gaussian copula with a gamma(3) margin and a Poisson(3) count margin, no missingness
    rng = np.random.default_rng(8)
    n = 2000
    g = rng.multivariate_normal([0, 0], [[1, 0.6], [0.6, 1]], n)
    x = stats.gamma.ppf(stats.norm.cdf(g[:, 0]), 3.0)
    c = stats.poisson.ppf(stats.norm.cdf(g[:, 1]), 3.0)
    d = MixedDataset([ColumnSpec("x", "continuous", support_lo=0.0), ColumnSpec("c", "count")],
                     np.column_stack([x, c]))
    view = expand_rpl(d)
    draws = run_chain(d, view, ChainConfig(400, 200, 20, 1, default_hyperparams(2, H=10)))
    pts = np.unique(x)
    fbar = np.mean([dr.margins[0].cdf(pts) for dr in draws], axis=0)
    assert np.abs(fbar - stats.gamma.cdf(pts, 3.0)).max() <= 0.03
    cpts = np.unique(c)
    cbar = np.mean([dr.margins[1].cdf(cpts) for dr in draws], axis=0)
    assert np.abs(cbar - stats.poisson.cdf(cpts, 3.0)).max() <= 0.03
    # monotone over a dense grid at every draw
    grid = np.linspace(-1, x.max() + 1, 5000)
    assert all((np.diff(dr.margins[0].cdf(grid)) >= -1e-15).all() for dr in draws)


def test_estimate_margins_kinds():
    d = _one_col([1.0, 2.0, 3.0])
    s = identity_state(3, 1)
    s.Z[:, 0] = [-1.0, 0.0, 1.0]
    view = expand_rpl(d)
    assert estimate_margins(s, d, view, "ecdf")[0].kind == "ecdf"
    assert estimate_margins(s, d, view)[0].kind == "margin_adjust"
    with pytest.raises(ValueError):
        estimate_margins(s, d, view, "kde")
