"""The warm-started simplex must agree with HiGHS on every direction it serves."""

import numpy as np
import pytest
from scipy.optimize import linprog

from smtube._support import IntervalPolytope, SupportEngine, support_pairs


def _random_poly(seed, m=120, n=6, width=0.4):
    rng = np.random.default_rng(seed)
    sig = np.cumsum(rng.normal(size=m + n))
    phi = np.lib.stride_tricks.sliding_window_view(sig, n)[:m].copy()
    phi += 0.05 * rng.normal(size=phi.shape)
    y = phi @ rng.normal(size=n) + rng.uniform(-0.1, 0.1, m)
    return IntervalPolytope(phi, y - width, y + width), rng


def _highs_support(poly, c):
    res = linprog(-c, A_ub=np.vstack([poly.phi, -poly.phi]),
                  b_ub=np.concatenate([poly.hi, -poly.lo]),
                  bounds=(None, None), method="highs")
    assert res.status == 0
    return -res.fun


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_warm_chain_matches_reference_solver(seed):
    poly, rng = _random_poly(seed)
    eng = SupportEngine(poly)
    for i in range(60):
        c = poly.phi[i] if i % 3 else rng.normal(size=poly.n)
        out = eng.support(c)
        assert out.status == "optimal"
        assert out.value == pytest.approx(_highs_support(poly, c), abs=1e-8, rel=1e-9)
        assert poly.margin(out.argmax) >= -1e-7


def test_unbounded_direction_detected():
    # one interval row in 2-D leaves an unconstrained direction
    poly = IntervalPolytope([[1.0, 0.0]], [-1.0], [1.0])
    eng = SupportEngine(poly)
    out = eng.support([0.0, 1.0])
    assert out.status == "unbounded"
    assert eng.support([1.0, 0.0]).value == pytest.approx(1.0, abs=1e-12)


def test_support_pairs_order_and_values():
    poly, _ = _random_poly(9, m=80, n=5)
    upper, lower = support_pairs(poly, poly.phi)
    for i in range(0, 80, 13):
        assert upper[i] == pytest.approx(_highs_support(poly, poly.phi[i]), abs=1e-8)
        assert lower[i] == pytest.approx(-_highs_support(poly, -poly.phi[i]), abs=1e-8)
    assert np.all(upper >= lower - 1e-10)


def test_equality_like_rows():
    # pinning rows with lo == hi force a unique point
    poly = IntervalPolytope(np.eye(3), np.array([1.0, 2.0, -0.5]),
                            np.array([1.0, 2.0, -0.5]))
    eng = SupportEngine(poly)
    out = eng.support(np.array([1.0, 1.0, 1.0]))
    assert out.value == pytest.approx(2.5, abs=1e-10)
