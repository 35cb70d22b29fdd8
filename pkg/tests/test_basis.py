import numpy as np
import pytest
import scipy.special as sp
from scipy.optimize import brentq
from hypothesis import given, settings, strategies as st

from ballharm.basis import (
    _m_rank,
    bandlimit_default,
    bandlimit_max,
    build_index,
    weyl_estimate,
)


def brute_force_roots(lam):
    """All (ell, k, root) with root <= lam, via scipy sign scans + brentq."""
    out = []
    for l in range(int(np.ceil(lam)) + 1):
        x = np.linspace(1e-6, lam + 1.0, int(40 * (lam + 1)))
        y = sp.spherical_jn(l, x)
        k = 0
        for i in np.nonzero(np.sign(y[:-1]) * np.sign(y[1:]) < 0)[0]:
            r = brentq(lambda t: sp.spherical_jn(l, t), x[i], x[i + 1], xtol=1e-15)
            if r < 1e-3:
                continue
            k += 1
            if r <= lam:
                out.append((l, k, r))
    return out


def test_bandlimit_examples():
    assert bandlimit_max(32) == pytest.approx(62.365, abs=1e-3)
    assert bandlimit_max(2) == pytest.approx(6 ** (1 / 3) * np.pi ** (2 / 3))
    assert bandlimit_max(2) == pytest.approx(3.898, abs=1e-3)
    assert bandlimit_max(100) / 100 == pytest.approx(1.949, abs=1e-3)
    assert bandlimit_default(32) == pytest.approx(16 * np.pi)
    assert bandlimit_default(100) == pytest.approx(157.08, abs=0.01)


def test_default_below_max():
    for N in range(2, 400):
        assert bandlimit_default(N) < bandlimit_max(N)


def test_small_index_examples():
    idx = build_index(np.pi + 0.1)
    assert idx.n == 1
    assert (idx.k[0], idx.ell[0], idx.m[0]) == (1, 0, 0)
    idx = build_index(4.6)
    assert idx.n == 4
    assert list(zip(idx.k, idx.ell, idx.m)) == [(1, 0, 0), (1, 1, 0), (1, 1, -1), (1, 1, 1)]


def test_empty_index_warns():
    with pytest.warns(RuntimeWarning):
        idx = build_index(3.0)
    assert idx.n == 0 and idx.L == -1 and idx.K == 0
    assert idx.warning


@pytest.mark.parametrize("lam,expected,boundary_ell", [(25.10, 1007, 12), (50.21, 8253, 2)])
def test_reference_counts_within_boundary_slack(lam, expected, boundary_ell):
    # each reference bandlimit has one root within 5e-3; its multiplicity is the slack
    idx = build_index(lam)
    assert abs(idx.n - expected) <= 2 * boundary_ell + 1


def test_exact_counts_frozen():
    # exact enumeration (checked against brute force below and mpmath roots)
    assert build_index(25.10).n == 983
    assert build_index(50.21).n == 8254


@settings(max_examples=12)
@given(st.floats(np.pi, 40.0))
def test_count_matches_brute_force(lam):
    roots = brute_force_roots(lam)
    # skip draws with a root numerically on the boundary
    if any(abs(r - lam) < 1e-9 for _, _, r in roots):
        return
    idx = build_index(lam)
    assert idx.n == sum(2 * l + 1 for l, _, _ in roots)


def test_brute_force_large_lambda():
    lam = 97.3
    roots = brute_force_roots(lam)
    assert build_index(lam).n == sum(2 * l + 1 for l, _, _ in roots)


@given(st.floats(np.pi, 60.0))
def test_ordering_is_strict_total(lam):
    idx = build_index(lam)
    keys = list(zip(idx.lam, idx.ell, idx.k, _m_rank(idx.m)))
    assert all(a < b for a, b in zip(keys, keys[1:]))
    assert np.all(idx.lam <= lam)
    assert np.all(np.abs(idx.m) <= idx.ell)
    if idx.n:
        assert idx.L <= lam and idx.K <= lam


def test_m_order_within_block():
    idx = build_index(20.0)
    sel = (idx.ell == 4) & (idx.k == 2)
    assert list(idx.m[sel]) == [0, -1, 1, -2, 2, -3, 3, -4, 4]


def test_caps():
    full = build_index(30.0)
    capped = build_index(30.0, caps=(5, 3))
    assert np.all(capped.ell <= 5) and np.all(capped.k <= 3)
    cap_set = set(zip(capped.k, capped.ell, capped.m))
    full_set = set(zip(full.k, full.ell, full.m))
    assert cap_set <= full_set
    assert cap_set == {t for t in full_set if t[1] <= 5 and t[0] <= 3}


def test_weyl_examples():
    assert weyl_estimate(25.10) == pytest.approx(961, rel=0.01)
    assert weyl_estimate(50.21) == pytest.approx(8324, rel=0.01)
    assert weyl_estimate(4.0) < build_index(4.0).n + 10


@pytest.mark.parametrize("lam", [25.0, 40.0, 70.0])
def test_weyl_agreement(lam):
    assert abs(build_index(lam).n / weyl_estimate(lam) - 1) <= 0.05


def test_position_and_roots_of_degree():
    idx = build_index(15.0)
    for i, (k, l, m, lam) in enumerate(idx.entries()):
        assert idx.position(k, l, m) == i
    r = idx.roots_of_degree(1)
    assert np.all(np.diff(r) > 0)
    assert r[0] == pytest.approx(4.4934094579, abs=1e-9)


def test_arrays_read_only():
    idx = build_index(10.0)
    with pytest.raises(ValueError):
        idx.k[0] = 5
