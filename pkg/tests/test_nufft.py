import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ballharm.grids import make_voxel_grid
from ballharm.nufft import (
    MAX_WIDTH,
    GriddedNufft,
    NufftPlan,
    NufftPrecisionError,
    direct_adjoint,
    direct_forward,
    es_fourier,
    kernel_floor,
    kernel_width,
    nufft_adjoint,
    nufft_forward,
    type3_direct,
)


def naive_forward(grid, f, xi):
    pts = grid.points()
    return np.exp(-1j * xi @ pts.T) @ f.ravel()


def random_volume(r, N):
    return r.uniform(-1, 1, (N, N, N)) + 1j * r.uniform(-1, 1, (N, N, N))


def random_targets(r, M, radius):
    return r.uniform(-radius, radius, (M, 3))


def test_kernel_width_rule():
    assert kernel_width(1e-4) == 6
    assert kernel_width(1e-12) == 14
    assert kernel_width(0.5) == 2
    assert kernel_width(kernel_floor()) == MAX_WIDTH


def test_too_tight_tolerance_raises():
    with pytest.raises(NufftPrecisionError):
        GriddedNufft(make_voxel_grid(8), 1e-16)


def test_es_fourier_against_dense_quadrature():
    w, beta, dx = 8, 2.3 * 8, 0.1
    half = w * dx / 2
    x = np.linspace(-half, half, 200001)
    psi = np.exp(beta * (np.sqrt(np.clip(1 - (x / half) ** 2, 0, None)) - 1))
    for k in (0, 3, 11):
        ref = np.trapezoid(psi * np.cos(k * x), x)
        assert abs(es_fourier(np.array([k]), w, beta, dx)[0] - ref) < 1e-9


def test_direct_backend_matches_naive(rng):
    g = make_voxel_grid(5)
    f = random_volume(rng, 5)
    xi = random_targets(rng, 30, 8.0)
    np.testing.assert_allclose(direct_forward(g, f, xi), naive_forward(g, f, xi), atol=1e-12)
    a = rng.normal(size=30) + 1j * rng.normal(size=30)
    ref = (np.exp(1j * g.points() @ xi.T) @ a).reshape(5, 5, 5)
    np.testing.assert_allclose(direct_adjoint(g, a, xi), ref, atol=1e-12)


def test_delta_at_origin_gives_ones(rng):
    g = make_voxel_grid(7)
    i0 = g.index_of(np.zeros(1))[0]
    f = np.zeros((7, 7, 7))
    f[i0, i0, i0] = 1.0
    assert np.allclose(g.axis[i0], 0.0)
    xi = random_targets(rng, 50, 10.0)
    out = nufft_forward(NufftPlan(g, xi, eps=1e-10), f)
    np.testing.assert_allclose(out, 1.0, atol=1e-10)


def test_zero_frequency(rng):
    g = make_voxel_grid(8)
    f = random_volume(rng, 8)
    out = nufft_forward(NufftPlan(g, np.zeros((4, 3)), eps=1e-12), f)
    np.testing.assert_allclose(out, f.sum(), atol=1e-12 * np.abs(f).sum())
    a = rng.normal(size=1) + 1j * rng.normal(size=1)
    back = nufft_adjoint(NufftPlan(g, np.zeros((1, 3)), eps=1e-12), a)
    np.testing.assert_allclose(back, a[0], atol=1e-12 * abs(a[0]))


def test_single_mode_adjoint(rng):
    g = make_voxel_grid(8)
    xi = random_targets(rng, 1, 10.0)
    out = nufft_adjoint(NufftPlan(g, xi, eps=1e-8), np.ones(1))
    ref = np.exp(1j * g.points() @ xi[0]).reshape(8, 8, 8)
    assert np.max(np.abs(out - ref)) <= 1e-8


@pytest.mark.parametrize("eps", [1e-4, 1e-8, 1e-12])
@pytest.mark.parametrize("N", [7, 8])
def test_error_contract_factor_one(eps, N):
    # 50 random instances per precision: max-error / (eps ||in||_1) <= 1
    g = make_voxel_grid(N)
    r = np.random.default_rng(int(-np.log10(eps)) * 100 + N)
    kern = GriddedNufft(g, eps)
    worst = 0.0
    for _ in range(50):
        f = random_volume(r, N)
        xi = random_targets(r, 200, 1.8 * N)
        out = kern.interp(kern.prepare(f), xi)
        worst = max(worst, np.max(np.abs(out - direct_forward(g, f, xi))) / np.abs(f).sum())
        a = r.normal(size=200) + 1j * r.normal(size=200)
        acc = kern.new_accumulator()
        kern.spread(acc, xi, a)
        back = kern.finish(acc)
        worst = max(worst, np.max(np.abs(back - direct_adjoint(g, a, xi))) / np.abs(a).sum())
    assert worst <= eps


@pytest.mark.parametrize("eps", [1e-4, 1e-8, 1e-12])
def test_adjoint_pair(eps, rng):
    g = make_voxel_grid(8)
    xi = random_targets(rng, 200, 14.0)
    p = NufftPlan(g, xi, eps=eps)
    f = random_volume(rng, 8)
    a = rng.normal(size=200) + 1j * rng.normal(size=200)
    lhs = np.vdot(a, nufft_forward(p, f))
    rhs = np.vdot(nufft_adjoint(p, a), f)
    tol = 2 * eps * np.abs(f).sum() * np.abs(a).sum()
    assert abs(lhs - rhs) <= tol


@settings(max_examples=15)
@given(st.integers(2, 12), st.integers(0, 2 ** 31))
def test_backend_equivalence(N, seed):
    r = np.random.default_rng(seed)
    g = make_voxel_grid(N)
    f = random_volume(r, N)
    xi = random_targets(r, 40, 1.8 * N)
    eps = 1e-9
    fast = nufft_forward(NufftPlan(g, xi, eps), f)
    slow = nufft_forward(NufftPlan(g, xi, backend="direct"), f)
    assert np.max(np.abs(fast - slow)) <= eps * np.abs(f).sum() + 1e-13


@settings(max_examples=10)
@given(st.integers(0, 2 ** 31), st.complex_numbers(max_magnitude=10, allow_nan=False,
                                                   allow_infinity=False))
def test_linearity(seed, c):
    r = np.random.default_rng(seed)
    g = make_voxel_grid(6)
    p = NufftPlan(g, random_targets(r, 25, 9.0), eps=1e-10)
    f1, f2 = random_volume(r, 6), random_volume(r, 6)
    lhs = nufft_forward(p, c * f1 + f2)
    rhs = c * nufft_forward(p, f1) + nufft_forward(p, f2)
    assert np.max(np.abs(lhs - rhs)) <= 1e-13 * np.max(np.abs(rhs)) * (1 + abs(c))


def test_ring_grouping_matches_flat(rng):
    g = make_voxel_grid(10)
    kern = GriddedNufft(g, 1e-10)
    # 6 rings of 9 points sharing a z coordinate
    z = rng.uniform(-15, 15, 6)
    phi = np.linspace(0, 2 * np.pi, 9, endpoint=False)
    xi = np.concatenate([np.stack([7 * np.cos(phi), 7 * np.sin(phi), np.full(9, zz)], 1) for zz in z])
    ptr = np.arange(0, 55, 9)
    fine = kern.prepare(random_volume(rng, 10))
    np.testing.assert_allclose(kern.interp(fine, xi, ptr), kern.interp(fine, xi), atol=1e-13)
    a = rng.normal(size=54) + 0j
    acc1, acc2 = kern.new_accumulator(), kern.new_accumulator()
    kern.spread(acc1, xi, a, ptr)
    kern.spread(acc2, xi, a)
    np.testing.assert_allclose(kern.finish(acc1), kern.finish(acc2), atol=1e-12)


def test_spread_is_deterministic(rng):
    g = make_voxel_grid(12)
    kern = GriddedNufft(g, 1e-8)
    xi = random_targets(rng, 500, 20.0)
    a = rng.normal(size=500) + 1j * rng.normal(size=500)
    outs = []
    for _ in range(2):
        acc = kern.new_accumulator()
        kern.spread(acc, xi, a)
        outs.append(kern.finish(acc))
    assert np.array_equal(outs[0], outs[1])


def test_type3_direct(rng):
    x = rng.uniform(-1, 1, (20, 3))
    c = rng.normal(size=20) + 0j
    s = rng.normal(size=(5, 3))
    ref = np.array([np.sum(c * np.exp(-1j * x @ sk)) for sk in s])
    np.testing.assert_allclose(type3_direct(x, c, s), ref, atol=1e-12)


def test_plan_validation():
    with pytest.raises(ValueError):
        NufftPlan(make_voxel_grid(4), np.zeros((2, 3)), backend="magic")
    p = NufftPlan(make_voxel_grid(4), np.zeros((2, 3)), eps=1e-6)
    with pytest.raises(ValueError):
        nufft_forward(p, np.zeros((3, 3, 3)))
    with pytest.raises(ValueError):
        nufft_adjoint(p, np.zeros(3))
