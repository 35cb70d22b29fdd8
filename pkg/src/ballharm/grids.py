"""Voxel, spherical and radial grids and the node-count selectors."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

_E = math.e


@dataclass(frozen=True)
class VoxelGrid:
    """Cubic grid of N^3 points ``x_j = h j - 1`` with ``h = 1/floor((N+1)/2)``.

    Volumes are arrays of shape ``(N, N, N)`` indexed ``f[j1, j2, j3]``, with
    ``j1`` the x coordinate. Flattening in C order gives the lexicographic
    ordering used throughout.
    """

    N: int

    def __post_init__(self):
        if int(self.N) < 2:
            raise ValueError("grid size must be at least 2")

    @property
    def h(self) -> float:
        return 1.0 / ((self.N + 1) // 2)

    @property
    def V(self) -> int:
        return self.N ** 3

    @property
    def center(self) -> int:
        """Index shift used to centre the modes, ``N // 2``."""
        return self.N // 2

    @property
    def offset(self) -> float:
        """Coordinate of the centre index, ``h * (N // 2) - 1``."""
        return self.h * self.center - 1.0

    @cached_property
    def axis(self) -> np.ndarray:
        return self.h * np.arange(self.N) - 1.0

    def points(self) -> np.ndarray:
        """All grid points, shape ``(V, 3)`` in lexicographic order."""
        a = self.axis
        g = np.stack(np.meshgrid(a, a, a, indexing="ij"), axis=-1)
        return g.reshape(-1, 3)

    def index_of(self, x) -> np.ndarray:
        """Integer grid index of (grid) points ``x``."""
        return np.rint((np.asarray(x) + 1.0) / self.h).astype(np.int64)

    @cached_property
    def radius(self) -> np.ndarray:
        a = self.axis
        return np.sqrt(a[:, None, None] ** 2 + a[None, :, None] ** 2 + a[None, None, :] ** 2)

    @cached_property
    def inside(self) -> np.ndarray:
        """Boolean mask of voxels strictly inside the unit ball."""
        return self.radius < 1.0


@dataclass(frozen=True)
class SphereGrid:
    """Tensor grid on the sphere with ``S + 1`` polar and ``S`` azimuthal nodes.

    ``theta_s = pi s / S`` and ``phi_t = 2 pi t / S``. The weights integrate
    products of two spherical harmonics of degree at most ``S/2`` exactly,
    except for the azimuthal alias ``m = -m' = S/2``.
    """

    S: int

    def __post_init__(self):
        if int(self.S) < 2:
            raise ValueError("S must be at least 2")

    @cached_property
    def theta(self) -> np.ndarray:
        return np.pi * np.arange(self.S + 1) / self.S

    @cached_property
    def phi(self) -> np.ndarray:
        return 2 * np.pi * np.arange(self.S) / self.S

    @cached_property
    def weights(self) -> np.ndarray:
        """Weights ``w_s`` of length ``S + 1`` (one per polar node)."""
        S = self.S
        s = np.arange(S + 1)
        u = np.arange(S // 2 + 1)
        eps_s = np.ones(S + 1)
        eps_s[[0, S]] = 0.5
        eps_u = np.ones(u.size)
        eps_u[0] = 0.5
        if S % 2 == 0:
            # halving the Nyquist cosine term makes the rule exact for
            # polynomials of degree S in cos(theta)
            eps_u[-1] = 0.5
        coef = 2 * eps_u / (1.0 - 4.0 * u ** 2)
        series = np.cos(2 * np.pi * np.outer(s, u) / S) @ coef
        return 4 * np.pi * eps_s / S ** 2 * series

    def directions(self) -> np.ndarray:
        """Unit vectors ``gamma_{s,t}``, shape ``(S + 1, S, 3)``."""
        st = np.sin(self.theta)
        # exact zeros at the poles
        st[[0, -1]] = 0.0
        ct = np.cos(self.theta)
        cp, sp = np.cos(self.phi), np.sin(self.phi)
        return np.stack(
            [st[:, None] * cp[None, :], st[:, None] * sp[None, :],
             np.broadcast_to(ct[:, None], (self.S + 1, self.S))], axis=-1)


@dataclass(frozen=True)
class RadialNodes:
    """Chebyshev nodes of the first kind mapped to ``[lam_1, lam_n]``.

    ``rho_q = (lam_n - lam_1)/2 cos((2q+1) pi / (2Q)) + (lam_1 + lam_n)/2``;
    the nodes decrease with q.
    """

    Q: int
    lam_1: float
    lam_n: float

    def __post_init__(self):
        if int(self.Q) < 1:
            raise ValueError("Q must be positive")
        if self.lam_n < self.lam_1:
            raise ValueError("need lam_1 <= lam_n")

    @cached_property
    def nodes(self) -> np.ndarray:
        q = np.arange(self.Q)
        half = 0.5 * (self.lam_n - self.lam_1)
        mid = 0.5 * (self.lam_1 + self.lam_n)
        return half * np.cos((2 * q + 1) * np.pi / (2 * self.Q)) + mid


def make_voxel_grid(N: int) -> VoxelGrid:
    """Voxel grid with N points per axis (``N >= 2``)."""
    return VoxelGrid(int(N))


def make_sphere_grid(S: int) -> SphereGrid:
    """Sphere grid with ``S + 1`` polar and ``S`` azimuthal nodes (``S >= 2``)."""
    return SphereGrid(int(S))


def make_radial_nodes(Q: int, lambda_1: float, lambda_n: float) -> RadialNodes:
    """Q Chebyshev nodes of the first kind on ``[lambda_1, lambda_n]``."""
    return RadialNodes(int(Q), float(lambda_1), float(lambda_n))


def _cbrt_int(V: int) -> float:
    n = round(V ** (1.0 / 3.0))
    for c in (n - 1, n, n + 1):
        if c ** 3 == V:
            return float(c)
    return V ** (1.0 / 3.0)


def select_Q(V: int, eps: float) -> int:
    """Radial node count ``ceil(max(5.3 V^(1/3), log2(1/eps)))``."""
    return int(math.ceil(max(5.3 * _cbrt_int(V), math.log2(1.0 / eps))))


def select_S(V: int, eps: float) -> int:
    """Spherical node count
    ``ceil(max(2 e 6^(1/3) pi^(2/3) floor((V^(1/3)+1)/2), 4 log2(27.6/eps)))``."""
    half = math.floor((_cbrt_int(V) + 1) / 2)
    a = 2 * _E * 6 ** (1 / 3) * math.pi ** (2 / 3) * half
    return int(math.ceil(max(a, 4 * math.log2(27.6 / eps))))


def select_Q_optimized(V: int, eps: float) -> int:
    """Smallest Q with ``a^Q / (sqrt(4 pi) Q!) <= eps`` where
    ``a = (sqrt(3) pi / 16)^(2/3) (V^(1/3) + 1)``.

    The test is done in log space.
    """
    a = (math.sqrt(3) * math.pi / 16) ** (2 / 3) * (_cbrt_int(V) + 1)
    target = math.log(eps)
    base = -0.5 * math.log(4 * math.pi)
    Q = 1
    while base + Q * math.log(a) - math.lgamma(Q + 1) > target:
        Q += 1
    return Q


def _sphere_tail_log(S: int, lam_n: float, ell: int) -> float:
    p = S // 2 + 1
    r = _E * lam_n / (2 * p + 3)
    if r >= 1.0:
        return math.inf
    # closed form of sum_{l' >= p} r^(l' - 3/2)
    log_sum = (p - 1.5) * math.log(r) - math.log1p(-r)
    return (math.log(28 / 27) + 0.5 * math.log(2 * ell + 1)
            + 1.5 * math.log(_E * lam_n) + log_sum)


def select_S_optimized(lam_n: float, eps: float) -> int:
    """Smallest S whose spherical quadrature tail bound is at most eps.

    Uses the degree ``ell = floor(lam_n)``, an upper bound on every degree in
    an index with largest root ``lam_n``.
    """
    ell = int(math.floor(lam_n))
    target = math.log(eps)
    S = max(2, 2 * int(math.floor(_E * lam_n / 2)) - 4)
    while _sphere_tail_log(S, lam_n, ell) > target:
        S += 1
    # step back in case the starting guess overshot
    while S > 2 and _sphere_tail_log(S - 1, lam_n, ell) <= target:
        S -= 1
    return S
