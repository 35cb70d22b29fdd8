"""Dense and fast ball-harmonic transforms.

``B`` maps coefficients to voxel values, ``(B alpha)_j = sum_i alpha_i
psi_i(x_j) h^{3/2}``, and ``B*`` is its adjoint. The fast versions replace the
dense sums by a NUFFT onto spherical shells of frequencies, a spherical
harmonic transform on every shell and Chebyshev interpolation in the radial
frequency. All three stages are linear, so the fast synthesis is the exact
adjoint of the fast analysis up to the NUFFT tolerance.
"""
from __future__ import annotations

import math
import time
import warnings
from contextlib import contextmanager
from dataclasses import asdict, dataclass

import numpy as np

from .basis import BasisIndex, bandlimit_default, bandlimit_max, build_index
from .cheb_interp import interp_matrix
from .grids import (
    RadialNodes,
    SphereGrid,
    VoxelGrid,
    select_Q,
    select_Q_optimized,
    select_S,
    select_S_optimized,
)
from .nufft import GriddedNufft, kernel_floor, kernel_width, MAX_WIDTH
from .sht import ShtPlan, sht_analysis, sht_synthesis
from .special_fn import cart_to_sph, legendre_order, sph_bessel_j

_Q4 = 1.5 ** 0.25
_PI = math.pi


class PlanHypothesisError(ValueError):
    """Plan parameters violate an assumption of the accuracy guarantee."""


# ---------------------------------------------------------------------------
# precision budget
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ParamBudget:
    """Split of the user tolerance over the pipeline stages.

    Attributes
    ----------
    eps : float
        User tolerance.
    direction : str
        ``"analysis"`` (fast B*) or ``"synthesis"`` (fast B).
    eps_dis, eps_nuf, eps_fsh, eps_in : float
        Discretization, NUFFT, spherical transform and interpolation budgets.
    eps_nuf_used : float
        NUFFT tolerance actually requested, which differs from ``eps_nuf``
        only when the latter is below the widest kernel's reach.
    clamped : bool
    """

    eps: float
    direction: str
    eps_dis: float
    eps_nuf: float
    eps_fsh: float
    eps_in: float
    eps_nuf_used: float
    clamped: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def eps_discretization(eps: float, V: int) -> float:
    """Budget for the radial and spherical discretization of both algorithms."""
    q = math.ceil(5.3 * round(V ** (1.0 / 3.0)))
    return eps / (4 * _PI ** 2 * _Q4 * (3 + 0.5 * _PI * math.log(q)))


def compute_budget(eps: float, Q: int, direction: str, V: int) -> ParamBudget:
    """Split ``eps`` into per-stage tolerances.

    Logarithms are natural. ``V`` is the voxel count, needed for the
    discretization share.
    """
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    lq = math.log(Q)
    if direction == "analysis":
        nuf = (eps / (2 * _PI ** 1.5 * _Q4)) / (2 + 0.5 * _PI * lq)
        inn = (eps / (4 * _PI ** 2 * _Q4)) / Q
        fsh = (eps / (8 * _PI ** 2 * _Q4)) / (3 + 0.5 * _PI * lq)
    elif direction == "synthesis":
        inn = 2 * math.sqrt(_PI) * eps / (4 * Q * _PI ** 2 * _Q4)
        fsh = 0.25 * (eps / (_PI ** 2 * _Q4)) / (3 + 0.5 * _PI * lq)
        nuf = 0.25 * (math.sqrt(_PI) * eps / (_PI ** 2 * _Q4)) / (3 + 0.5 * _PI * lq)
    else:
        raise ValueError("direction must be 'analysis' or 'synthesis'")
    dis = eps_discretization(eps, V)
    used, clamped = nuf, False
    if kernel_width(nuf) > MAX_WIDTH:
        used, clamped = kernel_floor(), True
    return ParamBudget(eps, direction, dis, nuf, fsh, inn, used, clamped)


# ---------------------------------------------------------------------------
# plan
# ---------------------------------------------------------------------------


@dataclass
class _DegreeBlock:
    ell: int
    pos: np.ndarray       # positions in the coefficient vector
    kidx: np.ndarray      # k - 1
    midx: np.ndarray      # m + ell
    U: np.ndarray         # (K_ell, Q) interpolation matrix


class TransformPlan:
    """Everything needed to apply the fast transforms on one grid.

    Use :func:`plan` to build one.
    """

    def __init__(self, grid, index, eps, selectors, Q, S, budgets,
                 chunk_targets=2_000_000, workers=None):
        self.grid = grid
        self.index = index
        self.eps = float(eps)
        self.selectors = selectors
        self.Q = int(Q)
        self.S = int(S)
        self.budgets = budgets
        self.workers = workers
        self.chunk_targets = int(chunk_targets)
        self.sphere = SphereGrid(self.S)
        self.L = index.L
        if index.n:
            self.radial = RadialNodes(self.Q, index.lam_min, index.lam_max)
            self.sht = ShtPlan(self.sphere, self.L, workers=workers)
            self.blocks = self._make_blocks()
            ell = np.repeat(np.arange(self.L + 1), 2 * np.arange(self.L + 1) + 1)
            self.phase = (1j ** (ell % 4)) / (4 * _PI)
        else:
            self.radial = None
            self.sht = None
            self.blocks = []
        self._kernels = {}
        self.scale = index.c * grid.h ** 1.5

    def _make_blocks(self):
        idx = self.index
        order = np.argsort(idx.ell, kind="stable")
        bounds = np.searchsorted(idx.ell[order], np.arange(self.L + 2))
        blocks = []
        for l in range(self.L + 1):
            pos = order[bounds[l]:bounds[l + 1]]
            roots = idx.roots_of_degree(l)
            blocks.append(_DegreeBlock(
                l, pos, idx.k[pos] - 1, idx.m[pos] + l,
                interp_matrix(self.radial, roots)))
        return blocks

    def kernel(self, direction: str) -> GriddedNufft:
        """NUFFT machinery for ``"analysis"`` or ``"synthesis"``, built lazily."""
        if direction not in self._kernels:
            eps = self.budgets[direction].eps_nuf_used
            self._kernels[direction] = GriddedNufft(self.grid, eps, self.workers)
        return self._kernels[direction]

    @property
    def n_targets(self) -> int:
        return self.Q * (self.S + 1) * self.S

    def shell_chunks(self):
        per = max(1, self.chunk_targets // ((self.S + 1) * self.S))
        for q0 in range(0, self.Q, per):
            yield q0, min(self.Q, q0 + per)

    def shell_targets(self, q0: int, q1: int):
        """Frequencies of shells q0..q1-1 and the ring pointers grouping them."""
        dirs = self.sphere.directions()
        rho = self.radial.nodes[q0:q1]
        xi = (rho[:, None, None, None] * dirs[None]).reshape(-1, 3)
        ring_ptr = np.arange(0, xi.shape[0] + 1, self.S, dtype=np.int64)
        return xi, ring_ptr

    def to_dict(self) -> dict:
        out = {
            "N": self.grid.N,
            "lambda": self.index.bandlimit,
            "n": self.index.n,
            "Q": self.Q,
            "S": self.S,
            "L": self.index.L,
            "K": self.index.K,
            "eps": self.eps,
            "selectors": self.selectors,
            "targets": self.n_targets,
            "budget": {d: b.to_dict() for d, b in self.budgets.items()},
        }
        for d in ("analysis", "synthesis"):
            eps = self.budgets[d].eps_nuf_used
            out["budget"][d]["kernel_width"] = kernel_width(eps)
        return out


def plan(N: int, bandlimit: float | None = None, eps: float = 1e-7,
         selectors: str = "optimized", caps=None, chunk_targets: int = 2_000_000,
         workers: int | None = None) -> TransformPlan:
    """Build a :class:`TransformPlan`.

    Parameters
    ----------
    N : int
        Grid size per axis.
    bandlimit : float, optional
        Defaults to ``pi N / 2``; may not exceed :func:`bandlimit_max`.
    eps : float
        Target accuracy in the l1 -> l-infinity sense.
    selectors : {"optimized", "strict"}
        Node-count rules for Q and S.
    caps : tuple, optional
        ``(L_cap, K_cap)`` passed to :func:`build_index`.
    chunk_targets : int
        Approximate number of NUFFT targets processed at once.

    Raises
    ------
    PlanHypothesisError
        If the bandlimit or the tolerance is outside the guaranteed range.
    """
    grid = VoxelGrid(int(N))
    V = grid.V
    lam = bandlimit_default(N) if bandlimit is None else float(bandlimit)
    lam_cap = bandlimit_max(N)
    if lam > lam_cap:
        raise PlanHypothesisError(
            "bandlimit %.6g exceeds 6^(1/3) pi^(2/3) floor((N+1)/2) = %.6g for N=%d"
            % (lam, lam_cap, N))
    if not 0 < eps < 1:
        raise PlanHypothesisError("eps must lie in (0, 1), got %g" % eps)
    if abs(math.log2(eps)) > 5.3 * N:
        raise PlanHypothesisError(
            "|log2(eps)| = %.4g exceeds 5.3 V^(1/3) = %.4g" % (abs(math.log2(eps)), 5.3 * N))
    index = build_index(lam, caps)
    eta = eps_discretization(eps, V)
    if selectors == "strict":
        Q = select_Q(V, eta)
        S = select_S(V, eta)
    elif selectors == "optimized":
        Q = select_Q_optimized(V, eta)
        lam_n = index.lam_max if index.n else lam
        S = select_S_optimized(lam_n, eta)
    else:
        raise ValueError("selectors must be 'strict' or 'optimized'")
    # keep every retained degree strictly below S/2 so no azimuthal alias
    # reaches the spherical transform
    S = max(S, 2 * index.L + 2, 2)
    budgets = {d: compute_budget(eps, Q, d, V) for d in ("analysis", "synthesis")}
    for b in budgets.values():
        if b.clamped:
            warnings.warn(
                "NUFFT budget %.3g for %s is below the widest kernel's reach; "
                "using %.3g" % (b.eps_nuf, b.direction, b.eps_nuf_used),
                RuntimeWarning, stacklevel=2)
    return TransformPlan(grid, index, eps, selectors, Q, S, budgets,
                         chunk_targets=chunk_targets, workers=workers)


# ---------------------------------------------------------------------------
# fast transforms
# ---------------------------------------------------------------------------


class _Timer:
    def __init__(self, sink):
        self.sink = sink

    @contextmanager
    def __call__(self, key):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            if self.sink is not None:
                self.sink[key] = self.sink.get(key, 0.0) + time.perf_counter() - t0


def _check_volume(p: TransformPlan, f) -> np.ndarray:
    f = np.asarray(f)
    if f.shape != (p.grid.N,) * 3:
        raise ValueError("volume shape %s does not match grid size %d" % (f.shape, p.grid.N))
    return f.astype(np.complex128, copy=False)


def _check_coeffs(p: TransformPlan, alpha) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=np.complex128).ravel()
    if alpha.size != p.index.n:
        raise ValueError("coefficient vector has length %d, index has %d"
                         % (alpha.size, p.index.n))
    return alpha


def fast_Bstar_apply(p: TransformPlan, f, timings: dict | None = None) -> np.ndarray:
    """Fast analysis: approximate ``B* f``.

    Steps: (1) NUFFT of the masked volume at the shell frequencies
    ``rho_q gamma_st``; (2) weighted spherical harmonic analysis on every shell
    scaled by ``i^l / (4 pi)``; (3) Chebyshev interpolation in ``rho`` to the
    roots, scaled by ``c_i h^{3/2}``.

    ``timings``, if given, receives the seconds spent in ``step1``, ``step2``
    and ``step3``.
    """
    f = _check_volume(p, f)
    out = np.zeros(p.index.n, dtype=np.complex128)
    if p.index.n == 0:
        return out
    tick = _Timer(timings)
    with tick("step1"):
        kern = p.kernel("analysis")
        fine = kern.prepare(np.where(p.grid.inside, f, 0))
    beta = np.empty((p.Q, p.sht.ncoeff), dtype=np.complex128)
    for q0, q1 in p.shell_chunks():
        with tick("step1"):
            xi, ring_ptr = p.shell_targets(q0, q1)
            a = kern.interp(fine, xi, ring_ptr).reshape(q1 - q0, p.S + 1, p.S)
        with tick("step2"):
            beta[q0:q1] = sht_analysis(p.sht, a)
    del fine
    with tick("step3"):
        beta *= p.phase[None, :]
        for blk in p.blocks:
            l = blk.ell
            res = blk.U @ beta[:, l * l:(l + 1) ** 2]
            out[blk.pos] = res[blk.kidx, blk.midx]
        out *= p.scale
    return out


def fast_B_apply(p: TransformPlan, alpha, timings: dict | None = None) -> np.ndarray:
    """Fast synthesis: approximate ``B alpha``; the adjoint pipeline of
    :func:`fast_Bstar_apply`, with voxels outside the open unit ball zeroed."""
    alpha = _check_coeffs(p, alpha)
    N = p.grid.N
    if p.index.n == 0:
        return np.zeros((N, N, N), dtype=np.complex128)
    tick = _Timer(timings)
    with tick("step1"):
        z = alpha * p.scale
        beta = np.zeros((p.Q, p.sht.ncoeff), dtype=np.complex128)
        for blk in p.blocks:
            l = blk.ell
            Z = np.zeros((blk.U.shape[0], 2 * l + 1), dtype=np.complex128)
            Z[blk.kidx, blk.midx] = z[blk.pos]
            beta[:, l * l:(l + 1) ** 2] = blk.U.T @ Z
        beta *= np.conj(p.phase)[None, :]
    w = p.sphere.weights
    with tick("step3"):
        kern = p.kernel("synthesis")
        acc = kern.new_accumulator()
    for q0, q1 in p.shell_chunks():
        with tick("step2"):
            a = sht_synthesis(p.sht, beta[q0:q1]) * w[None, :, None]
        with tick("step3"):
            xi, ring_ptr = p.shell_targets(q0, q1)
            kern.spread(acc, xi, a.ravel(), ring_ptr)
    with tick("step3"):
        f = kern.finish(acc)
        del acc
        f[~p.grid.inside] = 0
    return f


def lowpass(p: TransformPlan, f, new_bandlimit: float):
    """Project onto the basis functions with ``lam <= new_bandlimit``.

    Returns the filtered volume and the number of retained basis functions.
    """
    if new_bandlimit > p.index.bandlimit:
        raise ValueError("new bandlimit exceeds the plan's bandlimit")
    alpha = fast_Bstar_apply(p, f)
    keep = p.index.lam <= new_bandlimit
    kept = int(np.count_nonzero(keep))
    if kept == 0:
        warnings.warn("no basis function below bandlimit %.6g; output is zero"
                      % new_bandlimit, RuntimeWarning, stacklevel=2)
        N = p.grid.N
        return np.zeros((N, N, N), dtype=np.complex128), 0
    return fast_B_apply(p, np.where(keep, alpha, 0)), kept


# ---------------------------------------------------------------------------
# dense reference operators
# ---------------------------------------------------------------------------


class DenseOperator:
    """Reference operator ``B`` generated in (l, m) panels.

    The panel of degree l and order m is the ``(V_in, K_l)`` matrix
    ``c_lk h^{3/2} j_l(lam_lk r_j) Y_l^m(theta_j, phi_j)`` over the voxels
    inside the unit ball. Radial and angular factors are cached, the panels
    themselves are formed on the fly.
    """

    def __init__(self, index: BasisIndex, grid: VoxelGrid):
        self.index = index
        self.grid = grid
        inside = grid.inside.ravel()
        self.inside = np.nonzero(inside)[0]
        pts = grid.points()[self.inside]
        r, theta, phi = cart_to_sph(pts)
        self.r = r
        self.phi = phi
        L = index.L
        self.blocks = []
        if index.n == 0:
            return
        ct = np.cos(theta)
        st = np.sin(theta)
        self.legendre = [legendre_order(m, L, ct, st) for m in range(L + 1)]
        order = np.argsort(index.ell, kind="stable")
        bounds = np.searchsorted(index.ell[order], np.arange(L + 2))
        h32 = grid.h ** 1.5
        for l in range(L + 1):
            pos = order[bounds[l]:bounds[l + 1]]
            roots = index.roots_of_degree(l)
            c = np.array([index.c[pos][index.k[pos] == k][0] for k in range(1, roots.size + 1)])
            radial = np.stack([sph_bessel_j(l, lam * r) for lam in roots], axis=1)
            radial *= c[None, :] * h32
            self.blocks.append((l, pos, radial))

    def harmonic(self, l: int, m: int) -> np.ndarray:
        p = self.legendre[abs(m)][:, l - abs(m)]
        if m < 0 and abs(m) % 2 == 1:
            p = -p
        return p * np.exp(1j * m * self.phi)

    def panel(self, l: int, m: int) -> np.ndarray:
        """Materialized columns of B for degree l and order m (rows: inside voxels)."""
        for ll, pos, radial in self.blocks:
            if ll == l:
                return radial * self.harmonic(l, m)[:, None]
        raise KeyError("degree %d not in the index" % l)

    def _panels(self):
        idx = self.index
        for l, pos, radial in self.blocks:
            kk = idx.k[pos] - 1
            mm = idx.m[pos]
            for m in range(-l, l + 1):
                sel = pos[mm == m]
                cols = kk[mm == m]
                yield sel, radial[:, cols] * self.harmonic(l, m)[:, None]

    def apply(self, alpha) -> np.ndarray:
        """``B alpha`` as an (N, N, N) volume."""
        alpha = np.asarray(alpha, dtype=np.complex128).ravel()
        if alpha.size != self.index.n:
            raise ValueError("coefficient vector does not match the index")
        vals = np.zeros(self.inside.size, dtype=np.complex128)
        for sel, P in self._panels():
            vals += P @ alpha[sel]
        N = self.grid.N
        out = np.zeros(N ** 3, dtype=np.complex128)
        out[self.inside] = vals
        return out.reshape(N, N, N)

    def adjoint(self, f) -> np.ndarray:
        """``B* f`` as a coefficient vector."""
        f = np.asarray(f, dtype=np.complex128)
        if f.size != self.grid.V:
            raise ValueError("volume does not match the grid")
        fin = f.ravel()[self.inside]
        out = np.zeros(self.index.n, dtype=np.complex128)
        for sel, P in self._panels():
            out[sel] = P.conj().T @ fin
        return out

    def matrix(self) -> np.ndarray:
        """The full ``(V, n)`` matrix; intended for small grids only."""
        B = np.zeros((self.grid.V, self.index.n), dtype=np.complex128)
        for sel, P in self._panels():
            B[np.ix_(self.inside, sel)] = P
        return B


def dense_B_apply(index: BasisIndex, grid: VoxelGrid, alpha) -> np.ndarray:
    """Reference ``B alpha`` (see :class:`DenseOperator`)."""
    return DenseOperator(index, grid).apply(alpha)


def dense_Bstar_apply(index: BasisIndex, grid: VoxelGrid, f) -> np.ndarray:
    """Reference ``B* f`` (see :class:`DenseOperator`)."""
    return DenseOperator(index, grid).adjoint(f)


def dense_memory_bytes(index: BasisIndex, grid: VoxelGrid) -> int:
    """Rough peak memory of :class:`DenseOperator` in bytes."""
    V_in = int(np.count_nonzero(grid.inside))
    L = max(index.L, 0)
    pairs = int(np.count_nonzero(index.m == 0))
    return 8 * V_in * (pairs + (L + 1) * (L + 2) // 2) + 16 * V_in * max(index.K, 1)


# ---------------------------------------------------------------------------
# analytic oracle
# ---------------------------------------------------------------------------


def analytic_coeff_oracle(k: int, ell: int, m: int, rho: float, tol: float = 1e-14,
                          max_nodes: int = 4096) -> complex:
    """Shell coefficient ``beta_{l,m}(rho)`` of the function ``psi_{k,l,m}``.

    For ``f = psi_{k,l,m}`` the spherical projection of its Fourier transform
    on the shell of radius rho, multiplied by ``i^l / (4 pi)``, equals
    ``c_lk int_0^1 j_l(lam_lk r) j_l(rho r) r^2 dr`` in channel (l, m) and
    vanishes in every other channel. At ``rho = lam_lk`` the value is
    ``1 / c_lk``. The integral is evaluated by Gauss-Legendre quadrature with
    doubling node counts until two successive values agree.
    """
    from .special_fn import bessel_root, norm_const

    root = bessel_root(ell, k)
    c = norm_const(root)
    n = 32
    prev = None
    while n <= max_nodes:
        x, w = np.polynomial.legendre.leggauss(n)
        r = 0.5 * (x + 1.0)
        val = 0.5 * np.sum(w * sph_bessel_j(ell, root.lam * r) * sph_bessel_j(ell, rho * r) * r * r)
        if prev is not None and abs(val - prev) <= tol * max(abs(val), 1e-300) + 1e-17:
            return complex(c * val)
        prev = val
        n *= 2
    raise ArithmeticError("radial quadrature did not converge")
