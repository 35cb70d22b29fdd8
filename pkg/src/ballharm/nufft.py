"""Non-uniform FFTs between the voxel grid and arbitrary frequencies.

Forward (type 2): ``a(xi) = sum_j f_j exp(-i x_j . xi)`` for voxel points
``x_j`` and arbitrary frequencies ``xi``.
Adjoint (type 1): ``f_j = sum_p a_p exp(+i x_j . xi_p)``.

The gridded backend uses the exponential-of-semicircle kernel
``exp(beta (sqrt(1 - z^2) - 1))`` on a twofold upsampled periodic grid. A
direct backend evaluates the sums exactly and serves as the reference.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np
import scipy.fft as sfft

from .grids import VoxelGrid

MAX_WIDTH = 16
BETA_PER_WIDTH = 2.30
UPSAMPLING = 2.0


class NufftPrecisionError(ValueError):
    """Requested tolerance needs a kernel wider than :data:`MAX_WIDTH`."""


def kernel_width(eps: float) -> int:
    """Kernel width ``ceil(log10(1/eps) + 1.5)``, at least 2."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    return max(2, int(math.ceil(math.log10(1.0 / eps) + 1.5)))


def kernel_floor() -> float:
    """Smallest tolerance reachable with the widest kernel."""
    return 10.0 ** (1.5 - MAX_WIDTH)


def es_kernel(z, beta: float):
    """Exponential-of-semicircle kernel on [-1, 1], zero outside."""
    z = np.asarray(z, dtype=np.float64)
    t = 1.0 - z * z
    out = np.zeros_like(z)
    ok = t > 0
    out[ok] = np.exp(beta * (np.sqrt(t[ok]) - 1.0))
    return out


def es_fourier(k, w: int, beta: float, spacing: float, nquad: int = 200) -> np.ndarray:
    """Fourier transform of ``psi(x) = ES(x / (w spacing / 2))`` at integers k."""
    z, wz = np.polynomial.legendre.leggauss(nquad)
    half = 0.5 * w * spacing
    vals = es_kernel(z, beta) * wz
    k = np.asarray(k, dtype=np.float64)
    return half * (np.cos(np.outer(k * half, z)) @ vals)


# ---------------------------------------------------------------------------
# compiled spreading / interpolation
# ---------------------------------------------------------------------------

_FASTMATH = {"reassoc", "contract", "nsz", "arcp"}


@nb.njit(cache=True, inline="always", fastmath=_FASTMATH)
def _kernel_row(g, w, beta, n, vals, idx):
    """Kernel weights and wrapped indices of the w fine-grid points near g."""
    half = 0.5 * w
    inv = 1.0 / half
    i0 = math.ceil(g - half)
    j = i0 % n
    for a in range(w):
        z = (i0 + a - g) * inv
        t = 1.0 - z * z
        if t > 0.0:
            vals[a] = math.exp(beta * (math.sqrt(t) - 1.0))
        else:
            vals[a] = 0.0
        idx[a] = j
        j += 1
        if j == n:
            j = 0


@nb.njit(parallel=True, cache=True, fastmath=_FASTMATH)
def _interp_rings(ur, ui, gx, gy, gz_ring, ring_ptr, w, beta, out_r, out_i, nthreads):
    """Interpolate from the fine grid at targets grouped in rings.

    All targets of ring r share the third coordinate ``gz_ring[r]``. The
    contraction along that axis is computed once per ring for each touched
    (x, y) cell and cached in a scratch plane tagged by ring number.
    """
    n0, n1, n2 = ur.shape
    nring = gz_ring.size
    nchunk = min(nring, max(4 * nthreads, nring // 256 + 1))
    for ch in nb.prange(nchunk):
        r_lo = ch * nring // nchunk
        r_hi = (ch + 1) * nring // nchunk
        stamp = np.full((n0, n1), -1, dtype=np.int64)
        cr = np.empty((n0, n1))
        ci = np.empty((n0, n1))
        kx = np.empty(w)
        ky = np.empty(w)
        kz = np.empty(w)
        ix = np.empty(w, dtype=np.int64)
        iy = np.empty(w, dtype=np.int64)
        iz = np.empty(w, dtype=np.int64)
        for r in range(r_lo, r_hi):
            _kernel_row(gz_ring[r], w, beta, n2, kz, iz)
            c0 = iz[0]
            contiguous = c0 + w <= n2
            for p in range(ring_ptr[r], ring_ptr[r + 1]):
                _kernel_row(gx[p], w, beta, n0, kx, ix)
                _kernel_row(gy[p], w, beta, n1, ky, iy)
                acc_r = 0.0
                acc_i = 0.0
                for a in range(w):
                    ia = ix[a]
                    t_r = 0.0
                    t_i = 0.0
                    for b in range(w):
                        ib = iy[b]
                        if stamp[ia, ib] != r:
                            s_r = 0.0
                            s_i = 0.0
                            if contiguous:
                                for c in range(w):
                                    s_r += ur[ia, ib, c0 + c] * kz[c]
                                    s_i += ui[ia, ib, c0 + c] * kz[c]
                            else:
                                for c in range(w):
                                    s_r += ur[ia, ib, iz[c]] * kz[c]
                                    s_i += ui[ia, ib, iz[c]] * kz[c]
                            cr[ia, ib] = s_r
                            ci[ia, ib] = s_i
                            stamp[ia, ib] = r
                        t_r += ky[b] * cr[ia, ib]
                        t_i += ky[b] * ci[ia, ib]
                    acc_r += kx[a] * t_r
                    acc_i += kx[a] * t_i
                out_r[p] = acc_r
                out_i[p] = acc_i


@nb.njit(parallel=True, cache=True, fastmath=_FASTMATH)
def _spread_rings(br, bi, gx, gy, gz_ring, ring_ptr, vr, vi, w, beta,
                  order, bin_ptr, color_bins, color_ptr, max_ring):
    """Adjoint of :func:`_interp_rings`.

    Each ring is first spread onto a scratch (x, y) plane, then every touched
    cell is spread along the third axis. Rings are bucketed into slabs along
    that axis at least w points wide; slabs of one colour never write to the
    same grid points, so colours run in parallel and the result does not
    depend on the thread count.
    """
    n0, n1, n2 = br.shape
    for color in range(color_ptr.size - 1):
        lo = color_ptr[color]
        hi = color_ptr[color + 1]
        for t in nb.prange(hi - lo):
            bidx = color_bins[lo + t]
            if bin_ptr[bidx] == bin_ptr[bidx + 1]:
                continue
            stamp = np.full((n0, n1), -1, dtype=np.int64)
            pr = np.empty((n0, n1))
            pi = np.empty((n0, n1))
            touched = np.empty(max_ring * w * w, dtype=np.int64)
            kx = np.empty(w)
            ky = np.empty(w)
            kz = np.empty(w)
            ix = np.empty(w, dtype=np.int64)
            iy = np.empty(w, dtype=np.int64)
            iz = np.empty(w, dtype=np.int64)
            for q in range(bin_ptr[bidx], bin_ptr[bidx + 1]):
                r = order[q]
                nt = 0
                for p in range(ring_ptr[r], ring_ptr[r + 1]):
                    _kernel_row(gx[p], w, beta, n0, kx, ix)
                    _kernel_row(gy[p], w, beta, n1, ky, iy)
                    a_r = vr[p]
                    a_i = vi[p]
                    for a in range(w):
                        ia = ix[a]
                        xr = kx[a] * a_r
                        xi = kx[a] * a_i
                        for b in range(w):
                            ib = iy[b]
                            if stamp[ia, ib] != r:
                                stamp[ia, ib] = r
                                pr[ia, ib] = 0.0
                                pi[ia, ib] = 0.0
                                touched[nt] = ia * n1 + ib
                                nt += 1
                            pr[ia, ib] += ky[b] * xr
                            pi[ia, ib] += ky[b] * xi
                _kernel_row(gz_ring[r], w, beta, n2, kz, iz)
                for u in range(nt):
                    ia = touched[u] // n1
                    ib = touched[u] - ia * n1
                    s_r = pr[ia, ib]
                    s_i = pi[ia, ib]
                    for c in range(w):
                        ic = iz[c]
                        br[ia, ib, ic] += s_r * kz[c]
                        bi[ia, ib, ic] += s_i * kz[c]


def _slab_schedule(gz_ring: np.ndarray, n: int, w: int):
    """Sort rings into slabs along the third axis and colour the slabs."""
    nbins = max(1, n // w)
    start = np.mod(np.ceil(gz_ring - 0.5 * w).astype(np.int64), n)
    b = np.minimum(start // w, nbins - 1)
    order = np.argsort(b, kind="stable").astype(np.int64)
    bin_ptr = np.zeros(nbins + 1, dtype=np.int64)
    np.cumsum(np.bincount(b, minlength=nbins), out=bin_ptr[1:])
    if nbins < 3:
        colors = [np.arange(nbins)]
    elif nbins % 2 == 0:
        colors = [np.arange(0, nbins, 2), np.arange(1, nbins, 2)]
    else:
        # the last slab wraps around onto slab 0
        colors = [np.arange(0, nbins - 1, 2), np.arange(1, nbins - 1, 2), np.array([nbins - 1])]
    color_ptr = np.zeros(len(colors) + 1, dtype=np.int64)
    np.cumsum([c.size for c in colors], out=color_ptr[1:])
    return order, bin_ptr, np.concatenate(colors).astype(np.int64), color_ptr


# ---------------------------------------------------------------------------
# gridded backend
# ---------------------------------------------------------------------------


class GriddedNufft:
    """Fine-grid machinery for one voxel grid and tolerance.

    Parameters
    ----------
    grid : VoxelGrid
    eps : float
        Requested relative tolerance; sets the kernel width.
    workers : int, optional
        Threads for the FFTs.
    """

    def __init__(self, grid: VoxelGrid, eps: float, workers: int | None = None):
        w = kernel_width(eps)
        if w > MAX_WIDTH:
            raise NufftPrecisionError(
                "tolerance %.3g needs kernel width %d > %d; smallest reachable "
                "tolerance is %.3g" % (eps, w, MAX_WIDTH, kernel_floor()))
        self.grid = grid
        self.eps = float(eps)
        self.w = w
        self.beta = BETA_PER_WIDTH * w
        N = grid.N
        self.n = int(sfft.next_fast_len(max(int(math.ceil(UPSAMPLING * N)), 2 * w)))
        self.spacing = 2 * np.pi / self.n
        self.workers = workers
        k = np.arange(N) - grid.center
        self._kmod = np.mod(k, self.n)
        self.deconv = self.spacing / es_fourier(k, w, self.beta, self.spacing)

    # grid coordinate of each frequency along each axis, in [0, n)
    def _fine_coords(self, xi: np.ndarray):
        t = np.mod(self.grid.h * xi, 2 * np.pi) / self.spacing
        t[t >= self.n] -= self.n
        return [np.ascontiguousarray(t[:, d]) for d in range(3)]

    def _phase(self, xi: np.ndarray, sign: int) -> np.ndarray:
        o = self.grid.offset
        if o == 0.0:
            return None
        return np.exp(sign * 1j * o * xi.sum(axis=1))

    def prepare(self, f: np.ndarray):
        """Deconvolve, zero-pad and FFT the modes ``f`` (shape (N, N, N)).

        Returns the real and imaginary parts of the fine grid.
        """
        n = self.n
        d = self.deconv
        G = np.zeros((n, n, n), dtype=np.complex128)
        km = self._kmod
        G[np.ix_(km, km, km)] = f * (d[:, None, None] * d[None, :, None] * d[None, None, :])
        U = sfft.fftn(G, overwrite_x=True, workers=self.workers)
        del G
        return np.ascontiguousarray(U.real), np.ascontiguousarray(U.imag)

    def _rings(self, xi, ring_ptr):
        M = xi.shape[0]
        if ring_ptr is None:
            ring_ptr = np.arange(M + 1, dtype=np.int64)
        ring_ptr = np.ascontiguousarray(ring_ptr, dtype=np.int64)
        if ring_ptr[0] != 0 or ring_ptr[-1] != M:
            raise ValueError("ring pointers must span all targets")
        gx, gy, gz = self._fine_coords(xi)
        gz_ring = np.ascontiguousarray(gz[ring_ptr[:-1]])
        return gx, gy, gz_ring, ring_ptr

    def interp(self, fine, xi, ring_ptr=None) -> np.ndarray:
        """Evaluate the forward sum at frequencies ``xi`` (shape (M, 3)).

        ``ring_ptr`` optionally groups consecutive targets that share the same
        third coordinate (ring r is ``ring_ptr[r]:ring_ptr[r+1]``), which is
        much faster for targets on spherical grids.
        """
        xi = np.asarray(xi, dtype=np.float64).reshape(-1, 3)
        gx, gy, gz_ring, ring_ptr = self._rings(xi, ring_ptr)
        out_r = np.empty(xi.shape[0])
        out_i = np.empty(xi.shape[0])
        _interp_rings(fine[0], fine[1], gx, gy, gz_ring, ring_ptr, self.w, self.beta,
                      out_r, out_i, nb.get_num_threads())
        out = out_r + 1j * out_i
        ph = self._phase(xi, -1)
        return out if ph is None else out * ph

    def new_accumulator(self):
        n = self.n
        return np.zeros((n, n, n)), np.zeros((n, n, n))

    def spread(self, acc, xi, values, ring_ptr=None) -> None:
        """Add the kernel-weighted ``values`` at frequencies ``xi`` into ``acc``."""
        xi = np.asarray(xi, dtype=np.float64).reshape(-1, 3)
        v = np.asarray(values, dtype=np.complex128).ravel()
        ph = self._phase(xi, +1)
        if ph is not None:
            v = v * ph
        gx, gy, gz_ring, ring_ptr = self._rings(xi, ring_ptr)
        order, bin_ptr, cb, cp = _slab_schedule(gz_ring, self.n, self.w)
        max_ring = int(np.max(np.diff(ring_ptr))) if ring_ptr.size > 1 else 0
        _spread_rings(acc[0], acc[1], gx, gy, gz_ring, ring_ptr,
                      np.ascontiguousarray(v.real), np.ascontiguousarray(v.imag),
                      self.w, self.beta, order, bin_ptr, cb, cp, max_ring)

    def finish(self, acc) -> np.ndarray:
        """Inverse FFT of the accumulator and deconvolution to (N, N, N) modes."""
        B = acc[0] + 1j * acc[1]
        F = sfft.ifftn(B, norm="forward", overwrite_x=True, workers=self.workers)
        km = self._kmod
        d = self.deconv
        return F[np.ix_(km, km, km)] * (d[:, None, None] * d[None, :, None] * d[None, None, :])


# ---------------------------------------------------------------------------
# direct backend
# ---------------------------------------------------------------------------


def _chunks(M, size):
    for lo in range(0, M, size):
        yield lo, min(M, lo + size)


def direct_forward(grid: VoxelGrid, f, xi, chunk: int = 2048) -> np.ndarray:
    """Exact ``sum_j f_j exp(-i x_j . xi)`` by separable summation."""
    f = np.asarray(f, dtype=np.complex128)
    xi = np.asarray(xi, dtype=np.float64).reshape(-1, 3)
    x = grid.axis
    out = np.empty(xi.shape[0], dtype=np.complex128)
    for lo, hi in _chunks(xi.shape[0], chunk):
        e = [np.exp(-1j * np.outer(xi[lo:hi, d], x)) for d in range(3)]
        t = np.tensordot(f, e[2], axes=([2], [1]))        # (N, N, M)
        t = np.einsum("ijm,mj->im", t, e[1])
        out[lo:hi] = np.einsum("im,mi->m", t, e[0])
    return out


def direct_adjoint(grid: VoxelGrid, a, xi, chunk: int = 2048) -> np.ndarray:
    """Exact ``f_j = sum_p a_p exp(+i x_j . xi_p)``."""
    a = np.asarray(a, dtype=np.complex128).ravel()
    xi = np.asarray(xi, dtype=np.float64).reshape(-1, 3)
    x = grid.axis
    N = grid.N
    f = np.zeros((N * N, N), dtype=np.complex128)
    for lo, hi in _chunks(xi.shape[0], chunk):
        e = [np.exp(1j * np.outer(xi[lo:hi, d], x)) for d in range(3)]
        left = (a[lo:hi, None, None] * e[0][:, :, None] * e[1][:, None, :]).reshape(hi - lo, -1)
        f += left.T @ e[2]
    return f.reshape(N, N, N)


def type3_direct(points, values, freqs, sign: int = -1) -> np.ndarray:
    """Experimental: ``sum_j c_j exp(sign i x_j . s_k)`` for arbitrary points."""
    x = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    c = np.asarray(values, dtype=np.complex128).ravel()
    s = np.asarray(freqs, dtype=np.float64).reshape(-1, 3)
    out = np.empty(s.shape[0], dtype=np.complex128)
    for lo, hi in _chunks(s.shape[0], 1024):
        out[lo:hi] = np.exp(sign * 1j * (s[lo:hi] @ x.T)) @ c
    return out


# ---------------------------------------------------------------------------
# plan-level API
# ---------------------------------------------------------------------------


@dataclass
class NufftPlan:
    """Transform between a voxel grid and a fixed set of frequencies."""

    grid: VoxelGrid
    targets: np.ndarray
    eps: float = 1e-12
    backend: str = "gridded"
    workers: int | None = None
    kernel: GriddedNufft | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.targets = np.asarray(self.targets, dtype=np.float64).reshape(-1, 3)
        if self.backend == "gridded":
            self.kernel = GriddedNufft(self.grid, self.eps, self.workers)
        elif self.backend != "direct":
            raise ValueError("backend must be 'gridded' or 'direct'")


def nufft_forward(plan: NufftPlan, f) -> np.ndarray:
    """Type-2 transform of the volume ``f`` to the plan's frequencies."""
    f = np.asarray(f, dtype=np.complex128)
    if f.shape != (plan.grid.N,) * 3:
        raise ValueError("volume shape does not match the grid")
    if plan.backend == "direct":
        return direct_forward(plan.grid, f, plan.targets)
    return plan.kernel.interp(plan.kernel.prepare(f), plan.targets)


def nufft_adjoint(plan: NufftPlan, a) -> np.ndarray:
    """Type-1 transform of values at the plan's frequencies back to the grid."""
    a = np.asarray(a, dtype=np.complex128).ravel()
    if a.size != plan.targets.shape[0]:
        raise ValueError("value count does not match the number of targets")
    if plan.backend == "direct":
        return direct_adjoint(plan.grid, a, plan.targets)
    acc = plan.kernel.new_accumulator()
    plan.kernel.spread(acc, plan.targets, a)
    return plan.kernel.finish(acc)
