"""Spherical Bessel functions, their roots, normalized Legendre functions and
spherical harmonics.

All kernels are compiled with numba. Spherical harmonics use the
Condon-Shortley phase, ``Y_l^m(theta, phi) = Pbar_l^m(cos theta) exp(i m phi)``
with ``Y_l^{-m} = (-1)^m conj(Y_l^m)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numba as nb
import numpy as np

# ---------------------------------------------------------------------------
# spherical Bessel functions of the first kind
# ---------------------------------------------------------------------------


@nb.njit(cache=True)
def _j1_scalar(x):
    if x < 0.5:
        x2 = x * x
        # Taylor series, truncation error below 1e-17 for x < 0.5
        t = x / 3.0
        s = t
        for n in range(1, 10):
            t *= -x2 / (2.0 * n * (2.0 * n + 3.0))
            s += t
        return s
    return math.sin(x) / (x * x) - math.cos(x) / x


@nb.njit(cache=True)
def _jn_upward(l, x):
    """Forward recurrence, stable for x > l."""
    if x == 0.0:
        return 1.0 if l == 0 else 0.0
    j0 = math.sin(x) / x
    if l == 0:
        return j0
    jm = j0
    j = _j1_scalar(x)
    for k in range(1, l):
        jp = (2.0 * k + 1.0) / x * j - jm
        jm = j
        j = jp
    return j


@nb.njit(cache=True)
def _jn_miller(l, x):
    """Backward (Miller) recurrence normalized against j_0 or j_1."""
    if x == 0.0:
        return 1.0 if l == 0 else 0.0
    ref = max(float(l), x)
    top = l + 20 + int(12.0 * ref ** (1.0 / 3.0)) + int(x - min(x, float(l)))
    p_next = 0.0
    p = 1e-30
    val = p if top == l else 0.0
    for k in range(top, 0, -1):
        pm = (2.0 * k + 1.0) / x * p - p_next
        p_next = p
        p = pm
        if k - 1 == l:
            val = p
        if abs(p) > 1e200:
            p *= 1e-200
            p_next *= 1e-200
            val *= 1e-200
    # p holds p_0, p_next holds p_1
    j0 = math.sin(x) / x
    j1 = _j1_scalar(x)
    if abs(j0) >= abs(j1):
        return val * (j0 / p)
    return val * (j1 / p_next)


@nb.njit(cache=True)
def _jn_series(l, x):
    """Power series, used for x < 1 where the recurrences lose range."""
    pre = 1.0
    for k in range(1, l + 1):
        pre *= x / (2.0 * k + 1.0)
    if pre == 0.0:
        return 0.0
    x2 = 0.5 * x * x
    t = 1.0
    s = 1.0
    for n in range(1, 20):
        t *= -x2 / (n * (2.0 * l + 2.0 * n + 1.0))
        s += t
    return pre * s


@nb.njit(cache=True)
def _jn_scalar(l, x):
    if x < 1.0:
        return _jn_series(l, x)
    if x > l:
        return _jn_upward(l, x)
    return _jn_miller(l, x)


@nb.njit(cache=True)
def _jn_array(l, x, out):
    for i in range(x.size):
        out[i] = _jn_scalar(l, x[i])


@nb.njit(cache=True)
def _jn_deriv_scalar(l, x):
    if l == 0:
        return -_jn_scalar(1, x)
    return _jn_scalar(l - 1, x) - (l + 1.0) / x * _jn_scalar(l, x)


def sph_bessel_j(ell: int, x):
    """Spherical Bessel function of the first kind ``j_ell(x)`` for x >= 0.

    Parameters
    ----------
    ell : int
        Non-negative order.
    x : float or array_like
        Non-negative arguments.

    Returns
    -------
    float or numpy.ndarray
        Values with the shape of ``x``.
    """
    ell = int(ell)
    if ell < 0:
        raise ValueError("order must be non-negative")
    arr = np.asarray(x, dtype=np.float64)
    if np.any(arr < 0) or np.any(~np.isfinite(arr)):
        raise ValueError("sph_bessel_j requires finite x >= 0")
    flat = np.ascontiguousarray(arr.ravel())
    out = np.empty_like(flat)
    _jn_array(ell, flat, out)
    if arr.ndim == 0:
        return float(out[0])
    return out.reshape(arr.shape)


def sph_bessel_j_deriv(ell: int, x):
    """Derivative ``j_ell'(x)`` via ``j_{ell-1}(x) - (ell+1)/x j_ell(x)``."""
    ell = int(ell)
    x = np.asarray(x, dtype=np.float64)
    if ell == 0:
        return -sph_bessel_j(1, x)
    return sph_bessel_j(ell - 1, x) - (ell + 1.0) / x * sph_bessel_j(ell, x)


# ---------------------------------------------------------------------------
# roots
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BesselRoot:
    """The k-th positive root of j_ell."""

    ell: int
    k: int
    lam: float


@nb.njit(cache=True)
def _refine_root(l, a, b):
    fa = _jn_scalar(l, a)
    if fa == 0.0:
        return a
    for _ in range(80):
        mid = 0.5 * (a + b)
        if mid <= a or mid >= b:
            break
        fm = _jn_scalar(l, mid)
        if fm == 0.0:
            return mid
        if (fm > 0.0) == (fa > 0.0):
            a = mid
            fa = fm
        else:
            b = mid
    x = 0.5 * (a + b)
    fx = _jn_scalar(l, x)
    for _ in range(3):
        d = _jn_deriv_scalar(l, x)
        if d == 0.0:
            break
        xn = x - fx / d
        fn = _jn_scalar(l, xn)
        if abs(fn) < abs(fx):
            x = xn
            fx = fn
        else:
            break
    return x


@nb.njit(cache=True)
def _next_level(l, prev, count):
    """First ``count`` roots of j_l from the roots ``prev`` of j_{l-1}.

    Roots of consecutive orders interlace, so the k-th root of j_l lies
    between roots k and k+1 of j_{l-1}. The last root, when no upper bracket
    is available, is found by unit steps from prev[k]; zeros of j_l are more
    than pi apart so a unit step never skips one.
    """
    out = np.empty(count)
    for k in range(count):
        a = prev[k]
        if k + 1 < prev.size:
            b = prev[k + 1]
        else:
            fa = _jn_scalar(l, a)
            b = a + 1.0
            fb = _jn_scalar(l, b)
            while (fb > 0.0) == (fa > 0.0) and fb != 0.0:
                a = b
                b = a + 1.0
                fb = _jn_scalar(l, b)
            if fb == 0.0:
                out[k] = b
                continue
        out[k] = _refine_root(l, a, b)
    return out


@lru_cache(maxsize=8)
def _root_table(lmax: int, kmax: int) -> np.ndarray:
    table = np.empty((lmax + 1, kmax))
    table[0] = np.pi * np.arange(1, kmax + 1)
    for l in range(1, lmax + 1):
        table[l] = _next_level(l, table[l - 1], kmax)
    table.setflags(write=False)
    return table


def bessel_root(ell: int, k: int) -> BesselRoot:
    """Return the k-th positive root of ``j_ell`` (k >= 1)."""
    ell, k = int(ell), int(k)
    if ell < 0 or k < 1:
        raise ValueError("need ell >= 0 and k >= 1")
    # round table sizes up so that nearby queries share one table
    lmax = max(16, -(-(ell + 1) // 16) * 16)
    kmax = max(16, -(-k // 16) * 16)
    return BesselRoot(ell, k, float(_root_table(lmax, kmax)[ell, k - 1]))


@lru_cache(maxsize=8)
def roots_below(bandlimit: float) -> tuple:
    """All roots of j_ell not exceeding ``bandlimit``, grouped by degree.

    Returns a tuple whose entry ``ell`` is a read-only array of the roots
    ``lam_{ell,1} < lam_{ell,2} < ...`` that are <= bandlimit. The tuple ends
    at the first degree with no such root.
    """
    bandlimit = float(bandlimit)
    kcount = int(math.floor(bandlimit / math.pi))
    if kcount < 1:
        return ()
    # roots of j_0 up to the bandlimit plus the first one beyond
    level = np.pi * np.arange(1, kcount + 2)
    out = []
    l = 0
    while True:
        keep = level[level <= bandlimit]
        if keep.size == 0:
            break
        keep = keep.copy()
        keep.setflags(write=False)
        out.append(keep)
        l += 1
        nxt = _next_level(l, level, level.size)
        inside = int(np.count_nonzero(nxt <= bandlimit))
        level = nxt[: inside + 1]
    return tuple(out)


def norm_const(root: BesselRoot | tuple) -> float:
    """Normalization constant making the ball harmonic unit norm on the ball.

    Equals ``sqrt(2) / |j_{ell+1}(lam)|``, which is the same quantity as
    ``2 sqrt(lam) / (sqrt(pi) |J'_{ell+1/2}(lam)|)``.
    """
    if isinstance(root, BesselRoot):
        ell, lam = root.ell, root.lam
    else:
        ell, lam = root
    return math.sqrt(2.0) / abs(_jn_scalar(int(ell) + 1, float(lam)))


@nb.njit(cache=True)
def _norm_consts(ell, lam, out):
    for i in range(ell.size):
        out[i] = math.sqrt(2.0) / abs(_jn_scalar(ell[i] + 1, lam[i]))


def norm_consts(ell, lam) -> np.ndarray:
    """Vectorized :func:`norm_const` over arrays of degrees and roots."""
    ell = np.ascontiguousarray(ell, dtype=np.int64)
    lam = np.ascontiguousarray(lam, dtype=np.float64)
    out = np.empty(lam.shape)
    _norm_consts(ell, lam, out)
    return out


# ---------------------------------------------------------------------------
# normalized associated Legendre functions
# ---------------------------------------------------------------------------


@nb.njit(cache=True)
def _legendre_order(m, lmax, x, sx, out):
    """Fill ``out[p, l - m] = Pbar_l^m(x_p)`` for l = m..lmax.

    The sectoral seed is carried as a log-magnitude so that high orders do not
    underflow before the recurrence in l brings the values back into range.
    """
    logc = 0.5 * math.log((2.0 * m + 1.0) / (4.0 * math.pi))
    for k in range(1, m + 1):
        logc += 0.5 * math.log((2.0 * k - 1.0) / (2.0 * k))
    sign0 = -1.0 if m % 2 == 1 else 1.0
    nl = lmax - m + 1
    big = 1e150
    logbig = math.log(big)
    for p in range(x.size):
        xp = x[p]
        s = sx[p]
        if m > 0 and s <= 0.0:
            for i in range(nl):
                out[p, i] = 0.0
            continue
        e = logc + (m * math.log(s) if m > 0 else 0.0)
        pm2 = sign0
        out[p, 0] = pm2 * math.exp(e)
        if nl == 1:
            continue
        pm1 = math.sqrt(2.0 * m + 3.0) * xp * pm2
        out[p, 1] = pm1 * math.exp(e)
        for l in range(m + 2, lmax + 1):
            a = math.sqrt((4.0 * l * l - 1.0) / (l * l - m * m))
            b = math.sqrt(((l - 1.0) ** 2 - m * m) / (4.0 * (l - 1.0) ** 2 - 1.0))
            cur = a * (xp * pm1 - b * pm2)
            pm2 = pm1
            pm1 = cur
            if abs(cur) > big:
                pm1 /= big
                pm2 /= big
                e += logbig
            out[p, l - m] = pm1 * math.exp(e)


def legendre_order(m: int, lmax: int, x, sx=None) -> np.ndarray:
    """Normalized Legendre values ``Pbar_l^m(x)`` for l = m..lmax.

    Parameters
    ----------
    m : int
        Order, 0 <= m <= lmax.
    lmax : int
        Largest degree.
    x : array_like
        Cosines of the polar angle.
    sx : array_like, optional
        Sines of the polar angle. Passing them avoids the cancellation in
        ``sqrt(1 - x**2)`` near the poles.

    Returns
    -------
    numpy.ndarray
        Array of shape ``(len(x), lmax - m + 1)``.
    """
    x = np.ascontiguousarray(x, dtype=np.float64).ravel()
    if sx is None:
        sx = np.sqrt(np.maximum(0.0, 1.0 - x * x))
    sx = np.ascontiguousarray(sx, dtype=np.float64).ravel()
    if m < 0 or m > lmax:
        raise ValueError("need 0 <= m <= lmax")
    out = np.empty((x.size, lmax - m + 1))
    _legendre_order(int(m), int(lmax), x, sx, out)
    return out


def sph_harm(ell: int, m: int, theta, phi):
    """Spherical harmonic ``Y_ell^m(theta, phi)`` with Condon-Shortley phase."""
    if abs(m) > ell:
        raise ValueError("need |m| <= ell")
    theta = np.asarray(theta, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    shape = np.broadcast(theta, phi).shape
    th = np.broadcast_to(theta, shape).ravel()
    ph = np.broadcast_to(phi, shape).ravel()
    mu = abs(m)
    p = legendre_order(mu, ell, np.cos(th), np.abs(np.sin(th)))[:, -1]
    if m < 0 and mu % 2 == 1:
        p = -p
    out = p * np.exp(1j * m * ph)
    if len(shape) == 0:
        return complex(out[0])
    return out.reshape(shape)


def cart_to_sph(x):
    """Radius, polar angle and azimuth of points given as ``(..., 3)``.

    The azimuth lies in [0, 2 pi). The origin maps to angles (0, 0).
    """
    x = np.asarray(x, dtype=np.float64)
    r = np.linalg.norm(x, axis=-1)
    rxy = np.hypot(x[..., 0], x[..., 1])
    theta = np.arctan2(rxy, x[..., 2])
    phi = np.mod(np.arctan2(x[..., 1], x[..., 0]), 2 * np.pi)
    return r, theta, phi


def plane_wave_partial_sum(x, omega, ell_max: int) -> complex:
    """Truncated expansion of ``exp(i x . omega)`` in spherical harmonics.

    Computes ``4 pi sum_{l<=ell_max} i^l j_l(|x||omega|)
    sum_m Y_l^m(x/|x|) conj(Y_l^m(omega/|omega|))``.
    """
    rx, tx, px = cart_to_sph(np.asarray(x, dtype=np.float64))
    rw, tw, pw = cart_to_sph(np.asarray(omega, dtype=np.float64))
    total = 0.0 + 0.0j
    arg = float(rx * rw)
    for l in range(int(ell_max) + 1):
        ang = 0.0 + 0.0j
        for m in range(-l, l + 1):
            ang += sph_harm(l, m, tx, px) * np.conj(sph_harm(l, m, tw, pw))
        total += (1j ** l) * _jn_scalar(l, arg) * ang
    return complex(4 * np.pi * total)


# ---------------------------------------------------------------------------
# real / complex coefficient conversion
# ---------------------------------------------------------------------------


def _partner_positions(index):
    k = np.asarray(index.k)
    ell = np.asarray(index.ell)
    m = np.asarray(index.m)
    lookup = {key: i for i, key in enumerate(zip(k.tolist(), ell.tolist(), m.tolist()))}
    neg, pos, mu = [], [], []
    for i in range(k.size):
        if m[i] > 0:
            j = lookup.get((int(k[i]), int(ell[i]), -int(m[i])))
            if j is None:
                raise ValueError("coefficient index lacks the partner of (k=%d, l=%d, m=%d)"
                                 % (k[i], ell[i], m[i]))
            neg.append(j)
            pos.append(i)
            mu.append(int(m[i]))
    n_neg = int(np.count_nonzero(m < 0))
    if n_neg != len(neg):
        raise ValueError("coefficient index has unpaired negative orders")
    return np.array(neg, dtype=np.int64), np.array(pos, dtype=np.int64), np.array(mu)


def real_complex_coeff_convert(coeffs, index, to: str = "real") -> np.ndarray:
    """Convert between complex and real ball-harmonic coefficients.

    Each pair of orders ``(-mu, mu)`` of one (k, l) is mixed by the unitary
    matrix ``T = [[i, -i (-1)^mu], [1, (-1)^mu]] / sqrt(2)``. Real
    coefficients are ``conj(T) @ alpha`` and the inverse is ``T.T @ alpha_r``.
    The m = 0 entries are unchanged. For a real-valued volume the real
    coefficients have zero imaginary part.

    Parameters
    ----------
    coeffs : array_like
        Complex coefficients aligned with ``index``.
    index : BasisIndex
        Anything exposing integer arrays ``k``, ``ell`` and ``m``.
    to : {"real", "complex"}
        Target representation.
    """
    a = np.asarray(coeffs, dtype=np.complex128)
    if a.shape[0] != len(index.m):
        raise ValueError("coefficient vector does not match the index length")
    neg, pos, mu = _partner_positions(index)
    sgn = np.where(mu % 2 == 1, -1.0, 1.0)
    r2 = 1.0 / np.sqrt(2.0)
    out = a.copy()
    x_neg, x_pos = a[neg], a[pos]
    if to == "real":
        out[neg] = r2 * (-1j * x_neg + 1j * sgn * x_pos)
        out[pos] = r2 * (x_neg + sgn * x_pos)
    elif to == "complex":
        out[neg] = r2 * (1j * x_neg + x_pos)
        out[pos] = r2 * sgn * (-1j * x_neg + x_pos)
    else:
        raise ValueError("to must be 'real' or 'complex'")
    return out
