"""Spherical harmonic transforms on a :class:`~ballharm.grids.SphereGrid`.

Coefficients are stored packed, entry ``l*l + l + m`` holding degree l and
order m, so a batch of transforms is an array of shape ``(B, (L+1)**2)``.
Sampled functions have shape ``(B, S+1, S)`` (polar index, azimuth index).
"""
from __future__ import annotations

import numpy as np
import scipy.fft as sfft

from .grids import SphereGrid
from .special_fn import legendre_order


def packed_index(ell, m):
    """Position of ``(ell, m)`` in the packed layout."""
    return np.asarray(ell) ** 2 + np.asarray(ell) + np.asarray(m)


class ShtPlan:
    """Legendre tables for a sphere grid and a maximal degree L <= S/2.

    Parameters
    ----------
    sphere : SphereGrid
    L : int
        Largest degree handled.
    workers : int, optional
        Threads for the azimuthal FFTs.
    """

    def __init__(self, sphere: SphereGrid, L: int, workers: int | None = None):
        if L < 0:
            raise ValueError("L must be non-negative")
        if 2 * L > sphere.S:
            raise ValueError("need L <= S/2 (L=%d, S=%d)" % (L, sphere.S))
        self.sphere = sphere
        self.L = int(L)
        self.S = sphere.S
        self.workers = workers
        ct = np.cos(sphere.theta)
        st = np.sin(sphere.theta)
        ct[0], ct[-1] = 1.0, -1.0
        st[0], st[-1] = 0.0, 0.0
        # per order m: (S+1, L-m+1) table of Pbar_l^m(cos theta_s)
        self.legendre = [legendre_order(m, self.L, ct, st) for m in range(self.L + 1)]
        self._pos = [packed_index(np.arange(m, self.L + 1), m) for m in range(self.L + 1)]
        self._neg = [packed_index(np.arange(m, self.L + 1), -m) for m in range(self.L + 1)]

    @property
    def ncoeff(self) -> int:
        return (self.L + 1) ** 2


def sht_analysis(plan: ShtPlan, a, weights=None) -> np.ndarray:
    """Quadrature ``sum_{s,t} w_s a[s, t] conj(Y_l^m(gamma_st))``.

    Parameters
    ----------
    plan : ShtPlan
    a : array_like
        Samples of shape ``(S+1, S)`` or ``(B, S+1, S)``.
    weights : array_like, optional
        Polar weights, defaults to the grid's quadrature weights.

    Returns
    -------
    numpy.ndarray
        Packed coefficients of shape ``((L+1)**2,)`` or ``(B, (L+1)**2)``.
    """
    a = np.asarray(a)
    single = a.ndim == 2
    if single:
        a = a[None]
    S = plan.S
    w = plan.sphere.weights if weights is None else np.asarray(weights)
    # the azimuthal sum with exp(-i m phi_t) is a forward FFT
    A = sfft.fft(a, axis=-1, workers=plan.workers) * w[None, :, None]
    B = A.shape[0]
    out = np.zeros((B, plan.ncoeff), dtype=np.complex128)
    for m in range(plan.L + 1):
        P = plan.legendre[m]
        pos = A[:, :, m % S]
        if m == 0:
            stacked = np.concatenate([pos.real, pos.imag])
            r = stacked @ P
            out[:, plan._pos[0]] = r[:B] + 1j * r[B:]
            continue
        neg = A[:, :, (-m) % S]
        stacked = np.concatenate([pos.real, pos.imag, neg.real, neg.imag])
        r = stacked @ P
        out[:, plan._pos[m]] = r[:B] + 1j * r[B:2 * B]
        sgn = -1.0 if m % 2 else 1.0
        out[:, plan._neg[m]] = sgn * (r[2 * B:3 * B] + 1j * r[3 * B:])
    return out[0] if single else out


def sht_synthesis(plan: ShtPlan, beta) -> np.ndarray:
    """Evaluate ``sum_{l,m} beta_lm Y_l^m(gamma_st)`` on the grid.

    Parameters
    ----------
    plan : ShtPlan
    beta : array_like
        Packed coefficients, shape ``((L+1)**2,)`` or ``(B, (L+1)**2)``.

    Returns
    -------
    numpy.ndarray
        Samples of shape ``(S+1, S)`` or ``(B, S+1, S)``.
    """
    beta = np.asarray(beta, dtype=np.complex128)
    single = beta.ndim == 1
    if single:
        beta = beta[None]
    S = plan.S
    B = beta.shape[0]
    G = np.zeros((B, S + 1, S), dtype=np.complex128)
    for m in range(plan.L + 1):
        PT = plan.legendre[m].T
        bp = beta[:, plan._pos[m]]
        if m == 0:
            stacked = np.concatenate([bp.real, bp.imag])
            r = stacked @ PT
            G[:, :, 0] += r[:B] + 1j * r[B:]
            continue
        sgn = -1.0 if m % 2 else 1.0
        bn = sgn * beta[:, plan._neg[m]]
        stacked = np.concatenate([bp.real, bp.imag, bn.real, bn.imag])
        r = stacked @ PT
        G[:, :, m % S] += r[:B] + 1j * r[B:2 * B]
        G[:, :, (-m) % S] += r[2 * B:3 * B] + 1j * r[3 * B:]
    a = sfft.ifft(G, axis=-1, norm="forward", workers=plan.workers)
    return a[0] if single else a
