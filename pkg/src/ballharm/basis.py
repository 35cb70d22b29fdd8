"""Enumeration of the ball-harmonic basis below a bandlimit."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .special_fn import norm_consts, roots_below

_BANDLIMIT_FACTOR = 6.0 ** (1.0 / 3.0) * np.pi ** (2.0 / 3.0)


def bandlimit_max(N: int) -> float:
    """Largest admissible bandlimit for an N^3 voxel grid."""
    return float(_BANDLIMIT_FACTOR * ((int(N) + 1) // 2))


def bandlimit_default(N: int) -> float:
    """Bandlimit used when none is given: ``pi N / 2``."""
    return float(np.pi * int(N) / 2.0)


def weyl_estimate(bandlimit: float) -> float:
    """Asymptotic basis size ``2 lam^3 / (9 pi) - lam^2 / 4``."""
    lam = float(bandlimit)
    return 2.0 * lam ** 3 / (9.0 * np.pi) - lam ** 2 / 4.0


def _m_rank(m: np.ndarray) -> np.ndarray:
    # 0, -1, 1, -2, 2, ...
    return 2 * np.abs(m) - (m < 0)


@dataclass(frozen=True)
class BasisIndex:
    """Ordered list of basis functions ``(k, ell, m)`` with their roots.

    Entries are sorted by ``(lam, ell, k, m-rank)`` where the m-rank orders the
    orders as 0, -1, 1, -2, 2, ... All ``2 ell + 1`` orders of a retained
    ``(ell, k)`` pair are present.

    Attributes
    ----------
    k, ell, m : numpy.ndarray
        Integer arrays of length ``n``.
    lam : numpy.ndarray
        Root ``lam_{ell k}`` of every entry.
    c : numpy.ndarray
        Normalization constant of every entry.
    bandlimit : float
    warning : str or None
        Set when the index is empty.
    """

    k: np.ndarray
    ell: np.ndarray
    m: np.ndarray
    lam: np.ndarray
    c: np.ndarray
    bandlimit: float
    warning: str | None = None
    _pos: dict = field(default=None, repr=False, compare=False)

    @property
    def n(self) -> int:
        return int(self.k.size)

    def __len__(self) -> int:
        return self.n

    @property
    def L(self) -> int:
        """Largest degree present, -1 for an empty index."""
        return int(self.ell.max()) if self.n else -1

    @property
    def K(self) -> int:
        """Largest radial index present, 0 for an empty index."""
        return int(self.k.max()) if self.n else 0

    @property
    def lam_min(self) -> float:
        return float(self.lam.min()) if self.n else float("nan")

    @property
    def lam_max(self) -> float:
        return float(self.lam.max()) if self.n else float("nan")

    def position(self, k: int, ell: int, m: int) -> int:
        """Position of ``(k, ell, m)`` in the ordering."""
        if self._pos is None:
            pos = {key: i for i, key in enumerate(
                zip(self.k.tolist(), self.ell.tolist(), self.m.tolist()))}
            object.__setattr__(self, "_pos", pos)
        return self._pos[(int(k), int(ell), int(m))]

    def entries(self):
        """Iterate over ``(k, ell, m, lam)`` tuples in order."""
        for i in range(self.n):
            yield int(self.k[i]), int(self.ell[i]), int(self.m[i]), float(self.lam[i])

    def roots_of_degree(self, ell: int) -> np.ndarray:
        """Sorted distinct roots of degree ``ell`` present in the index."""
        sel = (self.ell == ell) & (self.m == 0)
        order = np.argsort(self.k[sel])
        return self.lam[sel][order]

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "bandlimit": self.bandlimit,
            "L": self.L,
            "K": self.K,
            "lam_min": None if self.n == 0 else self.lam_min,
            "lam_max": None if self.n == 0 else self.lam_max,
        }


def build_index(bandlimit: float, caps: tuple | None = None) -> BasisIndex:
    """Enumerate all ``(k, ell, m)`` with ``lam_{ell k} <= bandlimit``.

    Parameters
    ----------
    bandlimit : float
        Cut-off on the roots.
    caps : tuple of (int or None, int or None), optional
        Optional upper bounds ``(L_cap, K_cap)`` on degree and radial index.

    Returns
    -------
    BasisIndex
        Possibly empty, in which case ``warning`` explains why.
    """
    bandlimit = float(bandlimit)
    if not math.isfinite(bandlimit):
        raise ValueError("bandlimit must be finite")
    lcap, kcap = (None, None) if caps is None else caps
    levels = roots_below(bandlimit) if bandlimit >= np.pi else ()
    ells, ks, lams = [], [], []
    for l, roots in enumerate(levels):
        if lcap is not None and l > lcap:
            break
        kk = np.arange(1, roots.size + 1)
        if kcap is not None:
            kk = kk[kk <= kcap]
        ells.append(np.full(kk.size, l))
        ks.append(kk)
        lams.append(roots[: kk.size])
    if not ells or sum(a.size for a in ells) == 0:
        msg = "no basis function has lam <= %.6g (smallest root is pi)" % bandlimit
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        z = np.zeros(0, dtype=np.int64)
        return BasisIndex(z, z, z, np.zeros(0), np.zeros(0), bandlimit, msg)
    pl = np.concatenate(ells).astype(np.int64)
    pk = np.concatenate(ks).astype(np.int64)
    plam = np.concatenate(lams)
    pc = norm_consts(pl, plam)
    # expand every (ell, k) pair into its 2 ell + 1 orders
    reps = 2 * pl + 1
    ell = np.repeat(pl, reps)
    k = np.repeat(pk, reps)
    lam = np.repeat(plam, reps)
    c = np.repeat(pc, reps)
    starts = np.repeat(np.cumsum(reps) - reps, reps)
    rank = np.arange(ell.size) - starts
    m = np.where(rank % 2 == 1, -(rank + 1) // 2, rank // 2)
    order = np.lexsort((_m_rank(m), k, ell, lam))
    arrays = [a[order] for a in (k, ell, m, lam, c)]
    for a in arrays:
        a.setflags(write=False)
    return BasisIndex(*arrays, bandlimit=bandlimit)
