"""File formats: raw volumes with a JSON sidecar, coefficient files, MRC2014.

All native formats are little-endian regardless of the host. Volumes are
arrays of shape ``(N, N, N)`` indexed ``f[x, y, z]``.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from .basis import BasisIndex, _m_rank
from .special_fn import norm_consts, roots_below


class FormatError(ValueError):
    """Base class for malformed input files."""


class MagicError(FormatError):
    pass


class OrderingError(FormatError):
    pass


class MembershipError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class NonCubicError(FormatError):
    pass


class UnsupportedModeError(FormatError):
    pass


# ---------------------------------------------------------------------------
# raw volumes
# ---------------------------------------------------------------------------

_KINDS = {"f32": "<f4", "f64": "<f8"}


def sidecar_path(path) -> str:
    return os.fspath(path) + ".json"


def write_raw_volume(path, f, kind: str | None = None) -> None:
    """Write ``f`` as little-endian scalars plus a ``<path>.json`` sidecar.

    Complex volumes are stored interleaved (re, im). ``kind`` defaults to
    ``"f32"`` for single-precision input and ``"f64"`` otherwise.
    """
    f = np.asarray(f)
    if f.ndim != 3 or len(set(f.shape)) != 1:
        raise NonCubicError("volume must have shape (N, N, N), got %s" % (f.shape,))
    is_complex = np.iscomplexobj(f)
    if kind is None:
        kind = "f32" if f.dtype in (np.float32, np.complex64) else "f64"
    if kind not in _KINDS:
        raise ValueError("kind must be 'f32' or 'f64'")
    dt = np.dtype(_KINDS[kind])
    if is_complex:
        payload = np.empty(f.shape + (2,), dtype=dt)
        payload[..., 0] = f.real
        payload[..., 1] = f.imag
    else:
        payload = np.ascontiguousarray(f, dtype=dt)
    header = {"n": list(f.shape), "kind": kind, "complex": bool(is_complex), "order": "lex"}
    with open(path, "wb") as fh:
        fh.write(payload.tobytes(order="C"))
    with open(sidecar_path(path), "w") as fh:
        json.dump(header, fh)


def read_raw_volume(path) -> np.ndarray:
    """Read a volume written by :func:`write_raw_volume`."""
    with open(sidecar_path(path)) as fh:
        try:
            header = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError("bad sidecar: %s" % exc) from None
    try:
        shape = tuple(int(x) for x in header["n"])
        dt = np.dtype(_KINDS[header["kind"]])
        cplx = bool(header["complex"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError("bad sidecar field: %s" % exc) from None
    if header.get("order", "lex") != "lex":
        raise FormatError("unsupported ordering %r" % header["order"])
    if len(shape) != 3 or len(set(shape)) != 1:
        raise NonCubicError("volume must be cubic, got %s" % (shape,))
    count = int(np.prod(shape)) * (2 if cplx else 1)
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) != count * dt.itemsize:
        raise TruncatedError("expected %d payload bytes, found %d"
                             % (count * dt.itemsize, len(data)))
    vals = np.frombuffer(data, dtype=dt)
    if cplx:
        vals = vals.reshape(shape + (2,))
        out = np.empty(shape, dtype=np.complex64 if dt.itemsize == 4 else np.complex128)
        out.real = vals[..., 0]
        out.imag = vals[..., 1]
        return out
    return vals.reshape(shape).astype(dt.newbyteorder("="))


# ---------------------------------------------------------------------------
# coefficient files
# ---------------------------------------------------------------------------

MAGIC = b"BHC1"
VERSION = 1
FLAG_REAL_BASIS = 1
_HEAD = struct.Struct("<4sHHdI")
RECORD_DTYPE = np.dtype([("k", "<u4"), ("ell", "<u4"), ("m", "<i4"),
                         ("re", "<f8"), ("im", "<f8")])


@dataclass
class CoeffVector:
    """Coefficients together with their basis index.

    ``basis`` is ``"complex"`` or ``"real"``.
    """

    index: BasisIndex
    values: np.ndarray
    basis: str = "complex"


def write_coeffs(path, cv: CoeffVector) -> None:
    """Write a ``BHC1`` coefficient file."""
    idx = cv.index
    vals = np.asarray(cv.values, dtype=np.complex128)
    if vals.shape != (idx.n,):
        raise ValueError("coefficient vector does not match its index")
    if cv.basis not in ("complex", "real"):
        raise ValueError("basis must be 'complex' or 'real'")
    flags = FLAG_REAL_BASIS if cv.basis == "real" else 0
    rec = np.empty(idx.n, dtype=RECORD_DTYPE)
    rec["k"] = idx.k
    rec["ell"] = idx.ell
    rec["m"] = idx.m
    rec["re"] = vals.real
    rec["im"] = vals.imag
    with open(path, "wb") as fh:
        fh.write(_HEAD.pack(MAGIC, VERSION, flags, float(idx.bandlimit), idx.n))
        fh.write(rec.tobytes())


def read_coeffs(path) -> CoeffVector:
    """Read and re-validate a ``BHC1`` coefficient file.

    Raises
    ------
    MagicError, TruncatedError, MembershipError, OrderingError
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEAD.size:
        raise TruncatedError("file shorter than the header")
    magic, version, flags, bandlimit, n = _HEAD.unpack_from(data)
    if magic != MAGIC:
        raise MagicError("bad magic %r" % magic)
    if version != VERSION:
        raise FormatError("unsupported version %d" % version)
    body = data[_HEAD.size:]
    if len(body) != n * RECORD_DTYPE.itemsize:
        raise TruncatedError("expected %d records" % n)
    rec = np.frombuffer(body, dtype=RECORD_DTYPE)
    k = rec["k"].astype(np.int64)
    ell = rec["ell"].astype(np.int64)
    m = rec["m"].astype(np.int64)
    levels = roots_below(bandlimit) if bandlimit >= np.pi else ()
    nroots = np.array([lv.size for lv in levels] + [0], dtype=np.int64)
    ell_c = np.minimum(ell, len(levels))
    bad = (k < 1) | (np.abs(m) > ell) | (k > nroots[ell_c])
    if np.any(bad):
        i = int(np.argmax(bad))
        raise MembershipError("record %d (k=%d, ell=%d, m=%d) is not in the basis at "
                              "bandlimit %.6g" % (i, k[i], ell[i], m[i], bandlimit))
    lam = np.array([levels[l][kk - 1] for l, kk in zip(ell.tolist(), k.tolist())],
                   dtype=np.float64)
    if n > 1:
        keys = np.stack([lam, ell, k, _m_rank(m)], axis=1)
        d = np.diff(keys, axis=0)
        # strict lexicographic increase of (lam, ell, k, m-rank)
        first = np.argmax(d != 0, axis=1)
        step = d[np.arange(n - 1), first]
        if np.any(step <= 0):
            i = int(np.argmax(step <= 0))
            raise OrderingError("records %d and %d are out of order" % (i, i + 1))
    c = norm_consts(ell, lam) if n else np.zeros(0)
    arrays = [k, ell, m, lam, c]
    for a in arrays:
        a.setflags(write=False)
    index = BasisIndex(*arrays, bandlimit=float(bandlimit))
    values = rec["re"] + 1j * rec["im"]
    return CoeffVector(index, values, "real" if flags & FLAG_REAL_BASIS else "complex")


# ---------------------------------------------------------------------------
# MRC2014
# ---------------------------------------------------------------------------

_MRC_HEADER = 1024
_STAMP_LE = b"\x44\x44\x00\x00"
_STAMP_BE = b"\x11\x11\x00\x00"


def _mrc_endian(head: bytes) -> str:
    stamp = head[212:214]
    if stamp in (b"\x44\x44", b"\x44\x41"):
        return "<"
    if stamp == b"\x11\x11":
        return ">"
    # no usable stamp: pick the byte order giving a plausible mode
    mode_le = struct.unpack_from("<i", head, 12)[0]
    return "<" if 0 <= mode_le < 32 else ">"


def read_mrc(path) -> np.ndarray:
    """Read a mode-2 cubic MRC2014 map as a float32 ``(N, N, N)`` array.

    The axis mapping fields are honoured so that ``out[x, y, z]`` follows the
    lexicographic convention. Pixel size and origin are ignored.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _MRC_HEADER:
        raise TruncatedError("file shorter than the 1024-byte MRC header")
    e = _mrc_endian(data)
    nx, ny, nz, mode = struct.unpack_from(e + "4i", data, 0)
    mapc, mapr, maps = struct.unpack_from(e + "3i", data, 64)
    nsymbt = struct.unpack_from(e + "i", data, 92)[0]
    if mode != 2:
        raise UnsupportedModeError("MRC mode %d is not supported (only mode 2, float32)" % mode)
    if not (nx == ny == nz) or nx < 1:
        raise NonCubicError("MRC map is %dx%dx%d, only cubic maps are supported" % (nx, ny, nz))
    if sorted((mapc, mapr, maps)) != [1, 2, 3]:
        raise FormatError("invalid axis mapping (%d, %d, %d)" % (mapc, mapr, maps))
    start = _MRC_HEADER + max(nsymbt, 0)
    nbytes = 4 * nx * ny * nz
    if len(data) < start + nbytes:
        raise TruncatedError("MRC payload truncated: need %d bytes, have %d"
                             % (nbytes, len(data) - start))
    arr = np.frombuffer(data, dtype=e + "f4", count=nx * ny * nz, offset=start)
    arr = arr.reshape(nz, ny, nx)  # (sections, rows, columns)
    stored = (maps - 1, mapr - 1, mapc - 1)
    perm = [stored.index(d) for d in range(3)]
    return np.ascontiguousarray(arr.transpose(perm), dtype=np.float32)


def write_mrc(path, f, big_endian: bool = False) -> None:
    """Write a cubic real volume as a mode-2 MRC2014 file.

    Columns run along x, rows along y and sections along z.
    """
    f = np.asarray(f)
    if np.iscomplexobj(f):
        raise ValueError("MRC files hold real data only")
    if f.ndim != 3 or len(set(f.shape)) != 1:
        raise NonCubicError("volume must have shape (N, N, N), got %s" % (f.shape,))
    e = ">" if big_endian else "<"
    N = f.shape[0]
    vals = np.asarray(f, dtype=np.float32)
    head = bytearray(_MRC_HEADER)
    struct.pack_into(e + "10i", head, 0, N, N, N, 2, 0, 0, 0, N, N, N)
    struct.pack_into(e + "6f", head, 40, N, N, N, 90.0, 90.0, 90.0)
    struct.pack_into(e + "3i", head, 64, 1, 2, 3)
    struct.pack_into(e + "3f", head, 76, float(vals.min()), float(vals.max()),
                     float(vals.mean(dtype=np.float64)))
    struct.pack_into(e + "2i", head, 88, 1, 0)
    head[104:108] = b"MRCO"
    struct.pack_into(e + "i", head, 108, 20140)
    head[208:212] = b"MAP "
    head[212:216] = _STAMP_BE if big_endian else _STAMP_LE
    struct.pack_into(e + "f", head, 216, float(vals.std(dtype=np.float64)))
    payload = vals.transpose(2, 1, 0).astype(e + "f4")
    with open(path, "wb") as fh:
        fh.write(bytes(head))
        fh.write(payload.tobytes(order="C"))


def read_volume(path) -> np.ndarray:
    """Read an MRC map (``.mrc``/``.map``) or a raw volume with sidecar."""
    p = os.fspath(path)
    if p.lower().endswith((".mrc", ".map", ".mrcs")):
        return read_mrc(p)
    return read_raw_volume(p)


def write_volume(path, f) -> None:
    """Write to MRC when the extension asks for it and ``f`` is real, else raw."""
    p = os.fspath(path)
    if p.lower().endswith((".mrc", ".map")):
        if np.iscomplexobj(f):
            f = np.real(f)
        write_mrc(p, f)
    else:
        write_raw_volume(p, f)
