import hashlib
import json
import struct
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st, HealthCheck

from ballharm.basis import build_index
from ballharm.io import (
    RECORD_DTYPE,
    CoeffVector,
    MagicError,
    MembershipError,
    NonCubicError,
    OrderingError,
    TruncatedError,
    UnsupportedModeError,
    read_coeffs,
    read_mrc,
    read_raw_volume,
    read_volume,
    write_coeffs,
    write_mrc,
    write_raw_volume,
)

DATA = Path(__file__).parent / "data"
HEADER = 4 + 2 + 2 + 8 + 4
FS = [HealthCheck.function_scoped_fixture]


# --- raw volumes ---------------------------------------------------------------


@settings(max_examples=20, suppress_health_check=FS)
@given(st.integers(1, 9), st.sampled_from(["f32", "f64"]), st.booleans(), st.integers(0, 2 ** 31))
def test_raw_round_trip(tmp_path, N, kind, cplx, seed):
    r = np.random.default_rng(seed)
    f = r.normal(size=(N, N, N))
    if cplx:
        f = f + 1j * r.normal(size=(N, N, N))
    if kind == "f32":
        f = f.astype(np.complex64 if cplx else np.float32)
    path = tmp_path / "v.raw"
    write_raw_volume(path, f, kind)
    g = read_raw_volume(path)
    assert g.dtype == f.dtype
    assert np.array_equal(g, f)
    header = json.loads(Path(str(path) + ".json").read_text())
    assert header["order"] == "lex" and header["complex"] == cplx
    width = 4 if kind == "f32" else 8
    assert path.stat().st_size == N ** 3 * width * (2 if cplx else 1)


def test_raw_is_little_endian_interleaved(tmp_path):
    f = np.zeros((2, 2, 2), dtype=complex)
    f[0, 0, 1] = 1.5 - 2j
    write_raw_volume(tmp_path / "v", f)
    data = (tmp_path / "v").read_bytes()
    assert struct.unpack_from("<2d", data, 16) == (1.5, -2.0)


def test_raw_truncated(tmp_path):
    write_raw_volume(tmp_path / "v", np.ones((3, 3, 3)))
    p = tmp_path / "v"
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(TruncatedError):
        read_raw_volume(p)


def test_raw_rejects_noncubic(tmp_path):
    with pytest.raises(NonCubicError):
        write_raw_volume(tmp_path / "v", np.ones((2, 3, 3)))


# --- coefficient files ------------------------------------------------------------


def _cv(lam, seed, basis="complex"):
    idx = build_index(lam)
    r = np.random.default_rng(seed)
    return CoeffVector(idx, r.normal(size=idx.n) + 1j * r.normal(size=idx.n), basis)


@settings(max_examples=15, suppress_health_check=FS)
@given(st.floats(3.2, 25.0), st.integers(0, 2 ** 31), st.sampled_from(["complex", "real"]))
def test_coeff_round_trip_bitwise(tmp_path, lam, seed, basis):
    cv = _cv(lam, seed, basis)
    write_coeffs(tmp_path / "c.bhc", cv)
    back = read_coeffs(tmp_path / "c.bhc")
    assert back.basis == basis
    assert back.index.bandlimit == cv.index.bandlimit
    assert back.values.tobytes() == cv.values.tobytes()
    for name in ("k", "ell", "m", "lam", "c"):
        assert np.array_equal(getattr(back.index, name), getattr(cv.index, name))


def test_coeff_layout(tmp_path):
    cv = _cv(4.6, 0)
    write_coeffs(tmp_path / "c", cv)
    data = (tmp_path / "c").read_bytes()
    assert data[:4] == b"BHC1"
    version, flags, lam, n = struct.unpack_from("<HHdI", data, 4)
    assert (version, flags, lam, n) == (1, 0, 4.6, 4)
    assert RECORD_DTYPE.itemsize == 28
    assert len(data) == HEADER + 4 * 28
    k, l, m, re, im = struct.unpack_from("<IIidd", data, HEADER + 2 * 28)
    assert (k, l, m) == (1, 1, -1) and re == cv.values[2].real


def test_empty_coeff_file(tmp_path):
    with pytest.warns(RuntimeWarning):
        cv = _cv(3.0, 0)
    write_coeffs(tmp_path / "c", cv)
    assert read_coeffs(tmp_path / "c").index.n == 0


def test_corrupted_magic(tmp_path):
    write_coeffs(tmp_path / "c", _cv(10.0, 1))
    p = tmp_path / "c"
    p.write_bytes(b"XHC1" + p.read_bytes()[4:])
    with pytest.raises(MagicError):
        read_coeffs(p)


def test_shuffled_records(tmp_path):
    write_coeffs(tmp_path / "c", _cv(10.0, 2))
    p = tmp_path / "c"
    data = p.read_bytes()
    rec = np.frombuffer(data[HEADER:], dtype=RECORD_DTYPE).copy()
    np.random.default_rng(0).shuffle(rec)
    p.write_bytes(data[:HEADER] + rec.tobytes())
    with pytest.raises(OrderingError):
        read_coeffs(p)


def test_membership_violation(tmp_path):
    write_coeffs(tmp_path / "c", _cv(10.0, 3))
    p = tmp_path / "c"
    data = bytearray(p.read_bytes())
    # lower the stored bandlimit below the last root
    struct.pack_into("<d", data, 8, 9.0)
    p.write_bytes(bytes(data))
    with pytest.raises(MembershipError):
        read_coeffs(p)


def test_truncated_coeffs(tmp_path):
    write_coeffs(tmp_path / "c", _cv(10.0, 4))
    p = tmp_path / "c"
    p.write_bytes(p.read_bytes()[:-3])
    with pytest.raises(TruncatedError):
        read_coeffs(p)


# --- MRC -------------------------------------------------------------------------


def test_mrc_round_trip_bitwise(tmp_path, rng):
    f = rng.normal(size=(8, 8, 8)).astype(np.float32)
    for be in (False, True):
        write_mrc(tmp_path / "m.mrc", f, big_endian=be)
        g = read_mrc(tmp_path / "m.mrc")
        assert g.tobytes() == f.tobytes()


def test_big_endian_fixture():
    path = DATA / "be_2cube.mrc"
    digest = hashlib.sha256(path.read_bytes()).hexdigest()
    assert digest == "9ad89f7730503cd157c5aca8217d53e285a96d3962b3f649ac435e5adb299edb"
    vals = np.array([0.5, -1.25, 3.0, 1e-3, -7.5, 2.0 ** -10, 100.0, -0.0625], dtype=np.float32)
    f = read_mrc(path)
    for x in range(2):
        for y in range(2):
            for z in range(2):
                assert f[x, y, z] == vals[4 * z + 2 * y + x]


def _header(mode=2, dims=(4, 4, 4), axes=(1, 2, 3)):
    head = bytearray(1024)
    struct.pack_into("<4i", head, 0, *dims, mode)
    struct.pack_into("<3i", head, 64, *axes)
    head[212:216] = b"\x44\x44\x00\x00"
    return head


def test_mrc_unsupported_mode(tmp_path):
    p = tmp_path / "m.mrc"
    p.write_bytes(bytes(_header(mode=1)) + bytes(2 * 64))
    with pytest.raises(UnsupportedModeError):
        read_mrc(p)


def test_mrc_non_cubic(tmp_path):
    p = tmp_path / "m.mrc"
    p.write_bytes(bytes(_header(dims=(4, 4, 3))) + bytes(4 * 48))
    with pytest.raises(NonCubicError):
        read_mrc(p)


def test_mrc_truncated(tmp_path):
    p = tmp_path / "m.mrc"
    p.write_bytes(bytes(_header()) + bytes(4 * 63))
    with pytest.raises(TruncatedError):
        read_mrc(p)


def test_mrc_axis_mapping(tmp_path):
    # columns along z, rows along x, sections along y
    N = 3
    stored = np.arange(N ** 3, dtype=np.float32).reshape(N, N, N)  # [sec, row, col]
    p = tmp_path / "m.mrc"
    p.write_bytes(bytes(_header(dims=(N, N, N), axes=(3, 1, 2))) + stored.tobytes())
    f = read_mrc(p)
    for x in range(N):
        for y in range(N):
            for z in range(N):
                assert f[x, y, z] == stored[y, x, z]


def test_read_volume_dispatch(tmp_path, rng):
    f = rng.normal(size=(4, 4, 4)).astype(np.float32)
    write_mrc(tmp_path / "a.mrc", f)
    write_raw_volume(tmp_path / "a.raw", f)
    assert np.array_equal(read_volume(tmp_path / "a.mrc"), read_volume(tmp_path / "a.raw"))
