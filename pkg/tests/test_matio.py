import numpy as np
import pytest

from glanceloc.matio import BadHeaderError, TruncatedFileError, read_matrix, \
    write_matrix
from glanceloc.numerics import seeded_rng


def test_f32_round_trip_of_f32_values(tmp_path):
    arr = seeded_rng(0).normal(size=(5, 3)).astype(np.float32).astype(np.float64)
    path = tmp_path / "m.bin"
    write_matrix(path, arr, dtype="f32")
    assert np.array_equal(read_matrix(path), arr)


def test_f64_round_trip_is_bit_exact(tmp_path):
    arr = seeded_rng(1).normal(size=(4, 7)) * 1e-13
    path = tmp_path / "m.bin"
    write_matrix(path, arr, dtype="f64")
    assert np.array_equal(read_matrix(path), arr)


def test_header_layout(tmp_path):
    path = tmp_path / "m.bin"
    write_matrix(path, np.zeros((2, 3)), dtype="f32")
    blob = path.read_bytes()
    assert blob[:4] == b"D3GF"
    assert int.from_bytes(blob[4:8], "little") == 2
    assert int.from_bytes(blob[8:12], "little") == 3
    assert len(blob) == 12 + 6 * 4


def test_bad_magic(tmp_path):
    path = tmp_path / "m.bin"
    write_matrix(path, np.zeros((2, 2)), dtype="f32")
    path.write_bytes(b"NOPE" + path.read_bytes()[4:])
    with pytest.raises(BadHeaderError):
        read_matrix(path)


def test_truncated_payload(tmp_path):
    path = tmp_path / "m.bin"
    write_matrix(path, np.ones((2, 2)), dtype="f64")
    path.write_bytes(path.read_bytes()[:-1])
    with pytest.raises(TruncatedFileError):
        read_matrix(path)


def test_trailing_garbage(tmp_path):
    path = tmp_path / "m.bin"
    write_matrix(path, np.ones((2, 2)), dtype="f32")
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(BadHeaderError):
        read_matrix(path)


def test_short_header(tmp_path):
    path = tmp_path / "m.bin"
    path.write_bytes(b"D3GF\x01")
    with pytest.raises(TruncatedFileError):
        read_matrix(path)


def test_rejects_non_2d():
    with pytest.raises(ValueError):
        write_matrix("/tmp/never", np.zeros(3), dtype="f32")
