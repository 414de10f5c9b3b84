"""Binary parameter container: exact round-trips and corruption handling."""

import struct

import numpy as np
import pytest

from tdmpc.nn import ContainerError, load_tensors, save_tensors


def test_roundtrip_preserves_bits_order_and_header(tmp_path, rng):
    arrays = {
        "enc.weight": rng.standard_normal((4, 3)).astype(np.float32),
        "enc.bias": rng.standard_normal(4).astype(np.float32),
        "wide": rng.standard_normal((2, 3, 5)).astype(np.float64),
        "scalarish": np.float32(3.25).reshape(()),
    }
    path = tmp_path / "params.tdm2"
    save_tensors(path, arrays, header="k = v\nempty =\n")
    loaded, header = load_tensors(path)
    assert header == "k = v\nempty =\n"
    assert list(loaded) == list(arrays)
    for name in arrays:
        assert loaded[name].dtype == arrays[name].dtype
        assert np.array_equal(
            loaded[name].view(np.uint8) if loaded[name].ndim else loaded[name],
            arrays[name].view(np.uint8) if arrays[name].ndim else arrays[name],
        )


def test_empty_container(tmp_path):
    path = tmp_path / "empty.tdm2"
    save_tensors(path, {})
    loaded, header = load_tensors(path)
    assert loaded == {} and header == ""


def test_rejects_unsupported_dtype(tmp_path):
    with pytest.raises(ContainerError):
        save_tensors(tmp_path / "bad.tdm2", {"x": np.zeros(3, np.int64)})


def test_bad_magic(tmp_path):
    p = tmp_path / "junk.tdm2"
    p.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(ContainerError, match="magic"):
        load_tensors(p)


def test_unknown_version(tmp_path):
    p = tmp_path / "v9.tdm2"
    p.write_bytes(b"TDM2" + struct.pack("<I", 9) + struct.pack("<I", 0) + struct.pack("<I", 0))
    with pytest.raises(ContainerError, match="version"):
        load_tensors(p)


def test_truncation_detected(tmp_path, rng):
    p = tmp_path / "cut.tdm2"
    save_tensors(p, {"w": rng.standard_normal((8, 8)).astype(np.float32)})
    blob = p.read_bytes()
    p.write_bytes(blob[:-7])
    with pytest.raises(ContainerError, match="truncated"):
        load_tensors(p)


def test_trailing_garbage_detected(tmp_path, rng):
    p = tmp_path / "extra.tdm2"
    save_tensors(p, {"w": np.ones(2, np.float32)})
    p.write_bytes(p.read_bytes() + b"\x00")
    with pytest.raises(ContainerError, match="trailing"):
        load_tensors(p)
