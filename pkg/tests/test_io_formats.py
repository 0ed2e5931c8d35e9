"""Byte-level contracts of the TNSR and checkpoint file formats."""

import struct

import numpy as np
import pytest

from ecenet.checkpoint import load_checkpoint, save_checkpoint
from ecenet.errors import DataError
from ecenet.tnsr import read_tnsr, write_tnsr


class TestTNSR:
    def test_header_layout(self, tmp_path):
        path = tmp_path / "t.tnsr"
        write_tnsr(path, np.arange(6, dtype=np.float32).reshape(2, 3))
        blob = path.read_bytes()
        assert blob[:4] == b"TNSR"
        version, rank = struct.unpack_from("<BB", blob, 4)
        assert (version, rank) == (1, 2)
        assert struct.unpack_from("<2I", blob, 6) == (2, 3)
        assert len(blob) == 6 + 8 + 4 * 6

    def test_round_trip(self, tmp_path, rng):
        path = tmp_path / "t.tnsr"
        arr = rng.standard_normal((3, 4, 5)).astype(np.float32)
        write_tnsr(path, arr)
        np.testing.assert_array_equal(read_tnsr(path), arr)

    def test_scalar_round_trip(self, tmp_path):
        path = tmp_path / "t.tnsr"
        write_tnsr(path, np.float32(7.5))
        out = read_tnsr(path)
        assert out.shape == ()
        assert out == np.float32(7.5)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.tnsr"
        path.write_bytes(b"NOPE" + bytes(10))
        with pytest.raises(DataError):
            read_tnsr(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "t.tnsr"
        write_tnsr(path, np.ones((2, 2), dtype=np.float32))
        blob = path.read_bytes()
        path.write_bytes(blob[:-4])
        with pytest.raises(DataError):
            read_tnsr(path)


class TestCheckpoint:
    def test_header_layout(self, tmp_path):
        path = tmp_path / "c.ecen"
        save_checkpoint(path, step=5,
                        parameters=[("w", np.ones((2, 2), dtype=np.float32))],
                        moments=[("w.m", np.zeros(4, dtype=np.float32))],
                        config_hash=0xDEADBEEF)
        blob = path.read_bytes()
        assert blob[:4] == b"ECEN"
        version, step, count = struct.unpack_from("<III", blob, 4)
        assert (version, step, count) == (1, 5, 1)
        (name_len,) = struct.unpack_from("<H", blob, 16)
        assert blob[18:18 + name_len] == b"w"
        (tail_hash,) = struct.unpack_from("<Q", blob, len(blob) - 8)
        assert tail_hash == 0xDEADBEEF

    def test_round_trip(self, tmp_path, rng):
        path = tmp_path / "c.ecen"
        params = [("a.weight", rng.standard_normal((3, 4)).astype(np.float32)),
                  ("a.bias", rng.standard_normal(3).astype(np.float32))]
        moments = [("a.weight.m", np.zeros((3, 4), dtype=np.float32)),
                   ("a.weight.v", np.ones((3, 4), dtype=np.float32))]
        save_checkpoint(path, 42, params, moments, 123456789)
        ckpt = load_checkpoint(path)
        assert ckpt.step == 42
        assert ckpt.config_hash == 123456789
        for name, arr in params:
            np.testing.assert_array_equal(ckpt.parameters[name], arr)
        for name, arr in moments:
            np.testing.assert_array_equal(ckpt.moments[name], arr)

    def test_float64_serialized_as_float32(self, tmp_path):
        path = tmp_path / "c.ecen"
        value = np.array([1.0 + 1e-12], dtype=np.float64)
        save_checkpoint(path, 0, [("x", value)], [], 0)
        out = load_checkpoint(path).parameters["x"]
        assert out.dtype == np.float32
        assert out[0] == np.float32(1.0 + 1e-12)

    def test_trailing_garbage_rejected(self, tmp_path):
        path = tmp_path / "c.ecen"
        save_checkpoint(path, 0, [], [], 0)
        path.write_bytes(path.read_bytes() + b"x")
        with pytest.raises(DataError):
            load_checkpoint(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "c.ecen"
        path.write_bytes(b"XXXX" + bytes(20))
        with pytest.raises(DataError):
            load_checkpoint(path)
