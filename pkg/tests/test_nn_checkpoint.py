"""Checkpoint container: bit-exact round trips and corruption detection."""

import struct
import zlib

import numpy as np
import pytest

from lungsound.nn.checkpoint import (
    CheckpointError,
    load_checkpoint,
    save_checkpoint,
)
from lungsound.nn.store import ParamStore


def sample_store():
    rng = np.random.default_rng(21)
    store = ParamStore()
    store.add("block1.conv.w", rng.standard_normal((3, 3, 1, 4)).astype(np.float32))
    store.add("block1.conv.b", np.zeros(4, dtype=np.float32))
    store.add("head.dense.w", rng.standard_normal((4, 2)).astype(np.float64))
    return store


def sample_stats():
    rng = np.random.default_rng(22)
    return {
        "block1.bn.running_mean": rng.standard_normal(4).astype(np.float32),
        "block1.bn.running_var": np.abs(rng.standard_normal(4)).astype(np.float32),
    }


class TestRoundTrip:
    def test_bit_identical(self, tmp_path):
        store, stats = sample_store(), sample_stats()
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, "cnn_moe", 4, 10, store, stats)
        data = load_checkpoint(path)
        assert data.arch == "cnn_moe"
        assert data.n_classes == 4
        assert data.n_experts == 10
        assert list(data.params) == store.names()
        for name, p in store.items():
            assert data.params[name].dtype == p.value.dtype
            assert np.array_equal(data.params[name], p.value)
        for name, value in stats.items():
            assert np.array_equal(data.stats[name], value)

    def test_identical_saves_produce_identical_bytes(self, tmp_path):
        store, stats = sample_store(), sample_stats()
        a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(a, "student", 3, 0, store, stats)
        save_checkpoint(b, "student", 3, 0, store, stats)
        assert a.read_bytes() == b.read_bytes()

    def test_no_temp_file_left_behind(self, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, "cdnn", 4, 0, sample_store(), {})
        assert [p.name for p in tmp_path.iterdir()] == ["model.ckpt"]

    def test_scalar_stat_round_trip(self, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, "cdnn", 4, 0, sample_store(), {"epochs": np.float64(17.0)})
        data = load_checkpoint(path)
        assert data.stats["epochs"] == 17.0


class TestCorruption:
    def write_sample(self, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, "cnn_moe", 4, 10, sample_store(), sample_stats())
        return path

    def test_flipped_byte_fails_checksum(self, tmp_path):
        path = self.write_sample(tmp_path)
        raw = bytearray(path.read_bytes())
        raw[len(raw) // 2] ^= 0x40
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match="checksum"):
            load_checkpoint(path)

    def test_wrong_magic(self, tmp_path):
        path = self.write_sample(tmp_path)
        raw = bytearray(path.read_bytes())
        body = raw[:-4]
        body[:4] = b"NOPE"
        blob = bytes(body) + struct.pack("<I", zlib.crc32(bytes(body)) & 0xFFFFFFFF)
        path.write_bytes(blob)
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_truncated_file(self, tmp_path):
        path = self.write_sample(tmp_path)
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) // 3])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)
        path.write_bytes(raw[:5])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(path)

    def test_trailing_bytes_detected(self, tmp_path):
        path = self.write_sample(tmp_path)
        raw = path.read_bytes()
        body = raw[:-4] + b"\0\0\0"
        path.write_bytes(body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))
        with pytest.raises(CheckpointError, match="trailing"):
            load_checkpoint(path)

    def test_long_arch_tag_rejected(self, tmp_path):
        with pytest.raises(CheckpointError):
            save_checkpoint(tmp_path / "x.ckpt", "x" * 40, 4, 0, sample_store(), {})
