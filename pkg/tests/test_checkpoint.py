"""Checkpoint binary format round trips and rejection cases."""

import numpy as np
import pytest

from i2p.checkpoint import MAGIC, load_checkpoint, save_checkpoint
from i2p.errors import FormatError


def test_round_trip_preserves_names_shapes_values(tmp_path):
    rng = np.random.default_rng(0)
    params = {
        "enc.s0.b0.attn.wq": rng.normal(size=(8, 8)),
        "mask_token": rng.normal(size=(1, 8)),
        "head3d.b": rng.normal(size=(12,)),
    }
    path = tmp_path / "ck.i2pt"
    save_checkpoint(params, path)
    back = load_checkpoint(path)
    assert list(back) == list(params)
    for name in params:
        assert np.array_equal(back[name], params[name])


def test_file_starts_with_magic(tmp_path):
    path = tmp_path / "ck.i2pt"
    save_checkpoint({"w": np.zeros((2, 2))}, path)
    assert path.read_bytes()[:4] == MAGIC == b"I2PT"


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.i2pt"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(FormatError):
        load_checkpoint(path)


def test_truncated_rejected(tmp_path):
    path = tmp_path / "ck.i2pt"
    save_checkpoint({"w": np.ones((4, 4))}, path)
    blob = path.read_bytes()
    path.write_bytes(blob[:len(blob) - 7])
    with pytest.raises(FormatError):
        load_checkpoint(path)


def test_trailing_bytes_rejected(tmp_path):
    path = tmp_path / "ck.i2pt"
    save_checkpoint({"w": np.ones(3)}, path)
    path.write_bytes(path.read_bytes() + b"xx")
    with pytest.raises(FormatError):
        load_checkpoint(path)


def test_save_is_byte_deterministic(tmp_path):
    params = {"a": np.arange(6.0).reshape(2, 3), "b": np.zeros(1)}
    p1, p2 = tmp_path / "a.i2pt", tmp_path / "b.i2pt"
    save_checkpoint(params, p1)
    save_checkpoint(params, p2)
    assert p1.read_bytes() == p2.read_bytes()
