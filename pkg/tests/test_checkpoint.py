import numpy as np
import pytest

from vidprecode import tensor as T
from vidprecode.checkpoint import MAGIC, load_params, save_params
from vidprecode.errors import CorruptStream
from vidprecode.tensor import Tensor


def test_round_trip_bit_exact(tmp_path, f64):
    rng = np.random.default_rng(0)
    params = {
        "a.w": Tensor(rng.standard_normal((3, 4, 2, 2))),
        "a.b": Tensor(rng.standard_normal(3)),
        "scalar": Tensor(np.array(0.125)),
        "f32": Tensor(rng.standard_normal((5,)).astype(np.float32), dtype=np.float32),
    }
    path = tmp_path / "p.ckpt"
    save_params(params, str(path))
    loaded = load_params(str(path))
    assert set(loaded) == set(params)
    for name in params:
        assert loaded[name].dtype == params[name].dtype
        assert loaded[name].data.tobytes() == params[name].data.tobytes()


def test_double_round_trip_identical_bytes(tmp_path, f64):
    params = {"x": Tensor(np.linspace(0, 1, 7))}
    p1, p2 = tmp_path / "1.ckpt", tmp_path / "2.ckpt"
    save_params(params, str(p1))
    save_params(load_params(str(p1)), str(p2))
    assert p1.read_bytes() == p2.read_bytes()


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOTCKPT" + b"\x00" * 16)
    with pytest.raises(CorruptStream):
        load_params(str(path))


def test_truncated_rejected(tmp_path, f64):
    path = tmp_path / "t.ckpt"
    save_params({"x": Tensor(np.arange(16, dtype=np.float64))}, str(path))
    blob = path.read_bytes()
    path.write_bytes(blob[:-8])
    with pytest.raises(CorruptStream):
        load_params(str(path))


def test_magic_header_present(tmp_path, f64):
    path = tmp_path / "m.ckpt"
    save_params({"x": Tensor([1.0])}, str(path))
    assert path.read_bytes().startswith(MAGIC)
