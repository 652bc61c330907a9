import struct

import numpy as np
import pytest

from styletrans import weights as W
from styletrans.network import ModelParams
from styletrans.tensor import Tensor
from styletrans.verify import toy_config
from styletrans.weights import (WeightFormatError, load_model,
                                load_tensors, save_model, save_tensors)


def sample_tensors(rng):
    return {
        "a.w": rng.standard_normal((3, 4)).astype(np.float32),
        "a.b": rng.standard_normal(4),
        "scalar": np.array(2.5),
    }


class TestTensorRoundTrip:
    def test_bitwise(self, tmp_path, rng):
        src = sample_tensors(rng)
        path = tmp_path / "t.styw"
        save_tensors(path, src, {"note": "hello", "k": "v=with=eq"})
        back, meta = load_tensors(path)
        assert set(back) == set(src)
        for name in src:
            assert back[name].dtype == src[name].dtype
            assert np.array_equal(back[name], src[name])
        assert meta == {"note": "hello", "k": "v=with=eq"}

    def test_tensor_objects_accepted(self, tmp_path, rng):
        x = rng.standard_normal((2, 2))
        path = tmp_path / "t.styw"
        save_tensors(path, {"x": Tensor(x)})
        back, _ = load_tensors(path)
        assert np.array_equal(back["x"], x)

    def test_write_is_deterministic(self, tmp_path, rng):
        src = sample_tensors(rng)
        a, b = tmp_path / "a.styw", tmp_path / "b.styw"
        save_tensors(a, src, {"m": "1"})
        save_tensors(b, src, {"m": "1"})
        assert a.read_bytes() == b.read_bytes()

    def test_magic_prefix(self, tmp_path, rng):
        path = tmp_path / "t.styw"
        save_tensors(path, sample_tensors(rng))
        assert path.read_bytes()[:4] == b"STYW"


class TestRejection:
    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.styw"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(WeightFormatError, match="magic"):
            load_tensors(path)

    def test_future_version(self, tmp_path, rng):
        path = tmp_path / "x.styw"
        save_tensors(path, sample_tensors(rng))
        blob = bytearray(path.read_bytes())
        blob[4:8] = struct.pack("<I", W.VERSION + 1)
        path.write_bytes(bytes(blob))
        with pytest.raises(WeightFormatError, match="version"):
            load_tensors(path)

    def test_truncation(self, tmp_path, rng):
        path = tmp_path / "x.styw"
        save_tensors(path, sample_tensors(rng))
        path.write_bytes(path.read_bytes()[:-9])
        with pytest.raises(WeightFormatError, match="truncated"):
            load_tensors(path)

    @pytest.mark.parametrize("where", [0.3, 0.5, 0.7])
    def test_payload_byte_flip_detected(self, tmp_path, rng, where):
        path = tmp_path / "x.styw"
        save_tensors(path, sample_tensors(rng))
        blob = bytearray(path.read_bytes())
        blob[int(len(blob) * where)] ^= 0x01
        path.write_bytes(bytes(blob))
        with pytest.raises(WeightFormatError):
            load_tensors(path)

    def test_duplicate_names_on_save(self, tmp_path):
        class Evil(dict):
            def keys(self):
                return ["x", "x"]

        with pytest.raises(WeightFormatError, match="duplicate"):
            save_tensors(tmp_path / "d.styw", Evil(x=np.zeros(2)))


class TestModelFiles:
    def _params(self, seed=0):
        return ModelParams.initialize(toy_config(), seed=seed,
                                      dtype=np.float32)

    def test_roundtrip_bitwise(self, tmp_path):
        params = self._params()
        path = tmp_path / "m.styw"
        save_model(path, params)
        back = load_model(path)
        assert back.config == params.config
        assert set(back.tensors) == set(params.tensors)
        for name, t in params.items():
            assert np.array_equal(back[name].data, t.data)
            assert back[name].requires_grad

    def test_missing_tensor_named(self, tmp_path):
        params = self._params()
        dropped = dict(params.tensors)
        del dropped["dec.0.attn2.wv"]
        save_tensors(tmp_path / "m.styw", dropped,
                     params.config.to_meta())
        with pytest.raises(WeightFormatError, match="dec.0.attn2.wv"):
            load_model(tmp_path / "m.styw")

    def test_extra_tensor_named(self, tmp_path):
        params = self._params()
        extra = dict(params.tensors)
        extra["rogue"] = Tensor(np.zeros(3))
        save_tensors(tmp_path / "m.styw", extra, params.config.to_meta())
        with pytest.raises(WeightFormatError, match="rogue"):
            load_model(tmp_path / "m.styw")

    def test_shape_conflict_with_config(self, tmp_path):
        params = self._params()
        bad = dict(params.tensors)
        bad["cape.b"] = Tensor(np.zeros(7))
        save_tensors(tmp_path / "m.styw", bad, params.config.to_meta())
        with pytest.raises(WeightFormatError, match="cape.b"):
            load_model(tmp_path / "m.styw")

    def test_missing_metadata(self, tmp_path):
        params = self._params()
        save_tensors(tmp_path / "m.styw", params.tensors, {})
        with pytest.raises(WeightFormatError, match="metadata"):
            load_model(tmp_path / "m.styw")
