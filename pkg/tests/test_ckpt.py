import json

import numpy as np
import pytest

from vitgrade import ckpt
from vitgrade.errors import (
    BadMagicError,
    DuplicateNameError,
    HeaderError,
    OverlappingTensorsError,
    TruncatedPayloadError,
)
from vitgrade.model import ModelConfig, init_params, interpolate_pos_embed, param_schema


def random_params(rng, n=5):
    out = {}
    for i in range(n):
        ndim = int(rng.integers(1, 4))
        shape = tuple(int(rng.integers(1, 6)) for _ in range(ndim))
        out[f"tensor.{i}"] = rng.normal(size=shape).astype(np.float32)
    return out


class TestRoundtrip:
    def test_save_load_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        params = random_params(rng)
        f = tmp_path / "x.ptf"
        ckpt.save(params, {"note": "test"}, f)
        loaded, meta = ckpt.load(f)
        assert meta == {"note": "test"}
        assert set(loaded) == set(params)
        for name in params:
            assert loaded[name].dtype == np.float32
            assert loaded[name].shape == params[name].shape
            assert loaded[name].tobytes() == params[name].tobytes()

    def test_random_shapes_property(self, tmp_path):
        rng = np.random.default_rng(42)
        for trial in range(25):
            params = random_params(rng, n=int(rng.integers(1, 9)))
            f = tmp_path / f"t{trial}.ptf"
            ckpt.save(params, {}, f)
            loaded, _ = ckpt.load(f)
            for name in params:
                assert np.array_equal(loaded[name], params[name])

    def test_canonical_bytes(self, tmp_path):
        rng = np.random.default_rng(1)
        params = random_params(rng)
        f1, f2 = tmp_path / "a.ptf", tmp_path / "b.ptf"
        ckpt.save(params, {"k": 1}, f1)
        ckpt.save(dict(reversed(list(params.items()))), {"k": 1}, f2)
        assert f1.read_bytes() == f2.read_bytes()

    def test_model_params_roundtrip(self, tmp_path):
        cfg = ModelConfig(img_size=16, patch_size=8, embed_dim=8, depth=2,
                          num_heads=2, in_channels=1)
        params = init_params(cfg, seed=0)
        f = tmp_path / "m.ptf"
        ckpt.save(params, cfg.to_meta(), f)
        loaded, meta = ckpt.load(f)
        assert ModelConfig.from_meta(meta) == cfg
        for name in params:
            assert np.array_equal(loaded[name], params[name])


class TestFormat:
    def test_layout_fields(self, tmp_path):
        f = tmp_path / "one.ptf"
        ckpt.save({"w": np.arange(4, dtype=np.float32).reshape(2, 2)}, {}, f)
        raw = f.read_bytes()
        assert raw[:4] == b"PTF1"
        header_len = int.from_bytes(raw[4:12], "little")
        header = json.loads(raw[12:12 + header_len])
        assert header["tensors"]["w"] == {"dtype": "f32", "shape": [2, 2], "offset": 0}
        payload = raw[12 + header_len:]
        assert len(payload) == 16  # 4 floats x 4 bytes
        assert np.array_equal(np.frombuffer(payload, dtype="<f4"), [0, 1, 2, 3])

    def test_offsets_lexicographic(self, tmp_path):
        f = tmp_path / "two.ptf"
        ckpt.save({"b": np.zeros(3, np.float32), "a": np.zeros(2, np.float32)}, {}, f)
        raw = f.read_bytes()
        header = json.loads(raw[12:12 + int.from_bytes(raw[4:12], "little")])
        assert header["tensors"]["a"]["offset"] == 0
        assert header["tensors"]["b"]["offset"] == 8

    def test_float64_input_is_cast(self, tmp_path):
        f = tmp_path / "c.ptf"
        ckpt.save({"w": np.array([1.5, 2.5], dtype=np.float64)}, {}, f)
        loaded, _ = ckpt.load(f)
        assert loaded["w"].dtype == np.float32


def _mangle(path, out, mutate):
    raw = bytearray(path.read_bytes())
    mutate(raw)
    out.write_bytes(bytes(raw))
    return out


class TestMalformed:
    @pytest.fixture
    def good(self, tmp_path):
        f = tmp_path / "good.ptf"
        ckpt.save({"a": np.ones((2, 2), np.float32), "b": np.zeros(3, np.float32)},
                  {"m": 1}, f)
        return f

    def test_bad_magic(self, good, tmp_path):
        bad = _mangle(good, tmp_path / "bad.ptf", lambda r: r.__setitem__(0, ord("X")))
        with pytest.raises(BadMagicError):
            ckpt.load(bad)

    def test_truncated_payload(self, good, tmp_path):
        raw = good.read_bytes()[:-5]
        bad = tmp_path / "trunc.ptf"
        bad.write_bytes(raw)
        with pytest.raises(TruncatedPayloadError):
            ckpt.load(bad)

    def test_truncated_header(self, good, tmp_path):
        raw = good.read_bytes()[:10]
        bad = tmp_path / "trunch.ptf"
        bad.write_bytes(raw)
        with pytest.raises(BadMagicError):
            ckpt.load(bad)

    def test_overlapping_offsets(self, tmp_path):
        header = {"tensors": {"a": {"dtype": "f32", "shape": [2], "offset": 0},
                              "b": {"dtype": "f32", "shape": [2], "offset": 4}},
                  "meta": {}}
        blob = json.dumps(header).encode()
        f = tmp_path / "ov.ptf"
        f.write_bytes(b"PTF1" + len(blob).to_bytes(8, "little") + blob + b"\0" * 12)
        with pytest.raises(OverlappingTensorsError):
            ckpt.load(f)

    def test_duplicate_names(self, tmp_path):
        blob = (b'{"tensors":{"a":{"dtype":"f32","shape":[1],"offset":0},'
                b'"a":{"dtype":"f32","shape":[1],"offset":4}},"meta":{}}')
        f = tmp_path / "dup.ptf"
        f.write_bytes(b"PTF1" + len(blob).to_bytes(8, "little") + blob + b"\0" * 8)
        with pytest.raises(DuplicateNameError):
            ckpt.load(f)

    def test_garbage_header(self, tmp_path):
        blob = b"not json at all"
        f = tmp_path / "g.ptf"
        f.write_bytes(b"PTF1" + len(blob).to_bytes(8, "little") + blob)
        with pytest.raises(HeaderError):
            ckpt.load(f)

    def test_unknown_dtype(self, tmp_path):
        header = {"tensors": {"a": {"dtype": "f16", "shape": [2], "offset": 0}}, "meta": {}}
        blob = json.dumps(header).encode()
        f = tmp_path / "d.ptf"
        f.write_bytes(b"PTF1" + len(blob).to_bytes(8, "little") + blob + b"\0" * 4)
        with pytest.raises(HeaderError):
            ckpt.load(f)


class TestValidateNames:
    def test_fresh_params_ok(self):
        cfg = ModelConfig(img_size=16, patch_size=8, embed_dim=8, depth=1,
                          num_heads=2, in_channels=1)
        report = ckpt.validate_names(init_params(cfg, 0), cfg)
        assert report.ok
        assert report.describe() == "ok"

    def test_missing_head(self):
        cfg = ModelConfig(img_size=16, patch_size=8, embed_dim=8, depth=1,
                          num_heads=2, in_channels=1)
        params = init_params(cfg, 0)
        del params["head.weight"]
        del params["head.bias"]
        report = ckpt.validate_names(params, cfg)
        assert report.missing == ["head.bias", "head.weight"]
        assert not report.unexpected and not report.shape_mismatches

    def test_unexpected_name(self):
        cfg = ModelConfig(img_size=16, patch_size=8, embed_dim=8, depth=1,
                          num_heads=2, in_channels=1)
        params = init_params(cfg, 0)
        params["extra.weight"] = np.zeros(3, np.float32)
        report = ckpt.validate_names(params, cfg)
        assert report.unexpected == ["extra.weight"]

    def test_pos_embed_grid_mismatch(self):
        # 224-resolution table (14^2+1 = 197 slots) against a 384 config
        # (24^2+1 = 577 slots): flagged, and resolvable by interpolation
        cfg = ModelConfig(img_size=384, patch_size=16, embed_dim=8, depth=1,
                          num_heads=2, in_channels=1)
        params = init_params(cfg, 0)
        params["pos_embed"] = np.zeros((1, 197, 8), dtype=np.float32)
        report = ckpt.validate_names(params, cfg)
        assert [m[0] for m in report.shape_mismatches] == ["pos_embed"]
        params["pos_embed"] = interpolate_pos_embed(params["pos_embed"], cfg.grid_size)
        assert ckpt.validate_names(params, cfg).ok
        assert param_schema(cfg)["pos_embed"] == (1, 577, 8)
