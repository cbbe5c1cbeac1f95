import json

import numpy as np
import pytest

from streetcross import attenet as tl
from streetcross import checkpoint, fusion
from streetcross import iatcnn as mp

MOTION = dict(kernel_size=4, filters=(6, 6, 6), t_obs=8, t_pred=12, n_max=4)
LIGHT = dict(widths=(4, 4, 8, 8, 8), units=(1, 1, 1, 1, 1), se_reduction=4, n_classes=3, input_size=16)


def _arcp(seed=0):
    cfg = fusion.FusionConfig(D=8, H=1, W=1, C=8, tl_channels=8, hidden=16)
    return fusion.build_arcp(cfg, mp.build(mp.ModelConfig(**MOTION), seed), tl.build(tl.AtteNetConfig(**LIGHT), seed),
                             seed=seed)


def _perturb(model, rng):
    for a in model.named_arrays().values():
        a[...] = a + rng.standard_normal(np.shape(a))


def _assert_same(a, b):
    xa, xb = a.named_arrays(), b.named_arrays()
    assert sorted(xa) == sorted(xb)
    for k in xa:
        assert np.asarray(xa[k]).tobytes() == np.asarray(xb[k]).tobytes(), k


class TestRoundTrip:
    @pytest.mark.parametrize("variant", mp.VARIANTS)
    def test_iatcnn(self, tmp_path, variant):
        model = mp.build(mp.ModelConfig(variant=variant, **MOTION), seed=1)
        _perturb(model, np.random.default_rng(0))
        checkpoint.save(model, tmp_path / "m.ckpt")
        again = checkpoint.load(tmp_path / "m.ckpt", kind="iatcnn")
        _assert_same(model, again)
        rng = np.random.default_rng(1)
        obs, mask = rng.standard_normal((2, 4, 8, 5)), np.ones((2, 4, 8))
        assert model(obs, mask).gaussians().tobytes() == again(obs, mask).gaussians().tobytes()

    def test_attenet(self, tmp_path):
        model = tl.build(tl.AtteNetConfig(**LIGHT), seed=2)
        for s in model.bn.values():
            s.running_var = s.running_var + 0.5
        checkpoint.save(model, tmp_path / "a.ckpt")
        again = checkpoint.load(tmp_path / "a.ckpt")
        _assert_same(model, again)
        img = np.random.default_rng(2).random((16, 16, 3))
        assert tl.forward_classify(model, img).tobytes() == tl.forward_classify(again, img).tobytes()

    def test_arcp(self, tmp_path):
        model = _arcp()
        model.task_weights["s_cross"].data = np.array(0.3)
        checkpoint.save(model, tmp_path / "f.ckpt")
        again = checkpoint.load(tmp_path / "f.ckpt", kind="arcp")
        _assert_same(model, again)
        data = fusion.gen_crossing_dataset(4, seed=0, image_size=24)
        assert fusion.predict_proba(model, data).tobytes() == fusion.predict_proba(again, data).tobytes()

    def test_zero_dim_and_layout(self, tmp_path):
        arrays = {"b": np.arange(6.0).reshape(2, 3), "a": np.array(1.5)}
        checkpoint.write(tmp_path / "x.ckpt", "iatcnn", {"k": 1}, arrays)
        raw = (tmp_path / "x.ckpt").read_bytes()
        assert raw.startswith(b"IATCNN1\n")
        head, payload = raw[8:].split(b"\n", 1)
        manifest = json.loads(head)
        assert [t["name"] for t in manifest["tensors"]] == ["a", "b"]
        assert manifest["tensors"][1]["offset"] == 8
        assert payload == np.array([1.5] + list(range(6)), dtype="<f8").tobytes()
        kind, cfg, back = checkpoint.read(tmp_path / "x.ckpt")
        assert kind == "iatcnn" and cfg == {"k": 1} and back["a"].shape == ()

    def test_byte_identical(self, tmp_path):
        model = mp.build(mp.ModelConfig(**MOTION), seed=5)
        checkpoint.save(model, tmp_path / "1.ckpt")
        checkpoint.save(mp.build(mp.ModelConfig(**MOTION), seed=5), tmp_path / "2.ckpt")
        assert (tmp_path / "1.ckpt").read_bytes() == (tmp_path / "2.ckpt").read_bytes()


class TestErrors:
    def test_bad_magic(self, tmp_path):
        (tmp_path / "x.ckpt").write_bytes(b"NOPE\n{}\n")
        with pytest.raises(checkpoint.CheckpointError, match="magic"):
            checkpoint.read(tmp_path / "x.ckpt")

    def test_truncated_payload(self, tmp_path):
        checkpoint.save(mp.build(mp.ModelConfig(**MOTION)), tmp_path / "m.ckpt")
        raw = (tmp_path / "m.ckpt").read_bytes()
        (tmp_path / "m.ckpt").write_bytes(raw[:-8])
        with pytest.raises(checkpoint.CheckpointError, match="payload"):
            checkpoint.read(tmp_path / "m.ckpt")

    def test_wrong_kind(self, tmp_path):
        checkpoint.save(mp.build(mp.ModelConfig(**MOTION)), tmp_path / "m.ckpt")
        with pytest.raises(checkpoint.CheckpointError, match="expected 'attenet'"):
            checkpoint.load(tmp_path / "m.ckpt", kind="attenet")

    def test_config_mismatch(self, tmp_path):
        checkpoint.save(mp.build(mp.ModelConfig(**MOTION)), tmp_path / "m.ckpt")
        other = mp.ModelConfig(**dict(MOTION, kernel_size=5)).to_dict()
        with pytest.raises(checkpoint.CheckpointError, match="config"):
            checkpoint.load(tmp_path / "m.ckpt", config=other)

    def test_shape_mismatch(self, tmp_path):
        model = mp.build(mp.ModelConfig(**MOTION))
        arrays = dict(model.named_arrays())
        arrays["head.b"] = np.zeros(3)
        checkpoint.write(tmp_path / "m.ckpt", "iatcnn", model.config.to_dict(), arrays)
        with pytest.raises(checkpoint.CheckpointError, match="head.b"):
            checkpoint.load(tmp_path / "m.ckpt")
