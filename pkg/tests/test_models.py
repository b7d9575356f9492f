import struct

import numpy as np
import pytest

from cdnd import autodiff as ad
from cdnd.models import (MAGIC, CDNDModel, ModelConfig, load_checkpoint, load_state, model_state,
                         save_checkpoint)
from cdnd.verify import micro_model

SMALL = ModelConfig(encoder_widths=(3, 8, 6), classifier_widths=(6, 5), decoder_widths=(6, 4),
                    num_classes=3, recon_points=2)


def reference_forward(model, cloud):
    """Plain-numpy forward pass, written independently of the tape."""
    p = {k: v.value for k, v in model.params.items()}
    h = cloud
    for i in range(len(model.config.encoder_widths) - 1):
        h = np.maximum(h @ p[f"encoder.{i}.weight"] + p[f"encoder.{i}.bias"], 0)
    f = h.max(axis=0)
    n_cls = len(model.config.classifier_widths)
    for i in range(n_cls):
        f = f @ p[f"classifier.{i}.weight"] + p[f"classifier.{i}.bias"]
        if i < n_cls - 1:
            f = np.maximum(f, 0)
    return f


def test_forward_matches_reference(rng):
    model = micro_model(1)
    clouds = [rng.standard_normal((16, 3)) for _ in range(3)]
    logits = model.logits(model.encode(clouds)).value
    for row, c in zip(logits, clouds):
        assert np.allclose(row, reference_forward(model, c), atol=1e-12)


def test_permutation_invariance_is_exact(rng):
    model = CDNDModel.init(ModelConfig(), 0)
    cloud = rng.standard_normal((32, 3))
    perm = rng.permutation(32)
    a = model.classify(model.encode([cloud])).value
    b = model.classify(model.encode([cloud[perm]])).value
    assert a.tobytes() == b.tobytes()


def test_softmax_rows_sum_to_one(rng):
    model = micro_model(2)
    p = model.classify(model.encode([rng.standard_normal((8, 3)) for _ in range(4)])).value
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(p > 0)


def test_zero_weights_give_uniform_prediction():
    model = CDNDModel.init(SMALL, 0)
    for p in model.params.values():
        p.value = np.zeros_like(p.value)
    probs = model.classify(model.encode([np.ones((4, 3))])).value
    assert np.allclose(probs, 1 / 3)


def test_init_is_seeded_and_biases_zero():
    a, b, c = CDNDModel.init(SMALL, 5), CDNDModel.init(SMALL, 5), CDNDModel.init(SMALL, 6)
    for name in a.params:
        assert np.array_equal(a.params[name].value, b.params[name].value)
        if name.endswith("bias"):
            assert not np.any(a.params[name].value)
    assert not np.array_equal(a.params["encoder.0.weight"].value, c.params["encoder.0.weight"].value)
    w = a.params["encoder.1.weight"].value
    assert np.all(np.abs(w) <= 1 / np.sqrt(8))


def test_reconstruct_shapes(rng):
    model = micro_model(0, recon_points=5)
    feats = model.encode([rng.standard_normal((8, 3)) for _ in range(3)])
    out = model.reconstruct(feats)
    assert [o.shape for o in out] == [(5, 3)] * 3
    with pytest.raises(ValueError):
        model.reconstruct(feats, r=4)


def test_encode_rejects_ragged_and_empty(rng):
    model = micro_model(0)
    with pytest.raises(ValueError):
        model.encode([rng.standard_normal((4, 3)), rng.standard_normal((5, 3))])
    with pytest.raises(ValueError):
        model.encode([])


def test_bad_config_rejected():
    with pytest.raises(ValueError):
        CDNDModel.init(ModelConfig(encoder_widths=(2, 8)), 0)
    with pytest.raises(ValueError):
        CDNDModel.init(ModelConfig(classifier_widths=(128, 64)), 0)


def test_classifier_gradient_through_encoder(rng):
    model = micro_model(3)
    clouds = [rng.standard_normal((6, 3)) for _ in range(2)]
    w = ad.Tensor(rng.standard_normal((2, 3)))

    def f(x):
        model.params["encoder.1.weight"] = x
        return ad.total(ad.mul(model.classify(model.encode(clouds)), w))

    x0 = model.params["encoder.1.weight"].value.copy()
    assert ad.finite_difference_check(f, x0) <= 1e-5


def test_checkpoint_round_trip(tmp_path):
    model = micro_model(4)
    path = tmp_path / "m.cdnd"
    meta = {"seed": 4, "epoch": 7, "config": {"alpha": 0.5}}
    save_checkpoint(path, model_state(model), meta)
    arrays, back = load_checkpoint(path)
    assert back == meta
    assert list(arrays) == list(model.params)
    for k, v in arrays.items():
        assert v.tobytes() == model.params[k].value.tobytes()

    other = micro_model(9)
    load_state(other, arrays)
    assert all(np.array_equal(other.params[k].value, model.params[k].value) for k in arrays)


def test_checkpoint_layout(tmp_path):
    path = tmp_path / "one.cdnd"
    save_checkpoint(path, {"w": np.array([[1.0, 2.0]])})
    raw = path.read_bytes()
    assert raw[:5] == MAGIC
    assert struct.unpack_from("<I", raw, 5) == (1,)
    assert struct.unpack_from("<I", raw, 9) == (1,) and raw[13:14] == b"w"
    assert struct.unpack_from("<I2Q", raw, 14) == (2, 1, 2)
    assert struct.unpack_from("<2d", raw, 34) == (1.0, 2.0)


def test_checkpoint_rejects_foreign_file(tmp_path):
    path = tmp_path / "x.cdnd"
    path.write_bytes(b"NOPE")
    with pytest.raises(ValueError):
        load_checkpoint(path)


def test_load_state_mismatch():
    with pytest.raises(ValueError):
        load_state(micro_model(0), {"encoder.0.weight": np.zeros((3, 8))})
