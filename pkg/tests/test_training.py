import copy
import csv
import math

import numpy as np
import pytest

from cdnd import autodiff as ad
from cdnd.autodiff import NumericFailure, Tensor
from cdnd.losses import LossWeights
from cdnd.models import load_checkpoint
from cdnd.training import (AdamState, DatasetPair, TrainConfig, adam_step, build_objective, evaluate,
                           run_experiment, train_seed, train_step, variant_name)
from cdnd.verify import micro_batch, micro_model


def scalar_adam(x, grad, steps, lr=0.001, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    out = []
    for t in range(1, steps + 1):
        g = grad(x)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
        out.append(x)
    return out


# -- Adam ---------------------------------------------------------------------------------------


def test_adam_first_step_moves_by_lr():
    p = {"w": Tensor(np.array([1.0, -3.0]), requires_grad=True)}
    adam_step(AdamState(), p, {"w": np.array([5.0, -0.2])}, 0.001)
    assert np.allclose(p["w"].value, [0.999, -2.999], atol=1e-9)


def test_adam_quadratic_sequence():
    p = {"x": Tensor(np.array(1.0), requires_grad=True)}
    state, seen = AdamState(), []
    for _ in range(3):
        adam_step(state, p, {"x": 2 * p["x"].value}, 0.001)
        seen.append(float(p["x"].value))
    frozen = [0.999000000005, 0.9980000262138343, 0.9970000960651408]
    assert seen == pytest.approx(frozen, abs=1e-15)
    assert seen == pytest.approx(scalar_adam(1.0, lambda x: 2 * x, 3), abs=1e-15)


def test_adam_zero_gradient_is_noop():
    p = {"w": Tensor(np.array([0.3, 0.4]), requires_grad=True)}
    adam_step(AdamState(), p, {"w": np.zeros(2)}, 0.1)
    assert p["w"].value.tolist() == [0.3, 0.4]


def test_adam_rejects_non_finite():
    p = {"w": Tensor(np.array([0.3]), requires_grad=True)}
    with pytest.raises(NumericFailure):
        adam_step(AdamState(), p, {"w": np.array([np.nan])}, 0.1)
    assert p["w"].value.tolist() == [0.3]


# -- one step -----------------------------------------------------------------------------------


def micro_config(**kw):
    cfg = TrainConfig(**kw)
    cfg.model = micro_model().config
    return cfg


def _grads(model, source, target, cfg, lam):
    model.zero_grad()
    obj, _ = build_objective(model, source, target, cfg, lam)
    obj.backward()
    return {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.value)) for k, p in model.params.items()}


@pytest.mark.parametrize("alignment", ["dnwd", "nwd"])
def test_single_step_minmax_matches_two_pass_reference(alignment):
    """Classifier ascends the discrepancy, encoder descends it, decoder never sees it."""
    model = micro_model(5)
    source, target, dcfg = micro_batch(5)
    lam = 0.7
    full = micro_config(alignment=alignment, deform=dcfg, weights=LossWeights(0.5, 0.5, 1.0, 0.2))
    sup_only = copy.deepcopy(full)
    sup_only.weights = LossWeights(0.5, 0.5, 0.0, 0.0)
    adv_only = copy.deepcopy(full)
    adv_only.weights = LossWeights(0.0, 0.0, 1.0, 0.2)

    g = _grads(model, source, target, full, lam)
    g_sup = _grads(model, source, target, sup_only, lam)
    neg_adv = _grads(model, source, target, adv_only, -1.0)  # plain gradient of -adversarial
    for name in g:
        if name.startswith("classifier"):
            want = g_sup[name] + neg_adv[name]
        elif name.startswith("encoder"):
            want = g_sup[name] - lam * neg_adv[name]
        else:
            want = g_sup[name]
        assert np.allclose(g[name], want, atol=1e-10), name
    assert np.any(neg_adv["classifier.0.weight"] != 0)


def test_zero_lambda_freezes_encoder_adversarial_gradient():
    model = micro_model(6)
    source, target, dcfg = micro_batch(6)
    cfg = micro_config(deform=dcfg)
    sup = copy.deepcopy(cfg)
    sup.weights = LossWeights(cfg.weights.alpha, cfg.weights.gamma, 0.0, 0.0)
    g, g_sup = _grads(model, source, target, cfg, 0.0), _grads(model, source, target, sup, 0.0)
    for name in g:
        if name.startswith("encoder"):
            assert np.allclose(g[name], g_sup[name], atol=1e-12)


def test_no_alignment_no_reconstruction_is_pure_supervised():
    model = micro_model(7)
    source, target, dcfg = micro_batch(7)
    cfg = micro_config(alignment="none", deform=dcfg, weights=LossWeights(0.5, 0.0, 1.0, 0.2))
    assert not cfg.uses_deformation
    obj, terms = build_objective(model, source, target, cfg)
    from cdnd.losses import cls_loss
    want = 0.5 * cls_loss(model.classify(model.encode(source.clouds)), source.labels).item()
    assert obj.item() == pytest.approx(want, abs=1e-14)
    assert terms.l_ssl == terms.l_dnwd == terms.l_nwd_t == 0.0


def test_train_step_is_deterministic():
    out = []
    for _ in range(2):
        model = micro_model(8)
        source, target, dcfg = micro_batch(8)
        state = AdamState()
        for _ in range(3):
            train_step(model, source, target, micro_config(deform=dcfg), state)
        out.append(b"".join(p.value.tobytes() for p in model.params.values()))
    assert out[0] == out[1]


def test_train_step_changes_parameters():
    model = micro_model(9)
    before = {k: p.value.copy() for k, p in model.params.items()}
    source, target, dcfg = micro_batch(9)
    train_step(model, source, target, micro_config(deform=dcfg), AdamState())
    assert all(not np.array_equal(before[k], p.value) for k, p in model.params.items() if k.endswith("weight"))


def test_missing_deformations_rejected():
    model = micro_model(0)
    source, target, dcfg = micro_batch(0)
    target.deformed = None
    with pytest.raises(ValueError):
        build_objective(model, source, target, micro_config(deform=dcfg))


# -- evaluation ---------------------------------------------------------------------------------


def test_evaluate_ties_go_to_lowest_class():
    model = micro_model(0)
    for p in model.params.values():
        if p.name.startswith("classifier"):
            p.value = np.zeros_like(p.value)
    clouds = [np.zeros((4, 3)), np.ones((4, 3))]
    assert evaluate(model, clouds, [0, 0]) == 1.0
    assert evaluate(model, clouds, [1, 0]) == 0.5


def test_evaluate_empty_raises():
    with pytest.raises(ValueError):
        evaluate(micro_model(0), [], [])


# -- config -------------------------------------------------------------------------------------


def test_lambda_schedule():
    assert TrainConfig(grl_lambda=0.5).lambda_at(40) == 0.5
    ramp = TrainConfig(grl_lambda=1.0, grl_ramp_epochs=10)
    assert ramp.lambda_at(0) == 0.0
    assert ramp.lambda_at(10) == pytest.approx(2 / (1 + math.exp(-10)) - 1)
    assert ramp.lambda_at(50) == ramp.lambda_at(10)


@pytest.mark.parametrize("bad", [dict(learning_rate=0), dict(epochs=0), dict(alignment="mmd"),
                                 dict(seeds=()), dict(grl_lambda=float("inf"))])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        TrainConfig(**bad).validate()


def test_variant_names():
    cfg = TrainConfig()
    assert variant_name(cfg) == "CurvRec(En)-Low+D-NWD"
    cfg.alignment, cfg.deform.mode, cfg.deform.statistic = "nwd", "highest", "std"
    assert variant_name(cfg) == "CurvRec(S)-High+NWD"
    cfg.alignment, cfg.deform.mode = "none", "random"
    assert variant_name(cfg) == "DefRec"
    cfg.weights.gamma = 0.0
    assert variant_name(cfg) == "source-only"


# -- whole runs ---------------------------------------------------------------------------------


def test_train_seed_outputs(tiny_config, tmp_path):
    data = DatasetPair.load(tiny_config)
    history = train_seed(tiny_config, data, 1, tmp_path)
    assert len(history) == 2
    with open(tmp_path / "metrics.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["epoch", "l_cls", "l_ssl", "l_dnwd", "l_nwd_t", "src_acc", "tgt_acc"]
    assert [r[0] for r in rows[1:]] == ["1", "2"]
    arrays, meta = load_checkpoint(tmp_path / "checkpoint.cdnd")
    assert meta["seed"] == 1 and meta["epoch"] == 2
    assert meta["config"]["train"]["alignment"] == "dnwd"
    with open(tmp_path / "embeddings.csv", newline="") as fh:
        emb = list(csv.reader(fh))
    assert emb[0] == ["sample_id", "domain", "label", "dim_0", "dim_1", "dim_2", "dim_3"]
    assert {r[1] for r in emb[1:]} == {"source", "target"}


def test_runs_are_byte_identical(tiny_config, tmp_path):
    for name in ("a", "b"):
        run_experiment(tiny_config, out_dir=tmp_path / name)
    for f in ("seed_1/metrics.csv", "seed_1/checkpoint.cdnd", "seed_1/embeddings.csv", "summary.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f


def test_single_seed_std_is_zero(tiny_config):
    m = run_experiment(tiny_config)
    assert m.src_acc_std == 0.0 and m.tgt_acc_std == 0.0


def test_parallel_workers_match_serial(tiny_config, tmp_path):
    tiny_config.seeds = (1, 2)
    tiny_config.epochs = 1
    serial = run_experiment(tiny_config, out_dir=tmp_path / "s")
    tiny_config.workers = 2
    parallel = run_experiment(tiny_config, out_dir=tmp_path / "p")
    assert serial.per_seed == parallel.per_seed
    for s in (1, 2):
        a, _ = load_checkpoint(tmp_path / "s" / f"seed_{s}/checkpoint.cdnd")
        b, meta = load_checkpoint(tmp_path / "p" / f"seed_{s}/checkpoint.cdnd")
        assert all(a[k].tobytes() == b[k].tobytes() for k in a)
        assert meta["config"]["train"]["workers"] == 2
