from pathlib import Path

import pytest

from cdnd.config import ConfigError, dump_config, from_dict, load_config
from cdnd.synth_data import SCAN_LIKE_SHIFT

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_defaults_from_empty():
    cfg, shift = from_dict({})
    assert cfg.learning_rate == 0.001 and cfg.epochs == 100 and cfg.batch_size == 16
    assert (cfg.weights.alpha, cfg.weights.gamma, cfg.weights.beta1, cfg.weights.beta2) == (0.5, 0.5, 1.0, 0.2)
    assert cfg.deform.k == 8 and cfg.deform.variance == 0.001
    assert shift.rotation == "none"


def test_round_trip(tmp_path):
    cfg, shift = load_config(CONFIGS / "cdnd.yaml")
    path = tmp_path / "again.yaml"
    path.write_text(dump_config(cfg, shift))
    cfg2, shift2 = load_config(path)
    assert cfg2 == cfg and shift2 == shift
    assert dump_config(cfg2, shift2) == path.read_text()


def test_shipped_configs():
    cdnd, shift = load_config(CONFIGS / "cdnd.yaml")
    assert cdnd.alignment == "dnwd" and cdnd.deform.mode == "lowest" and cdnd.deform.statistic == "entropy"
    assert shift == SCAN_LIKE_SHIFT
    base, _ = load_config(CONFIGS / "source_only.yaml")
    assert not base.uses_deformation


@pytest.mark.parametrize("raw", [{"optim": {}}, {"train": {"lr": 1}}, {"weights": {"delta": 1}},
                                 {"train": {"alignment": "mmd"}}, {"weights": {"alpha": -1}},
                                 {"shift": {"rotation": "x"}}, {"train": []}])
def test_rejects_bad_configs(raw):
    with pytest.raises(ConfigError):
        from_dict(raw)


def test_yaml_syntax_error(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("train: {epochs: [1\n")
    with pytest.raises(ConfigError):
        load_config(p)
