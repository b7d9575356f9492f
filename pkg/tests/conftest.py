import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def line10():
    """Ten collinear points at x = 0..9."""
    return np.column_stack([np.arange(10.0), np.zeros(10), np.zeros(10)])


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Four shapes x 5 per class, 32 points each: 20 clouds per domain."""
    from cdnd.synth_data import generate_dataset

    root = tmp_path_factory.mktemp("tiny")
    generate_dataset(per_class=5, seed=11, out_dir=root, n_points=32)
    return root


@pytest.fixture
def tiny_config(tiny_dataset):
    from cdnd.geometry import DeformConfig
    from cdnd.models import ModelConfig
    from cdnd.training import TrainConfig

    return TrainConfig(epochs=2, batch_size=4, seeds=(1,), dataset=str(tiny_dataset),
                       deform=DeformConfig(k=4, curvature_neighborhood=6),
                       model=ModelConfig(encoder_widths=(3, 16, 16), classifier_widths=(16, 8),
                                         decoder_widths=(16, 8)))


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
