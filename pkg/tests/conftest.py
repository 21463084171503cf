import pytest

from evsnet.data import ToyDatasetConfig, load_dataset, make_dataset
from evsnet.model import ModelConfig

TINY_DATA = dict(num_clips=5, frames_per_clip=12, H=32, W=32, num_shapes=2, num_decoys=1,
                 shape_size=(4.0, 7.0), seed=3)
TINY_MODEL = dict(dim=8, image_widths=(4, 4, 8, 8), event_widths=(4, 4, 4, 4), decoder_blocks=1,
                  input_size=(32, 32))


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[k])


@pytest.fixture(scope="session")
def tiny_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny")
    make_dataset(ToyDatasetConfig(**TINY_DATA), root)
    return root


@pytest.fixture(scope="session")
def tiny_data(tiny_root):
    return load_dataset(tiny_root)


@pytest.fixture
def tiny_model_cfg():
    return ModelConfig(**TINY_MODEL)
