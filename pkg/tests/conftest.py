import pytest

from ood_mae.model import ModelConfig


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="run long training / acceptance tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running training run (needs --runslow)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def micro_config():
    """패치와 헤드가 여러 개인 가장 작은 모델"""
    return ModelConfig(patch_size=4, embed_dim=16, encoder_depth=2, encoder_heads=2,
                       decoder_dim=8, decoder_depth=1, decoder_heads=2, resolution=16)
