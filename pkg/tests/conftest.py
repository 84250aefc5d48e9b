import os

# must be set before icontract is imported so SLOW contracts are checked
os.environ.setdefault("ICONTRACT_SLOW", "1")

import pytest  # noqa: E402


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="Run acceptance-scale experiments.")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: acceptance-scale experiment, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)
