# this contains imports plugins that configure py.test for astropy tests.
# by importing them here in conftest.py they are discoverable by py.test
# no matter how it is invoked within the source tree.

import pytest

try:
    from astropy.tests.plugins.display import *
    from astropy.tests.helper import *
except ImportError:
    try:
        from astropy.tests.pytest_plugins import *
    except ImportError:
        pass


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="run experiment-level tests that train toy models")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: trains toy models; only runs with --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow option to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)
