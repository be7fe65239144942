import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from do_icbf import build_acc, build_bicycle, build_example1


@pytest.fixture(scope="session")
def acc_scenario():
    return build_acc()


@pytest.fixture(scope="session")
def bicycle_scenario():
    return build_bicycle()


@pytest.fixture(scope="session")
def example1_scenario():
    return build_example1()
