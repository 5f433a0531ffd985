import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

GOLDEN = os.path.join(os.path.dirname(os.path.abspath(__file__)), "golden")


@pytest.fixture(scope="session")
def image_corpus(tmp_path_factory):
    from malgray.synthetic import make_image_corpus

    root = tmp_path_factory.mktemp("corpus")
    return make_image_corpus(str(root), per_class=8, seed=0)


@pytest.fixture
def golden_dir():
    return GOLDEN


ACCEPTANCE = []  # (criterion, passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, status, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{status:4s}  {name}: {detail}")
