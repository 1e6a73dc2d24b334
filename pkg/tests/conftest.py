import os
import subprocess
import sys
from pathlib import Path

import pytest

from cfair.lexicon import (Sgt, SgtLexicon, default_categories_path, load_categories, load_default_lexicon,
                          load_lexicon)

TESTS = Path(__file__).parent
FIXTURES = TESTS / "fixtures"


def make_lexicon(pairs) -> SgtLexicon:
    return SgtLexicon([Sgt(tuple(s.split()), c) for s, c in pairs], load_categories(default_categories_path()))


@pytest.fixture(scope="session")
def default_lexicon():
    return load_default_lexicon()


@pytest.fixture(scope="session")
def stereo_lexicon():
    from cfair.cli import _builtin
    return load_lexicon(_builtin("stereotype_sgts.tsv"))


@pytest.fixture(scope="session")
def small_lexicon():
    return make_lexicon([("muslim", "religion"), ("jewish", "religion"), ("white", "race"), ("women", "gender")])


def run_numpy_backend(code: str) -> str:
    """Run a snippet in a fresh interpreter with the numba path disabled."""
    env = dict(os.environ, CFAIR_DISABLE_NUMBA="1")
    res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, timeout=300)
    assert res.returncode == 0, res.stderr
    return res.stdout


ACCEPTANCE: dict[int, tuple[str, str, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        status, name, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{status}] criterion {n:2d}: {name}  ({detail})")
