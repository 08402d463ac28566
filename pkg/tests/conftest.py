import sys
import warnings
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))
warnings.filterwarnings("ignore", message=".*enable_nested_tensor.*")

ACCEPTANCE = {}


def record_acceptance(number: int, title: str, passed: bool, detail: str = ""):
    ACCEPTANCE[number] = (title, passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, passed, detail = ACCEPTANCE[n]
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {n}: {title}"
        terminalreporter.write_line(line + (f" ({detail})" if detail else ""))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    from forgeryloc.datagen import CorpusConfig, generate_corpus

    root = tmp_path_factory.mktemp("corpus")
    cfg = CorpusConfig.desk(datasets=("VCMS", "VPVM"), videos_per_dataset=4, frames_per_video=2,
                            height=128, width=256, seed=3)
    generate_corpus(root, cfg)
    return root
