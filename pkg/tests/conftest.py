import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def a2_corpus(tmp_path_factory):
    """200 clean utterances, each paired with a noisy + gapped copy."""
    from ttseval.synth import clean_vs_degraded_corpus

    root = tmp_path_factory.mktemp("a2")
    return clean_vs_degraded_corpus(str(root), n_texts=200, seed=0, snr_db=10.0, n_gaps=3)


@pytest.fixture(scope="session")
def snr_corpus(tmp_path_factory):
    from ttseval.synth import snr_graded_corpus

    root = tmp_path_factory.mktemp("snr")
    return snr_graded_corpus(str(root), n_texts=60, clips_per_text=4, seed=0)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for key in sorted(RESULTS, key=lambda k: int(k[1:])):
            terminalreporter.write_line(RESULTS[key])
