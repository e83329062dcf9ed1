import warnings

import numpy as np
import pytest
import torch

from openset_rff import fingerprint_sim as fs

torch.set_num_threads(1)
warnings.filterwarnings("ignore", category=UserWarning, module="torch")


@pytest.fixture(scope="session")
def small_corpus():
    """12 transmitters, 40-60 packets each: big enough for every pipeline, small enough to train in seconds."""
    profiles = fs.synth_population(12, seed=3)
    return fs.generate_corpus(profiles, 40, 60, fs.ChannelConfig(snr_db=25.0), seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def authorized_set(small_corpus):
    """First four transmitters of the small corpus as an authorized set (labels 0..3)."""
    mask = small_corpus.tx_ids < 4
    return small_corpus.iq[mask], small_corpus.tx_ids[mask].astype(np.int64)


@pytest.fixture(scope="session")
def authorized_iq(authorized_set):
    return authorized_set[0]


@pytest.fixture(scope="session")
def trained_ae(authorized_iq):
    from openset_rff import generative, nn_core

    return generative.train_autoencoder(authorized_iq, cfg=nn_core.TrainConfig(epochs=30, batch_size=32, seed=0))


@pytest.fixture(scope="session")
def trained_judge(authorized_set):
    from openset_rff import latent_opt, nn_core

    iq, labels = authorized_set
    return latent_opt.train_judge(iq, labels, 4, nn_core.TrainConfig(epochs=6, batch_size=32, seed=0))


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_report():
    """Collects one PASS/FAIL line per acceptance criterion; echoed in the terminal summary."""

    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
