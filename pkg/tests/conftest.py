import os

import numpy as np
import pytest

from dota.store import Archive, ArchiveWriter, float_to_int16
from dota.textproc import Vocabulary

DATA_DIR = os.path.join(os.path.dirname(__file__), "data")
TOY_VOCAB_PATH = os.path.join(DATA_DIR, "toy_vocab.txt")

SR = 16000


@pytest.fixture(scope="session")
def toy_vocab_path() -> str:
    return TOY_VOCAB_PATH


@pytest.fixture(scope="session")
def toy_vocab() -> Vocabulary:
    return Vocabulary.load(TOY_VOCAB_PATH)


def tone_for_digit(digit: int, dur: float = 0.22, sr: int = SR) -> np.ndarray:
    """A ramped sine whose frequency encodes the digit."""
    t = np.arange(int(dur * sr)) / sr
    x = 0.5 * np.sin(2.0 * np.pi * (350.0 + 140.0 * digit) * t)
    ramp = 200
    x[:ramp] *= np.linspace(0.0, 1.0, ramp)
    x[-ramp:] *= np.linspace(1.0, 0.0, ramp)
    return x


def tone_utterance(digits, sr: int = SR) -> np.ndarray:
    gap = np.zeros(int(0.05 * sr))
    return np.concatenate([np.concatenate([tone_for_digit(d), gap]) for d in digits])


def make_tone_corpus(n_utts: int = 32, seed: int = 42):
    """Distinct random digit strings paired with their tone audio."""
    rng = np.random.default_rng(seed)
    seen = set()
    utts = []
    while len(utts) < n_utts:
        digs = tuple(rng.integers(0, 10, size=int(rng.integers(3, 6))).tolist())
        if digs in seen:
            continue
        seen.add(digs)
        utts.append(digs)
    return [(tone_utterance(d), " ".join(map(str, d))) for d in utts]


def write_tone_archive(path, corpus, dataset_id: str = "toy") -> None:
    writer = ArchiveWriter(path)
    for audio, transcript in corpus:
        writer.add(float_to_int16(audio), transcript, dataset_id)
    writer.finalize()


@pytest.fixture(scope="session")
def tone_archive_path(tmp_path_factory) -> str:
    path = str(tmp_path_factory.mktemp("corpus") / "tones.arc")
    write_tone_archive(path, make_tone_corpus())
    return path


@pytest.fixture()
def tone_archive(tone_archive_path):
    with Archive(tone_archive_path) as arc:
        yield arc
