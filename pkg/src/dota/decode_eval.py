"""Greedy transcription and word-error-rate evaluation.

Decoding starts from the begin-of-text token and repeatedly appends the
argmax next token until end-of-text or the 146-token budget. Scoring uses
a minimal-cost word-level Levenshtein alignment; evaluation samples each
dataset down to a cap, skips references longer than a token limit, and
normalizes both sides before alignment.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .frontend import FrontendConfig, features
from .model import ModelConfig, forward
from .store import Archive
from .textproc import Vocabulary, detokenize, normalize, wordpieces


@dataclass
class Hypothesis:
    token_ids: list[int]
    text: str  # detokenized and normalized
    record_index: int = -1


def greedy_decode(
    params: dict[str, np.ndarray],
    cfg: ModelConfig,
    feats: np.ndarray,
    vocab: Vocabulary,
    dtype=np.float64,
) -> Hypothesis:
    """Deterministic argmax decoding of one feature matrix (n_audio, 80k)."""
    ids = [vocab.bos_id]
    while len(ids) < cfg.max_text_tokens:
        logits = forward(params, cfg, feats, np.asarray(ids), dtype=dtype)
        nxt = int(np.argmax(logits[-1]))
        ids.append(nxt)
        if nxt == vocab.eos_id:
            break
    generated = ids[1:]
    return Hypothesis(token_ids=generated, text=normalize(detokenize(generated, vocab)))


class GreedyTranscriber:
    """Waveform -> normalized transcript using a trained model."""

    def __init__(
        self,
        params: dict[str, np.ndarray],
        model_cfg: ModelConfig,
        frontend_cfg: FrontendConfig,
        vocab: Vocabulary,
        dtype=np.float64,
    ):
        self.params = params
        self.model_cfg = model_cfg
        self.frontend_cfg = frontend_cfg
        self.vocab = vocab
        self.dtype = dtype

    def __call__(self, wave: np.ndarray) -> str:
        feats = features(wave, self.frontend_cfg, self.model_cfg.stack_factor)
        return greedy_decode(self.params, self.model_cfg, feats, self.vocab, self.dtype).text


def word_errors(reference: list[str], hypothesis: list[str]) -> tuple[int, int, int]:
    """(substitutions, insertions, deletions) of a minimal-cost word-level
    alignment with unit costs; ties prefer substitutions over
    insertion+deletion pairs."""
    n, m = len(reference), len(hypothesis)
    dist = np.zeros((n + 1, m + 1), dtype=np.int64)
    dist[:, 0] = np.arange(n + 1)
    dist[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        ref_word = reference[i - 1]
        for j in range(1, m + 1):
            diag = dist[i - 1, j - 1] + (ref_word != hypothesis[j - 1])
            dist[i, j] = min(diag, dist[i - 1, j] + 1, dist[i, j - 1] + 1)
    subs = ins = dels = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and dist[i, j] == dist[i - 1, j - 1] + (reference[i - 1] != hypothesis[j - 1]):
            subs += reference[i - 1] != hypothesis[j - 1]
            i -= 1
            j -= 1
        elif i > 0 and dist[i, j] == dist[i - 1, j] + 1:
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return subs, ins, dels


@dataclass
class DatasetWer:
    substitutions: int = 0
    insertions: int = 0
    deletions: int = 0
    reference_words: int = 0
    evaluated: int = 0
    skipped: int = 0

    @property
    def errors(self) -> int:
        return self.substitutions + self.insertions + self.deletions

    @property
    def wer(self) -> float:
        return self.errors / self.reference_words if self.reference_words else 0.0

    def to_dict(self) -> dict:
        return {
            "substitutions": self.substitutions,
            "insertions": self.insertions,
            "deletions": self.deletions,
            "reference_words": self.reference_words,
            "evaluated": self.evaluated,
            "skipped": self.skipped,
            "wer": self.wer,
        }


@dataclass
class WerReport:
    datasets: dict[str, DatasetWer] = field(default_factory=dict)

    @property
    def aggregate(self) -> DatasetWer:
        total = DatasetWer()
        for d in self.datasets.values():
            total.substitutions += d.substitutions
            total.insertions += d.insertions
            total.deletions += d.deletions
            total.reference_words += d.reference_words
            total.evaluated += d.evaluated
            total.skipped += d.skipped
        return total

    def to_dict(self) -> dict:
        return {
            "datasets": {name: d.to_dict() for name, d in sorted(self.datasets.items())},
            "aggregate": self.aggregate.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def table(self) -> str:
        rows = [f"{'dataset':<24} {'eval':>6} {'skip':>5} {'S':>6} {'I':>6} {'D':>6} {'WER%':>7}"]
        for name, d in sorted(self.datasets.items()) + [("TOTAL", self.aggregate)]:
            rows.append(
                f"{name:<24} {d.evaluated:>6} {d.skipped:>5} {d.substitutions:>6} "
                f"{d.insertions:>6} {d.deletions:>6} {100.0 * d.wer:>7.2f}"
            )
        return "\n".join(rows)


@dataclass(frozen=True)
class EvalConfig:
    sample_cap: int = 24000
    max_ref_tokens: int = 145
    seed: int = 0


def evaluate(archive: Archive, transcribe, vocab: Vocabulary, cfg: EvalConfig = EvalConfig()) -> WerReport:
    """Score a transcriber over an archive, per dataset.

    ``transcribe`` maps a float waveform in [-1, 1] to hypothesis text
    (see GreedyTranscriber). Datasets larger than ``sample_cap`` records
    are sampled down without replacement under the report seed; records
    whose normalized reference exceeds ``max_ref_tokens`` WordPiece tokens
    are skipped and counted. Both sides are normalized before alignment.
    Deterministic for a fixed seed.
    """
    report = WerReport()
    for name, idxs in sorted(archive.indices_by_dataset().items()):
        stats = DatasetWer()
        report.datasets[name] = stats
        if len(idxs) > cfg.sample_cap:
            rng = np.random.default_rng((cfg.seed, *name.encode("utf-8")))
            chosen = rng.choice(len(idxs), size=cfg.sample_cap, replace=False)
            idxs = idxs[np.sort(chosen)]
        for i in idxs:
            record = archive.read_record(int(i))
            reference = normalize(record.transcript)
            if len(wordpieces(reference, vocab)) > cfg.max_ref_tokens:
                stats.skipped += 1
                continue
            hypothesis = normalize(transcribe(record.audio.astype(np.float64) / 32768.0))
            ref_words = reference.split()
            s, ins, dels = word_errors(ref_words, hypothesis.split())
            stats.substitutions += s
            stats.insertions += ins
            stats.deletions += dels
            stats.reference_words += len(ref_words)
            stats.evaluated += 1
    return report
