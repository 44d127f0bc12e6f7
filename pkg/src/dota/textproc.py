"""Transcript normalization and WordPiece tokenization.

Normalization lowercases, strips punctuation, separates adjacent digits and
collapses whitespace; it is idempotent and total. Tokenization is greedy
longest-match WordPiece over a plain-text vocabulary file (one token per
line, line number = id), with ``##`` marking word-continuation pieces.
"""

from __future__ import annotations

import re
import unicodedata

# Model-input token budget, framing tokens included.
MAX_TEXT_TOKENS = 146

# ASCII symbols removed on top of the Unicode P* categories.
_EXTRA_PUNCT = frozenset("$%&+=@#")

_DIGIT_GAP = re.compile(r"(?<=\d)(?=\d)")


def _is_punct(ch: str) -> bool:
    return ch in _EXTRA_PUNCT or unicodedata.category(ch).startswith("P")


def normalize(raw: str) -> str:
    """Normalize a transcript for training and scoring.

    Lowercases, replaces punctuation (and newlines) with spaces so words do
    not merge, inserts a space between adjacent digit characters, collapses
    whitespace runs, and strips the ends. Total and idempotent.
    """
    chars = []
    for ch in raw.lower():
        chars.append(" " if (ch == "\n" or _is_punct(ch)) else ch)
    text = _DIGIT_GAP.sub(" ", "".join(chars))
    return " ".join(text.split())


class Vocabulary:
    """Token-string <-> id map with the four reserved special tokens.

    The file format is one token per line (UTF-8); a token's id is its line
    number. ``[PAD]``, ``[UNK]``, ``[CLS]`` and ``[SEP]`` must be present;
    the latter two serve as begin-of-text and end-of-text.
    """

    PAD_TOKEN = "[PAD]"
    UNK_TOKEN = "[UNK]"
    BOS_TOKEN = "[CLS]"
    EOS_TOKEN = "[SEP]"

    def __init__(self, tokens: list[str]):
        self.id_to_token = list(tokens)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValueError("vocabulary contains duplicate tokens")
        for special in (self.PAD_TOKEN, self.UNK_TOKEN, self.BOS_TOKEN, self.EOS_TOKEN):
            if special not in self.token_to_id:
                raise ValueError(f"vocabulary is missing special token {special!r}")
        self.pad_id = self.token_to_id[self.PAD_TOKEN]
        self.unk_id = self.token_to_id[self.UNK_TOKEN]
        self.bos_id = self.token_to_id[self.BOS_TOKEN]
        self.eos_id = self.token_to_id[self.EOS_TOKEN]
        self.special_ids = frozenset((self.pad_id, self.unk_id, self.bos_id, self.eos_id))

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as f:
            tokens = [line.rstrip("\r\n") for line in f]
        # tolerate a single trailing blank line
        if tokens and tokens[-1] == "":
            tokens.pop()
        return cls(tokens)

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id


def wordpieces(text: str, vocab: Vocabulary, max_chars_per_word: int = 100) -> list[str]:
    """Segment normalized text into WordPiece tokens (no truncation).

    Each whitespace word is split greedily, always taking the longest prefix
    present in the vocabulary; pieces after the first carry the ``##``
    prefix. A word with no valid segmentation (or longer than
    ``max_chars_per_word``) becomes a single ``[UNK]``.
    """
    pieces: list[str] = []
    for word in text.split():
        if len(word) > max_chars_per_word:
            pieces.append(vocab.UNK_TOKEN)
            continue
        start = 0
        word_pieces: list[str] = []
        while start < len(word):
            end = len(word)
            match = None
            while start < end:
                sub = word[start:end]
                if start > 0:
                    sub = "##" + sub
                if sub in vocab:
                    match = sub
                    break
                end -= 1
            if match is None:
                word_pieces = [vocab.UNK_TOKEN]
                break
            word_pieces.append(match)
            start = end
        pieces.extend(word_pieces)
    return pieces


def tokenize(text: str, vocab: Vocabulary, max_tokens: int | None = MAX_TEXT_TOKENS) -> list[int]:
    """Tokenize normalized text to ids, truncated to ``max_tokens``."""
    ids = [vocab.token_to_id[p] for p in wordpieces(text, vocab)]
    if max_tokens is not None:
        ids = ids[:max_tokens]
    return ids


def detokenize(ids, vocab: Vocabulary) -> str:
    """Inverse of :func:`tokenize` on fully in-vocabulary text.

    ``##`` continuation pieces are merged onto the preceding word without a
    space; the special tokens are dropped. Raises ``ValueError`` on
    out-of-range ids.
    """
    words: list[str] = []
    for i in ids:
        i = int(i)
        if not 0 <= i < len(vocab):
            raise ValueError(f"token id {i} out of range for vocabulary of size {len(vocab)}")
        if i in vocab.special_ids:
            continue
        tok = vocab.id_to_token[i]
        if tok.startswith("##") and words:
            words[-1] += tok[2:]
        else:
            words.append(tok[2:] if tok.startswith("##") else tok)
    return " ".join(words)
