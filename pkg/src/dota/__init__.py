"""Decoder-only transformer ASR toolkit.

Subpackages cover the full pipeline: dataset archives (`store`), transcript
normalization and WordPiece tokenization (`textproc`), the log-mel frontend
(`frontend`), waveform augmentation (`augment`), the transformer itself
(`model`), training (`train`), and greedy decoding plus WER scoring
(`decode_eval`). `cli` exposes everything as a single command-line tool.
"""

__version__ = "0.1.0"
