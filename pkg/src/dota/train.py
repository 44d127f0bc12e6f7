"""Cross-entropy training loop: AdamW, warmup+cosine schedule, selective
weight decay, gradient clipping, and the data pipeline feeding it.

The pipeline walks a deterministic shuffled epoch schedule, grows each
training instance by same-dataset concatenation or zero padding, runs the
augmentations and the log-mel frontend, and frames transcripts as
[begin] tokens [end] within the text budget. High-precision mode computes
everything in float64; reduced mode computes forward/backward in float32
while the optimizer keeps float64 master weights.
"""

from __future__ import annotations

import json
import math
import os
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .augment import AugmentConfig, assemble_instance
from .frontend import FrontendConfig, features
from .model import ModelConfig, backward, forward_cached, init_params, is_decayable
from .store import Archive, SamplingPlan, epoch_schedule
from .textproc import Vocabulary, normalize, tokenize


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int = 1_000_000
    batch_size: int = 128
    peak_lr: float = 2e-4
    warmup_steps: int = 1000
    beta1: float = 0.9
    beta2: float = 0.99
    weight_decay: float = 0.1
    grad_clip_norm: float = 1.0
    adam_epsilon: float = 1e-8
    seed: int = 0
    precision: str = "high"  # "high" = float64, "reduced" = float32 compute
    log_every: int = 1
    checkpoint_every: int = 0  # 0: final checkpoint only

    def __post_init__(self):
        if not 0 <= self.warmup_steps < self.total_steps:
            raise ValueError("warmup_steps must lie in [0, total_steps)")
        for name in ("peak_lr", "grad_clip_norm", "adam_epsilon"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must be in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.precision not in ("high", "reduced"):
            raise ValueError(f"precision must be 'high' or 'reduced', got {self.precision!r}")

    @property
    def compute_dtype(self):
        return np.float64 if self.precision == "high" else np.float32


class DivergenceError(RuntimeError):
    """Raised when the loss or the gradients go non-finite."""


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warmup to peak_lr over warmup_steps, then cosine decay to 0.

    Exact at the endpoints: lr_at(warmup_steps) == peak_lr and
    lr_at(total_steps) == 0.
    """
    if not 0 <= step <= cfg.total_steps:
        raise ValueError(f"step {step} outside [0, {cfg.total_steps}]")
    if step < cfg.warmup_steps:
        return cfg.peak_lr * step / cfg.warmup_steps
    progress = (step - cfg.warmup_steps) / (cfg.total_steps - cfg.warmup_steps)
    return cfg.peak_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def token_cross_entropy(logits, targets, mask):
    """Mean negative log-likelihood over unmasked positions.

    Returns (loss, dloss/dlogits). Shapes: logits (..., T, V), targets and
    mask (..., T). Raises on an all-masked batch.
    """
    logits = np.asarray(logits)
    targets = np.asarray(targets, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    n = int(mask.sum())
    if n == 0:
        raise ValueError("loss undefined: every position is masked")
    m = logits.max(axis=-1, keepdims=True)
    exp = np.exp(logits - m)
    z = exp.sum(axis=-1, keepdims=True)
    log_z = (m + np.log(z))[..., 0]
    target_logit = np.take_along_axis(logits, targets[..., None], axis=-1)[..., 0]
    nll = log_z - target_logit
    loss = float((nll * mask).sum() / n)

    dlogits = exp / z
    one = np.take_along_axis(dlogits, targets[..., None], axis=-1)
    np.put_along_axis(dlogits, targets[..., None], one - 1.0, axis=-1)
    dlogits *= (mask / n)[..., None]
    return loss, dlogits


def global_grad_norm(grads: dict[str, np.ndarray]) -> float:
    total = 0.0
    for g in grads.values():
        total += float(np.vdot(g, g).real)
    return math.sqrt(total)


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float = 1.0) -> dict[str, np.ndarray]:
    """Scale all gradients by max_norm/g when the global L2 norm g exceeds
    max_norm; raise DivergenceError on non-finite gradients."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient in {name}")
    norm = global_grad_norm(grads)
    if norm <= max_norm:
        return grads
    scale = max_norm / norm
    return {name: g * scale for name, g in grads.items()}


@dataclass
class OptState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0


def init_opt_state(params: dict[str, np.ndarray]) -> OptState:
    """Zeroed moments; also verifies the weight-decay partition covers every
    parameter exactly once (is_decayable raises on anything unclassified)."""
    for name in params:
        is_decayable(name)
    return OptState(
        m={k: np.zeros_like(v, dtype=np.float64) for k, v in params.items()},
        v={k: np.zeros_like(v, dtype=np.float64) for k, v in params.items()},
    )


def adamw_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: OptState,
    lr: float,
    cfg: TrainConfig,
) -> tuple[dict[str, np.ndarray], OptState]:
    """One decoupled-weight-decay Adam update (in place on the master
    parameters).

    Decay multiplies decayable parameters by (1 - lr*weight_decay) before
    the bias-corrected moment update is subtracted; biases and layer-norm
    parameters are never decayed.
    """
    state.step += 1
    t = state.step
    c1 = 1.0 - cfg.beta1**t
    c2 = 1.0 - cfg.beta2**t
    for name, p in params.items():
        if p.shape != grads[name].shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        g = np.asarray(grads[name], dtype=np.float64)
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        if is_decayable(name):
            p *= 1.0 - lr * cfg.weight_decay
        p -= lr * (m / c1) / (np.sqrt(v / c2) + cfg.adam_epsilon)
    return params, state


# ---------------------------------------------------------------------------
# data pipeline

@dataclass
class Batch:
    feats: np.ndarray  # (B, n_audio, 80*k) float64
    tokens: np.ndarray  # (B, T) int64, padded with pad_id
    targets: np.ndarray  # (B, T) int64; targets[b, j] = tokens[b, j+1]
    mask: np.ndarray  # (B, T) bool, True where a real target exists


def frame_transcript(transcripts: list[str], vocab: Vocabulary, max_tokens: int) -> list[int]:
    """[begin] + tokenized normalized text + [end], within max_tokens ids."""
    ids = tokenize(normalize(" ".join(transcripts)), vocab, max_tokens=max_tokens - 2)
    return [vocab.bos_id] + ids + [vocab.eos_id]


def batch_from_instances(items: list[tuple[np.ndarray, list[int]]], vocab: Vocabulary) -> Batch:
    """items: (features, framed token ids) per instance."""
    width = max(len(ids) for _, ids in items)
    b = len(items)
    tokens = np.full((b, width), vocab.pad_id, dtype=np.int64)
    targets = np.full((b, width), vocab.pad_id, dtype=np.int64)
    mask = np.zeros((b, width), dtype=bool)
    for i, (_, ids) in enumerate(items):
        n = len(ids)
        tokens[i, :n] = ids
        targets[i, : n - 1] = ids[1:]
        mask[i, : n - 1] = True
    feats = np.stack([f for f, _ in items])
    return Batch(feats=feats, tokens=tokens, targets=targets, mask=mask)


def _derived_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(parts).generate_state(1)[0])


class BatchPipeline:
    """Iterator of model-ready batches over one or more archives.

    Epochs follow epoch_schedule; a training instance seeds from the next
    scheduled record and concatenations pull later scheduled records of the
    same dataset, so per-epoch multiplicities are preserved exactly. Every
    instance gets its own generator seeded by (seed, instance index), which
    makes the data stream identical regardless of worker count.
    """

    def __init__(
        self,
        archives: list[Archive],
        vocab: Vocabulary,
        model_cfg: ModelConfig,
        frontend_cfg: FrontendConfig,
        augment_cfg: AugmentConfig,
        sampling_weights: dict[str, int],
        batch_size: int,
        seed: int,
        workers: int = 1,
    ):
        if frontend_cfg.n_frames % model_cfg.stack_factor != 0:
            raise ValueError(
                f"{frontend_cfg.n_frames} frames not divisible by stack factor {model_cfg.stack_factor}"
            )
        self.archives = archives
        self.vocab = vocab
        self.model_cfg = model_cfg
        self.frontend_cfg = frontend_cfg
        self.augment_cfg = augment_cfg
        self.sampling_weights = dict(sampling_weights)
        self.batch_size = batch_size
        self.seed = seed
        self._pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
        self._instance_idx = 0
        if sum(len(a) for a in archives) == 0:
            raise ValueError("cannot train on empty archives")

    def _epoch_instances(self, epoch: int):
        plan = SamplingPlan(self.sampling_weights, seed=_derived_seed(self.seed, 0, epoch))
        schedule = epoch_schedule(plan, self.archives)
        consumed = bytearray(len(schedule))
        by_dataset: dict[str, deque[int]] = {}
        names = [self.archives[a].dataset_of(r) for a, r in schedule]
        for pos, name in enumerate(names):
            by_dataset.setdefault(name, deque()).append(pos)

        def record_at(pos):
            a, r = schedule[pos]
            return self.archives[a].read_record(r)

        def continuation(pos):
            consumed[pos] = 1
            yield record_at(pos)
            dq = by_dataset[names[pos]]
            while True:
                while dq and consumed[dq[0]]:
                    dq.popleft()
                if not dq:
                    return
                nxt = dq.popleft()
                consumed[nxt] = 1
                yield record_at(nxt)

        for pos in range(len(schedule)):
            if consumed[pos]:
                continue
            rng = np.random.default_rng((self.seed, 1, self._instance_idx))
            self._instance_idx += 1
            yield assemble_instance(
                continuation(pos), self.augment_cfg, rng, self.frontend_cfg.n_samples
            )

    def _instances(self):
        epoch = 0
        while True:
            yield from self._epoch_instances(epoch)
            epoch += 1

    def _prepare(self, instance):
        wave, transcripts = instance
        feats = features(wave, self.frontend_cfg, self.model_cfg.stack_factor)
        framed = frame_transcript(transcripts, self.vocab, self.model_cfg.max_text_tokens)
        return feats, framed

    def __iter__(self):
        source = self._instances()
        while True:
            group = [next(source) for _ in range(self.batch_size)]
            if self._pool is not None:
                items = list(self._pool.map(self._prepare, group))
            else:
                items = [self._prepare(g) for g in group]
            yield batch_from_instances(items, self.vocab)

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()


# ---------------------------------------------------------------------------
# the loop

@dataclass
class TrainResult:
    final_checkpoint: str
    loss_log: str
    checkpoints: list[str] = field(default_factory=list)


def train_loop(
    archives: list[Archive],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    augment_cfg: AugmentConfig,
    frontend_cfg: FrontendConfig,
    vocab: Vocabulary,
    sampling_weights: dict[str, int],
    out_dir,
    workers: int = 1,
    config_dict: dict | None = None,
) -> TrainResult:
    """Run the full training loop and write checkpoints plus a JSONL loss
    log ({step, lr, loss, grad_norm} per line) under ``out_dir``.

    The final checkpoint is always written; intermediate ones follow
    train_cfg.checkpoint_every. Aborts with DivergenceError on a non-finite
    loss or gradient.
    """
    from .checkpoint import save_checkpoint

    os.makedirs(out_dir, exist_ok=True)
    log_path = os.path.join(out_dir, "loss_log.jsonl")
    params = init_params(model_cfg, train_cfg.seed)
    opt = init_opt_state(params)
    pipeline = BatchPipeline(
        archives, vocab, model_cfg, frontend_cfg, augment_cfg,
        sampling_weights, train_cfg.batch_size, train_cfg.seed, workers,
    )
    config_dict = config_dict or {}
    ckpt_dtype = "<f8" if train_cfg.precision == "high" else "<f4"
    result = TrainResult(final_checkpoint="", loss_log=log_path)
    dtype = train_cfg.compute_dtype

    batches = iter(pipeline)
    try:
        with open(log_path, "w") as logf:
            for step in range(1, train_cfg.total_steps + 1):
                batch = next(batches)
                lr = lr_at(step, train_cfg)
                logits, cache = forward_cached(
                    params, model_cfg, batch.feats, batch.tokens, dtype=dtype
                )
                loss, dlogits = token_cross_entropy(logits, batch.targets, batch.mask)
                if not math.isfinite(loss):
                    raise DivergenceError(f"non-finite loss at step {step}")
                grads = backward(cache, dlogits)
                grad_norm = global_grad_norm(grads)
                grads = clip_gradients(grads, train_cfg.grad_clip_norm)
                params, opt = adamw_step(params, grads, opt, lr, train_cfg)
                if step % train_cfg.log_every == 0 or step == train_cfg.total_steps:
                    logf.write(json.dumps(
                        {"step": step, "lr": lr, "loss": loss, "grad_norm": grad_norm}
                    ) + "\n")
                    logf.flush()
                if train_cfg.checkpoint_every and step % train_cfg.checkpoint_every == 0:
                    path = os.path.join(out_dir, f"checkpoint_{step:08d}.ckpt")
                    save_checkpoint(path, params, config_dict, dtype=ckpt_dtype)
                    result.checkpoints.append(path)
    finally:
        pipeline.close()

    final_path = os.path.join(out_dir, "checkpoint_final.ckpt")
    save_checkpoint(final_path, params, config_dict, dtype=ckpt_dtype)
    result.final_checkpoint = final_path
    result.checkpoints.append(final_path)
    return result
