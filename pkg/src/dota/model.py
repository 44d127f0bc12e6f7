"""Decoder-only transformer over concatenated audio frames and text tokens.

A single pre-norm decoder stack. Stacked log-mel frames and token
embeddings are each linearly projected to the model dimension,
concatenated (audio first), given sinusoidal positions over the whole
sequence, and run through the blocks under either a causal mask or the
prefix-LM variant where audio positions also see audio to their right.
Logits are produced only at text positions; position t predicts token t+1.

Forward and backward passes are written out explicitly so analytic
gradients can be validated against finite differences; everything runs on
plain float64 or float32 numpy arrays.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

LN_EPS = 1e-5
INIT_STD = 0.02


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int
    model_dim: int
    n_heads: int
    embed_dim: int
    stack_factor: int
    vocab_size: int
    max_text_tokens: int = 146
    bidirectional_audio: bool = False
    n_mels: int = 80

    def __post_init__(self):
        if self.model_dim % self.n_heads != 0:
            raise ValueError("model_dim must be divisible by n_heads")
        if self.model_dim % 2 != 0:
            raise ValueError("model_dim must be even for sinusoidal positions")
        for f in ("n_layers", "model_dim", "n_heads", "embed_dim", "stack_factor", "vocab_size"):
            if getattr(self, f) < 1:
                raise ValueError(f"{f} must be positive")

    @property
    def ff_dim(self) -> int:
        # feed-forward width is fixed at 4x the model dimension
        return 4 * self.model_dim

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.n_heads

    @property
    def audio_width(self) -> int:
        return self.n_mels * self.stack_factor


@dataclass(frozen=True)
class AttentionMaskSpec:
    n_audio: int
    n_text: int
    bidirectional_audio: bool = False


def build_mask(spec: AttentionMaskSpec) -> np.ndarray:
    """Boolean (n_audio+n_text)^2 matrix; True means i may attend to j.

    Causal mode allows j <= i. The prefix-LM ("bidirec") mode additionally
    lets audio positions see all audio positions; text stays causal in
    both.
    """
    if spec.n_audio < 0 or spec.n_text < 0:
        raise ValueError("position counts must be non-negative")
    n = spec.n_audio + spec.n_text
    i = np.arange(n)[:, None]
    j = np.arange(n)[None, :]
    allowed = j <= i
    if spec.bidirectional_audio:
        allowed = allowed | ((i < spec.n_audio) & (j < spec.n_audio))
    return allowed


def sinusoidal_positions(n: int, d: int) -> np.ndarray:
    """Interleaved sin/cos position encoding, shape (n, d).

    Entry (pos, 2i) = sin(pos / 10000^(2i/d)), entry (pos, 2i+1) the cosine
    of the same angle.
    """
    if d % 2 != 0:
        raise ValueError("dimension must be even")
    pos = np.arange(n, dtype=np.float64)[:, None]
    idx = np.arange(d // 2, dtype=np.float64)[None, :]
    angles = pos / np.power(10000.0, 2.0 * idx / d)
    out = np.empty((n, d), dtype=np.float64)
    out[:, 0::2] = np.sin(angles)
    out[:, 1::2] = np.cos(angles)
    return out


@functools.lru_cache(maxsize=8)
def _cached_positions(n: int, d: int) -> np.ndarray:
    out = sinusoidal_positions(n, d)
    out.setflags(write=False)
    return out


# ---------------------------------------------------------------------------
# parameters

def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Name -> shape map for every learnable tensor, in creation order."""
    d, e, v, f = cfg.model_dim, cfg.embed_dim, cfg.vocab_size, cfg.audio_width
    shapes: dict[str, tuple[int, ...]] = {
        "audio_proj.w": (f, d),
        "audio_proj.b": (d,),
        "tok_embed.w": (v, e),
        "tok_proj.w": (e, d),
        "tok_proj.b": (d,),
    }
    for i in range(cfg.n_layers):
        p = f"layers.{i}"
        shapes[f"{p}.ln1.g"] = (d,)
        shapes[f"{p}.ln1.b"] = (d,)
        for name in ("wq", "wk", "wv", "wo"):
            shapes[f"{p}.attn.{name}"] = (d, d)
        for name in ("bq", "bk", "bv", "bo"):
            shapes[f"{p}.attn.{name}"] = (d,)
        shapes[f"{p}.ln2.g"] = (d,)
        shapes[f"{p}.ln2.b"] = (d,)
        shapes[f"{p}.ff.w1"] = (d, cfg.ff_dim)
        shapes[f"{p}.ff.b1"] = (cfg.ff_dim,)
        shapes[f"{p}.ff.w2"] = (cfg.ff_dim, d)
        shapes[f"{p}.ff.b2"] = (d,)
    shapes["ln_f.g"] = (d,)
    shapes["ln_f.b"] = (d,)
    # factored head: model_dim -> embed_dim -> vocab, untied from tok_embed
    shapes["head_proj.w"] = (d, e)
    shapes["head_proj.b"] = (e,)
    shapes["head_out.w"] = (e, v)
    shapes["head_out.b"] = (v,)
    return shapes


def n_params(cfg: ModelConfig) -> int:
    return sum(int(np.prod(s)) for s in param_shapes(cfg).values())


_RESIDUAL_OUT_LEAVES = ("attn.wo", "ff.w2")


def init_params(cfg: ModelConfig, seed: int) -> dict[str, np.ndarray]:
    """Scaled-normal initialization, deterministic under the seed.

    Weights are N(0, 0.02^2); the projections that write into the residual
    stream are shrunk by 1/sqrt(2*n_layers). Biases start at zero, layer
    norm gains at one.
    """
    rng = np.random.default_rng(seed)
    residual_scale = 1.0 / math.sqrt(2.0 * cfg.n_layers)
    params: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "g":
            params[name] = np.ones(shape, dtype=np.float64)
        elif leaf.startswith("b"):
            params[name] = np.zeros(shape, dtype=np.float64)
        else:
            std = INIT_STD
            if any(name.endswith(suffix) for suffix in _RESIDUAL_OUT_LEAVES):
                std *= residual_scale
            params[name] = rng.normal(0.0, std, size=shape)
    return params


def is_decayable(name: str) -> bool:
    """Weight matrices get weight decay; biases and layer-norm parameters
    never do. Raises on unrecognized names so the partition stays
    exhaustive."""
    leaf = name.rsplit(".", 1)[-1]
    if leaf in ("w", "wq", "wk", "wv", "wo", "w1", "w2"):
        return True
    if leaf in ("b", "bq", "bk", "bv", "bo", "b1", "b2", "g"):
        return False
    raise ValueError(f"cannot classify parameter {name!r} for weight decay")


# ---------------------------------------------------------------------------
# layer primitives (forward returns a cache consumed by the backward pass)

def _linear(x, w, b):
    return x @ w + b


def _linear_bwd(dy, x, w):
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    dw = x2.T @ dy2
    db = dy2.sum(axis=0)
    dx = dy @ w.T
    return dx, dw, db


def _layer_norm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return g * xhat + b, (xhat, inv, g)


def _layer_norm_bwd(dy, cache):
    xhat, inv, g = cache
    axes = tuple(range(dy.ndim - 1))
    dg = (dy * xhat).sum(axis=axes)
    db = dy.sum(axis=axes)
    dxhat = dy * g
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv * (dxhat - m1 - xhat * m2)
    return dx, dg, db


_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _gelu(u):
    return 0.5 * u * (1.0 + erf(u / _SQRT2))


def _gelu_grad(u):
    return 0.5 * (1.0 + erf(u / _SQRT2)) + u * np.exp(-0.5 * u * u) * _INV_SQRT_2PI


def _split_heads(x, n_heads):
    b, s, d = x.shape
    return x.reshape(b, s, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, h, s, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, s, h * dh)


def _attention(h, p, prefix, mask, cfg):
    q = _split_heads(_linear(h, p[f"{prefix}.wq"], p[f"{prefix}.bq"]), cfg.n_heads)
    k = _split_heads(_linear(h, p[f"{prefix}.wk"], p[f"{prefix}.bk"]), cfg.n_heads)
    v = _split_heads(_linear(h, p[f"{prefix}.wv"], p[f"{prefix}.bv"]), cfg.n_heads)
    scale = 1.0 / math.sqrt(cfg.head_dim)
    scores = (q @ k.transpose(0, 1, 3, 2)) * scale
    scores = np.where(mask, scores, -np.inf)
    scores -= scores.max(axis=-1, keepdims=True)
    probs = np.exp(scores)
    probs /= probs.sum(axis=-1, keepdims=True)
    ctx = _merge_heads(probs @ v)
    out = _linear(ctx, p[f"{prefix}.wo"], p[f"{prefix}.bo"])
    return out, (h, q, k, v, probs, ctx)


def _attention_bwd(dout, cache, p, prefix, cfg, grads):
    h, q, k, v, probs, ctx = cache
    scale = 1.0 / math.sqrt(cfg.head_dim)
    dctx, dwo, dbo = _linear_bwd(dout, ctx, p[f"{prefix}.wo"])
    grads[f"{prefix}.wo"] = dwo
    grads[f"{prefix}.bo"] = dbo
    dctx_h = _split_heads(dctx, cfg.n_heads)
    dprobs = dctx_h @ v.transpose(0, 1, 3, 2)
    dv = probs.transpose(0, 1, 3, 2) @ dctx_h
    # softmax jacobian; masked entries have probs == 0 and drop out
    dscores = probs * (dprobs - (dprobs * probs).sum(axis=-1, keepdims=True))
    dq = (dscores @ k) * scale
    dk = (dscores.transpose(0, 1, 3, 2) @ q) * scale
    dh = np.zeros_like(h)
    for name, dval in (("wq", dq), ("wk", dk), ("wv", dv)):
        dmerged = _merge_heads(dval)
        dx, dw, db = _linear_bwd(dmerged, h, p[f"{prefix}.{name}"])
        grads[f"{prefix}.{name}"] = dw
        grads[f"{prefix}.b{name[1]}"] = db
        dh += dx
    return dh


def _ffn(h, p, prefix):
    u = _linear(h, p[f"{prefix}.w1"], p[f"{prefix}.b1"])
    a = _gelu(u)
    out = _linear(a, p[f"{prefix}.w2"], p[f"{prefix}.b2"])
    return out, (h, u, a)


def _ffn_bwd(dout, cache, p, prefix, grads):
    h, u, a = cache
    da, dw2, db2 = _linear_bwd(dout, a, p[f"{prefix}.w2"])
    grads[f"{prefix}.w2"] = dw2
    grads[f"{prefix}.b2"] = db2
    du = da * _gelu_grad(u)
    dh, dw1, db1 = _linear_bwd(du, h, p[f"{prefix}.w1"])
    grads[f"{prefix}.w1"] = dw1
    grads[f"{prefix}.b1"] = db1
    return dh


# ---------------------------------------------------------------------------
# full model

@dataclass
class ForwardCache:
    cfg: ModelConfig
    p: dict[str, np.ndarray]  # compute-dtype view of the parameters
    feats: np.ndarray
    tokens: np.ndarray
    emb: np.ndarray
    n_audio: int
    layer_caches: list[tuple]
    lnf_cache: tuple
    hidden: np.ndarray
    ht: np.ndarray
    z: np.ndarray


def _as_batched(feats, tokens, cfg):
    feats = np.asarray(feats)
    tokens = np.asarray(tokens, dtype=np.int64)
    unbatched = feats.ndim == 2
    if unbatched:
        feats = feats[None]
        tokens = tokens[None]
    if feats.ndim != 3 or feats.shape[-1] != cfg.audio_width:
        raise ValueError(
            f"features must be (batch, frames, {cfg.audio_width}), got {feats.shape}"
        )
    if tokens.ndim != 2 or tokens.shape[0] != feats.shape[0]:
        raise ValueError(f"tokens must be (batch, n_text), got {tokens.shape}")
    if tokens.shape[1] > cfg.max_text_tokens:
        raise ValueError(f"text length {tokens.shape[1]} exceeds {cfg.max_text_tokens}")
    if tokens.size and (tokens.min() < 0 or tokens.max() >= cfg.vocab_size):
        raise ValueError("token id out of range")
    return feats, tokens, unbatched


def forward_cached(
    params: dict[str, np.ndarray],
    cfg: ModelConfig,
    feats: np.ndarray,
    tokens: np.ndarray,
    dtype=np.float64,
) -> tuple[np.ndarray, ForwardCache]:
    """Batched forward pass keeping every activation needed for backward.

    feats: (batch, n_audio, 80*k), tokens: (batch, n_text) ids. Returns
    logits (batch, n_text, vocab) and the cache.
    """
    feats, tokens, _ = _as_batched(feats, tokens, cfg)
    p = {k: v.astype(dtype, copy=False) for k, v in params.items()}
    feats = feats.astype(dtype, copy=False)
    n_audio = feats.shape[1]
    n_text = tokens.shape[1]

    xa = _linear(feats, p["audio_proj.w"], p["audio_proj.b"])
    emb = p["tok_embed.w"][tokens]
    xt = _linear(emb, p["tok_proj.w"], p["tok_proj.b"])
    x = np.concatenate([xa, xt], axis=1)
    x = x + _cached_positions(n_audio + n_text, cfg.model_dim).astype(dtype)

    mask = build_mask(AttentionMaskSpec(n_audio, n_text, cfg.bidirectional_audio))
    layer_caches = []
    for i in range(cfg.n_layers):
        h1, ln1c = _layer_norm(x, p[f"layers.{i}.ln1.g"], p[f"layers.{i}.ln1.b"])
        attn_out, attnc = _attention(h1, p, f"layers.{i}.attn", mask, cfg)
        x = x + attn_out
        h2, ln2c = _layer_norm(x, p[f"layers.{i}.ln2.g"], p[f"layers.{i}.ln2.b"])
        ff_out, ffc = _ffn(h2, p, f"layers.{i}.ff")
        x = x + ff_out
        layer_caches.append((ln1c, attnc, ln2c, ffc))

    hidden, lnfc = _layer_norm(x, p["ln_f.g"], p["ln_f.b"])
    ht = hidden[:, n_audio:]
    z = _linear(ht, p["head_proj.w"], p["head_proj.b"])
    logits = _linear(z, p["head_out.w"], p["head_out.b"])
    cache = ForwardCache(
        cfg=cfg, p=p, feats=feats, tokens=tokens, emb=emb, n_audio=n_audio,
        layer_caches=layer_caches, lnf_cache=lnfc, hidden=hidden, ht=ht, z=z,
    )
    return logits, cache


def backward(cache: ForwardCache, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss given d(loss)/d(logits)."""
    cfg, p = cache.cfg, cache.p
    grads: dict[str, np.ndarray] = {}
    dlogits = np.asarray(dlogits, dtype=cache.z.dtype)

    dz, dw, db = _linear_bwd(dlogits, cache.z, p["head_out.w"])
    grads["head_out.w"], grads["head_out.b"] = dw, db
    dht, dw, db = _linear_bwd(dz, cache.ht, p["head_proj.w"])
    grads["head_proj.w"], grads["head_proj.b"] = dw, db

    dhidden = np.zeros_like(cache.hidden)
    dhidden[:, cache.n_audio :] = dht
    dx, dg, db = _layer_norm_bwd(dhidden, cache.lnf_cache)
    grads["ln_f.g"], grads["ln_f.b"] = dg, db

    for i in reversed(range(cfg.n_layers)):
        ln1c, attnc, ln2c, ffc = cache.layer_caches[i]
        dh2 = _ffn_bwd(dx, ffc, p, f"layers.{i}.ff", grads)
        dx1, dg, db = _layer_norm_bwd(dh2, ln2c)
        grads[f"layers.{i}.ln2.g"], grads[f"layers.{i}.ln2.b"] = dg, db
        dx = dx + dx1
        dh1 = _attention_bwd(dx, attnc, p, f"layers.{i}.attn", cfg, grads)
        dx0, dg, db = _layer_norm_bwd(dh1, ln1c)
        grads[f"layers.{i}.ln1.g"], grads[f"layers.{i}.ln1.b"] = dg, db
        dx = dx + dx0

    dxa = dx[:, : cache.n_audio]
    dxt = dx[:, cache.n_audio :]
    _, dw, db = _linear_bwd(dxa, cache.feats, p["audio_proj.w"])
    grads["audio_proj.w"], grads["audio_proj.b"] = dw, db
    demb, dw, db = _linear_bwd(dxt, cache.emb, p["tok_proj.w"])
    grads["tok_proj.w"], grads["tok_proj.b"] = dw, db
    dembed = np.zeros_like(p["tok_embed.w"])
    np.add.at(dembed, cache.tokens.ravel(), demb.reshape(-1, cfg.embed_dim))
    grads["tok_embed.w"] = dembed
    return grads


def forward(
    params: dict[str, np.ndarray],
    cfg: ModelConfig,
    feats: np.ndarray,
    tokens: np.ndarray,
    dtype=np.float64,
    return_hidden: bool = False,
):
    """Logits at text positions, (n_text, vocab); batched inputs give a
    (batch, n_text, vocab) result. With ``return_hidden`` also returns the
    final-layer hidden states over the whole sequence."""
    _, _, unbatched = _as_batched(feats, tokens, cfg)
    logits, cache = forward_cached(params, cfg, feats, tokens, dtype=dtype)
    if unbatched:
        logits = logits[0]
    if return_hidden:
        hidden = cache.hidden[0] if unbatched else cache.hidden
        return logits, hidden
    return logits
