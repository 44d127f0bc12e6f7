"""Run configuration: flat key-value files, named presets, env overrides.

The config file format is plain ``key = value`` lines (``#`` starts a
comment line); keys are dotted per section, e.g. ``model.n_layers = 16``
or ``augment.p_tempo = 0.2``. Unknown keys and ill-typed values are
rejected with the offending line. Every key can also be set through the
environment as ``DOTA_<KEY>`` with dots replaced by underscores
(``DOTA_TRAIN_BATCH_SIZE=8``); dynamic ``sampling.<dataset>`` weights are
file/CLI only. A ``preset`` key (or the --preset flag) applies a named
bundle of model settings before the remaining keys.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

from .augment import AugmentConfig
from .decode_eval import EvalConfig
from .frontend import FrontendConfig
from .model import ModelConfig
from .train import TrainConfig

ENV_PREFIX = "DOTA_"


class ConfigError(ValueError):
    pass


# key -> (type, default); defaults follow the published recipe where one
# exists (the base 16-layer/768-dim model, 2e-4 peak lr over 1M steps, ...).
REGISTRY: dict[str, tuple[type, object]] = {
    "model.n_layers": (int, 16),
    "model.model_dim": (int, 768),
    "model.n_heads": (int, 12),
    "model.embed_dim": (int, 128),
    "model.stack_factor": (int, 4),
    "model.vocab_size": (int, 30522),
    "model.max_text_tokens": (int, 146),
    "model.bidirectional_audio": (bool, False),
    "frontend.sample_rate": (int, 16000),
    "frontend.audio_seconds": (float, 30.0),
    "frontend.n_mels": (int, 80),
    "frontend.win_length": (int, 400),
    "frontend.hop_length": (int, 160),
    "frontend.n_fft": (int, 512),
    "frontend.fmin": (float, 0.0),
    "frontend.fmax": (float, 8000.0),
    "frontend.log_floor": (float, 1e-10),
    "frontend.normalize": (bool, True),
    "train.total_steps": (int, 1_000_000),
    "train.batch_size": (int, 128),
    "train.peak_lr": (float, 2e-4),
    "train.warmup_steps": (int, 1000),
    "train.beta1": (float, 0.9),
    "train.beta2": (float, 0.99),
    "train.weight_decay": (float, 0.1),
    "train.grad_clip_norm": (float, 1.0),
    "train.adam_epsilon": (float, 1e-8),
    "train.seed": (int, 0),
    "train.precision": (str, "high"),
    "train.log_every": (int, 1),
    "train.checkpoint_every": (int, 0),
    "augment.p_speed": (float, 1e-3),
    "augment.p_tempo": (float, 0.2),
    "augment.p_lowpass": (float, 1e-3),
    "augment.p_reverb": (float, 1e-3),
    "augment.factor_min": (float, 0.9),
    "augment.factor_max": (float, 1.1),
    "augment.p_concat": (float, 0.25),
    "augment.lowpass_pole_min": (float, 0.5),
    "augment.lowpass_pole_max": (float, 0.95),
    "augment.reverb_t60_min": (float, 0.1),
    "augment.reverb_t60_max": (float, 0.5),
    "augment.seed": (int, 0),
    "eval.sample_cap": (int, 24000),
    "eval.max_ref_tokens": (int, 145),
    "eval.seed": (int, 0),
    "vocab": (str, ""),
    "workers": (int, 1),
}

# Table-2 model configurations plus a desk-scale "toy" preset (not from the
# published recipe; for tests and demos).
PRESETS: dict[str, dict[str, object]] = {
    "dota-117m": {
        "model.n_layers": 16, "model.model_dim": 768, "model.n_heads": 12,
        "model.embed_dim": 128, "model.stack_factor": 4, "model.vocab_size": 30522,
    },
    "dota-306m-8x": {
        "model.n_layers": 24, "model.model_dim": 1024, "model.n_heads": 16,
        "model.embed_dim": 128, "model.stack_factor": 8, "model.vocab_size": 30522,
    },
    "dota-634m-8x": {
        "model.n_layers": 32, "model.model_dim": 1280, "model.n_heads": 20,
        "model.embed_dim": 128, "model.stack_factor": 8, "model.vocab_size": 30522,
    },
    "dota-634m-12x": {
        "model.n_layers": 32, "model.model_dim": 1280, "model.n_heads": 20,
        "model.embed_dim": 128, "model.stack_factor": 12, "model.vocab_size": 30522,
    },
    "toy": {
        "model.n_layers": 2, "model.model_dim": 64, "model.n_heads": 4,
        "model.embed_dim": 32, "model.stack_factor": 4, "model.vocab_size": 64,
        "frontend.audio_seconds": 3.0,
    },
}


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig
    train: TrainConfig
    augment: AugmentConfig
    frontend: FrontendConfig
    eval: EvalConfig
    vocab: str = ""
    workers: int = 1
    sampling: dict[str, int] = field(default_factory=dict)

    def to_flat_dict(self) -> dict[str, object]:
        out: dict[str, object] = {}
        for key in REGISTRY:
            section, _, name = key.partition(".")
            if not name:
                out[key] = getattr(self, key)
            else:
                out[key] = getattr(getattr(self, section), name)
        for ds, w in sorted(self.sampling.items()):
            out[f"sampling.{ds}"] = w
        return out

    def serialize(self) -> str:
        lines = []
        for key, value in self.to_flat_dict().items():
            if isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"


def _convert(key: str, raw: object, where: str):
    typ, _ = REGISTRY.get(key, (int, None))  # sampling.* weights are ints
    if isinstance(raw, str):
        text = raw.strip()
        try:
            if typ is bool:
                if text.lower() in ("true", "1", "yes"):
                    return True
                if text.lower() in ("false", "0", "no"):
                    return False
                raise ValueError
            if typ is int:
                return int(text)
            if typ is float:
                return float(text)
            return text
        except ValueError:
            raise ConfigError(f"{where}: expected {typ.__name__} for {key!r}, got {text!r}") from None
    if typ is float and isinstance(raw, int) and not isinstance(raw, bool):
        return float(raw)
    if not isinstance(raw, typ) or (typ is int and isinstance(raw, bool)):
        raise ConfigError(f"{where}: expected {typ.__name__} for {key!r}, got {raw!r}")
    return raw


def _apply_preset(values: dict, name: str, where: str) -> None:
    if name not in PRESETS:
        raise ConfigError(f"{where}: unknown preset {name!r} (choose from {sorted(PRESETS)})")
    values.update(PRESETS[name])


def _build(values: dict[str, object], sampling: dict[str, int]) -> RunConfig:
    def section(prefix):
        return {k.split(".", 1)[1]: v for k, v in values.items() if k.startswith(prefix + ".")}

    try:
        frontend = FrontendConfig(**section("frontend"))
        model = ModelConfig(**section("model"), n_mels=frontend.n_mels)
        train = TrainConfig(**section("train"))
        augment = AugmentConfig(**section("augment"))
        eval_cfg = EvalConfig(**section("eval"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if frontend.n_frames % model.stack_factor != 0:
        raise ConfigError(
            f"frontend yields {frontend.n_frames} frames, not divisible by "
            f"model.stack_factor = {model.stack_factor}"
        )
    return RunConfig(
        model=model, train=train, augment=augment, frontend=frontend, eval=eval_cfg,
        vocab=str(values["vocab"]), workers=int(values["workers"]), sampling=sampling,
    )


def parse_config_text(
    text: str,
    source: str = "<config>",
    preset: str | None = None,
    overrides: dict[str, object] | None = None,
    env: dict[str, str] | None = None,
) -> RunConfig:
    """Parse config text plus preset/env/override layers into a RunConfig.

    Precedence, lowest to highest: defaults, --preset, file contents (a
    ``preset`` line expands where it appears), environment variables,
    explicit overrides.
    """
    values = {key: default for key, (_, default) in REGISTRY.items()}
    sampling: dict[str, int] = {}
    if preset is not None:
        _apply_preset(values, preset, "--preset")

    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        where = f"{source}:{lineno}"
        if "=" not in stripped:
            raise ConfigError(f"{where}: expected 'key = value', got {stripped!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key == "preset":
            _apply_preset(values, raw, where)
        elif key.startswith("sampling."):
            ds = key.split(".", 1)[1]
            weight = _convert(key, raw, where)
            if weight < 1:
                raise ConfigError(f"{where}: sampling weight for {ds!r} must be >= 1")
            sampling[ds] = weight
        elif key in REGISTRY:
            values[key] = _convert(key, raw, where)
        else:
            raise ConfigError(f"{where}: unknown key {key!r}")

    env = os.environ if env is None else env
    for key in REGISTRY:
        env_name = ENV_PREFIX + key.upper().replace(".", "_")
        if env_name in env:
            values[key] = _convert(key, env[env_name], f"${env_name}")

    for key, raw in (overrides or {}).items():
        if key.startswith("sampling."):
            sampling[key.split(".", 1)[1]] = _convert(key, raw, "override")
        elif key in REGISTRY:
            values[key] = _convert(key, raw, "override")
        else:
            raise ConfigError(f"override: unknown key {key!r}")

    return _build(values, sampling)


def parse_config(
    path=None,
    preset: str | None = None,
    overrides: dict[str, object] | None = None,
    env: dict[str, str] | None = None,
) -> RunConfig:
    """Load a RunConfig from an optional file (see parse_config_text)."""
    if path is None:
        return parse_config_text("", preset=preset, overrides=overrides, env=env)
    with open(path, encoding="utf-8") as f:
        text = f.read()
    return parse_config_text(text, source=os.fspath(path), preset=preset, overrides=overrides, env=env)


def from_flat_dict(flat: dict[str, object]) -> RunConfig:
    """Rebuild a RunConfig from to_flat_dict() output (e.g. a checkpoint
    header); unknown keys are rejected."""
    values = {key: default for key, (_, default) in REGISTRY.items()}
    sampling: dict[str, int] = {}
    for key, raw in flat.items():
        if key.startswith("sampling."):
            sampling[key.split(".", 1)[1]] = _convert(key, raw, "config dict")
        elif key in REGISTRY:
            values[key] = _convert(key, raw, "config dict")
        else:
            raise ConfigError(f"config dict: unknown key {key!r}")
    return _build(values, sampling)
