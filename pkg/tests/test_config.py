import pytest

from dota.config import (
    PRESETS,
    ConfigError,
    RunConfig,
    from_flat_dict,
    parse_config,
    parse_config_text,
)


class TestPresets:
    def test_117m(self):
        cfg = parse_config(preset="dota-117m", env={})
        m = cfg.model
        assert (m.n_layers, m.model_dim, m.n_heads, m.stack_factor) == (16, 768, 12, 4)
        assert m.embed_dim == 128 and m.vocab_size == 30522
        assert m.ff_dim == 4 * 768

    @pytest.mark.parametrize(
        "name,layers,dim,heads,k",
        [
            ("dota-306m-8x", 24, 1024, 16, 8),
            ("dota-634m-8x", 32, 1280, 20, 8),
            ("dota-634m-12x", 32, 1280, 20, 12),
        ],
    )
    def test_table_rows(self, name, layers, dim, heads, k):
        m = parse_config(preset=name, env={}).model
        assert (m.n_layers, m.model_dim, m.n_heads, m.stack_factor) == (layers, dim, heads, k)
        # implied model frame period in ms
        assert m.stack_factor * 10 in (40, 80, 120)

    def test_toy(self):
        cfg = parse_config(preset="toy", env={})
        assert cfg.model.vocab_size == 64
        assert cfg.frontend.audio_seconds == 3.0
        assert cfg.frontend.n_frames == 300

    def test_unknown_preset(self):
        with pytest.raises(ConfigError, match="unknown preset"):
            parse_config(preset="dota-9000t", env={})


class TestParsing:
    def test_empty_gives_defaults(self):
        cfg = parse_config_text("", env={})
        assert cfg.model.n_layers == 16
        assert cfg.train.peak_lr == 2e-4
        assert cfg.train.total_steps == 1_000_000
        assert cfg.train.warmup_steps == 1000
        assert cfg.train.beta1 == 0.9 and cfg.train.beta2 == 0.99
        assert cfg.train.weight_decay == 0.1
        assert cfg.train.grad_clip_norm == 1.0
        assert cfg.augment.p_concat == 0.25
        assert cfg.eval.sample_cap == 24000 and cfg.eval.max_ref_tokens == 145

    def test_misspelled_key_named(self):
        with pytest.raises(ConfigError, match="model.n_layer"):
            parse_config_text("model.n_layer = 4", env={})

    def test_line_number_in_errors(self):
        with pytest.raises(ConfigError, match=":3"):
            parse_config_text("\n# fine\ntrain.batch_size = soup", env={})

    def test_type_mismatch(self):
        with pytest.raises(ConfigError, match="expected int"):
            parse_config_text("train.total_steps = 1.5", env={})
        with pytest.raises(ConfigError, match="expected float"):
            parse_config_text("train.peak_lr = fast", env={})
        with pytest.raises(ConfigError, match="expected bool"):
            parse_config_text("model.bidirectional_audio = sideways", env={})

    def test_invariant_violation(self):
        with pytest.raises(ConfigError, match="divisible"):
            parse_config_text("model.stack_factor = 7", env={})
        with pytest.raises(ConfigError, match="warmup"):
            parse_config_text("train.total_steps = 10\ntrain.warmup_steps = 10", env={})

    def test_preset_line_then_overrides(self):
        cfg = parse_config_text("preset = toy\nmodel.n_layers = 3", env={})
        assert cfg.model.n_layers == 3
        assert cfg.model.vocab_size == 64

    def test_comments_and_blanks(self):
        cfg = parse_config_text("# a comment\n\ntrain.seed = 9\n", env={})
        assert cfg.train.seed == 9

    def test_sampling_weights(self):
        cfg = parse_config_text("sampling.voicemail = 2\nsampling.vctk = 3", env={})
        assert cfg.sampling == {"voicemail": 2, "vctk": 3}
        with pytest.raises(ConfigError, match=">= 1"):
            parse_config_text("sampling.x = 0", env={})

    def test_env_override(self):
        env = {"DOTA_TRAIN_BATCH_SIZE": "17", "DOTA_MODEL_BIDIRECTIONAL_AUDIO": "true"}
        cfg = parse_config_text("train.batch_size = 4", env=env)
        assert cfg.train.batch_size == 17
        assert cfg.model.bidirectional_audio is True

    def test_explicit_overrides_beat_env(self):
        env = {"DOTA_TRAIN_SEED": "5"}
        cfg = parse_config_text("", env=env, overrides={"train.seed": 6})
        assert cfg.train.seed == 6

    def test_vocab_and_workers(self):
        cfg = parse_config_text("vocab = /tmp/v.txt\nworkers = 3", env={})
        assert cfg.vocab == "/tmp/v.txt"
        assert cfg.workers == 3


class TestRoundTrip:
    def test_serialize_parse_identity(self):
        cfg = parse_config_text(
            "preset = toy\ntrain.seed = 5\nsampling.a = 2\nvocab = v.txt", env={}
        )
        again = parse_config_text(cfg.serialize(), env={})
        assert again == cfg

    def test_flat_dict_round_trip(self):
        cfg = parse_config_text("preset = dota-306m-8x\naugment.p_tempo = 0.0", env={})
        assert from_flat_dict(cfg.to_flat_dict()) == cfg

    def test_flat_dict_rejects_unknown(self):
        with pytest.raises(ConfigError, match="unknown key"):
            from_flat_dict({"model.n_layerz": 2})

    def test_all_presets_serializable(self):
        for name in PRESETS:
            cfg = parse_config(preset=name, env={})
            assert isinstance(cfg, RunConfig)
            assert parse_config_text(cfg.serialize(), env={}) == cfg
