"""Experiment configuration: validation, precedence, presets, factor grid."""

import json

import pytest

from lungsound.config import (
    DATA_ROOT_ENV,
    ConfigError,
    ExperimentConfig,
    GridSpec,
    PRESETS,
    build_config,
)


class TestValidation:
    def test_defaults_are_valid(self):
        cfg = ExperimentConfig()
        assert cfg.task == 1
        assert cfg.frontend == "gamma"
        assert cfg.model == "cnn_moe"
        assert cfg.experts == 10

    def test_rejects_bad_values(self):
        for kwargs in (
            {"task": 3},
            {"frontend": "plp"},
            {"patch_width": 48},
            {"overlap": 0.25},
            {"model": "transformer"},
            {"split": "loocv"},
            {"experts": 0},
        ):
            with pytest.raises(ConfigError):
                ExperimentConfig(**kwargs)

    def test_n_classes_per_task(self):
        assert ExperimentConfig(task=1).n_classes == 4
        assert ExperimentConfig(task=2).n_classes == 3

    def test_mixup_pairing_per_task(self):
        assert ExperimentConfig(task=1).mixup_pairing == "normal_vs_anomaly"
        assert ExperimentConfig(task=2).mixup_pairing == "random"
        assert ExperimentConfig(task=1).mixup_config().task_pairing == "normal_vs_anomaly"
        assert ExperimentConfig(task=1, mixup=False).mixup_config() is None

    def test_env_fallback_for_data_root(self, monkeypatch):
        monkeypatch.setenv(DATA_ROOT_ENV, "/data/somewhere")
        assert ExperimentConfig().data_root == "/data/somewhere"
        assert ExperimentConfig(data_root="/explicit").data_root == "/explicit"
        monkeypatch.delenv(DATA_ROOT_ENV)
        assert ExperimentConfig().data_root == ""


class TestPresets:
    def test_task1_final(self):
        cfg = build_config(preset="task1-final")
        assert cfg.task == 1
        assert cfg.frontend == "gamma"
        assert cfg.patch_width == 64
        assert cfg.overlap == 0.0
        assert cfg.mixup is True
        assert cfg.model == "cnn_moe"
        assert cfg.experts == 10

    def test_task2_final(self):
        cfg = build_config(preset="task2-final")
        assert cfg.task == 2
        assert cfg.frontend == "logmel"
        assert cfg.patch_width == 128
        assert cfg.overlap == 0.5
        assert cfg.mixup is True
        assert cfg.model == "cnn_moe"
        assert cfg.experts == 10

    def test_unknown_preset(self):
        with pytest.raises(ConfigError, match="preset"):
            build_config(preset="task9-final")

    def test_presets_only_use_known_keys(self):
        for name in PRESETS:
            build_config(preset=name)  # must not raise


class TestPrecedence:
    def test_file_overrides_defaults(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"frontend": "cqt", "seed": 9}))
        cfg = build_config(file_path=path)
        assert cfg.frontend == "cqt"
        assert cfg.seed == 9

    def test_preset_overrides_file(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"frontend": "cqt", "seed": 9}))
        cfg = build_config(file_path=path, preset="task1-final")
        assert cfg.frontend == "gamma"  # preset wins
        assert cfg.seed == 9  # untouched by the preset

    def test_overrides_win(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"frontend": "cqt"}))
        cfg = build_config(file_path=path, preset="task1-final",
                           overrides={"frontend": "mfcc", "epochs": 3})
        assert cfg.frontend == "mfcc"
        assert cfg.epochs == 3

    def test_none_overrides_are_ignored(self):
        cfg = build_config(overrides={"frontend": None, "seed": 4})
        assert cfg.frontend == "gamma"
        assert cfg.seed == 4

    def test_unknown_keys_rejected(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"frontent": "cqt"}))
        with pytest.raises(ConfigError, match="frontent"):
            build_config(file_path=path)

    def test_unreadable_file(self, tmp_path):
        with pytest.raises(ConfigError):
            build_config(file_path=tmp_path / "missing.json")
        bad = tmp_path / "bad.json"
        bad.write_text("[1, 2]")
        with pytest.raises(ConfigError):
            build_config(file_path=bad)


class TestResolvedAndHash:
    def test_resolved_covers_every_field(self):
        cfg = ExperimentConfig()
        resolved = cfg.resolved()
        assert resolved["frontend"] == "gamma"
        assert resolved["task"] == 1
        assert len(resolved) == len(cfg.__dataclass_fields__)

    def test_hash_stable_and_sensitive(self):
        a = ExperimentConfig(seed=1)
        b = ExperimentConfig(seed=1)
        c = ExperimentConfig(seed=2)
        assert a.config_hash() == b.config_hash()
        assert a.config_hash() != c.config_hash()
        assert len(a.config_hash()) == 16

    def test_replace_revalidates(self):
        cfg = ExperimentConfig()
        assert cfg.replace(task=2).n_classes == 3
        with pytest.raises(ConfigError):
            cfg.replace(task=5)


class TestGrid:
    def test_axis_sizes(self):
        base = ExperimentConfig(epochs=1)
        assert len(GridSpec(("frontend",)).points(base)) == 4
        assert len(GridSpec(("overlap",)).points(base)) == 2
        assert len(GridSpec(("patch_width",)).points(base)) == 5
        assert len(GridSpec(("mixup",)).points(base)) == 2
        assert len(GridSpec(("frontend", "overlap")).points(base)) == 8

    def test_points_preserve_base_fields(self):
        base = ExperimentConfig(seed=42, epochs=7)
        for cfg in GridSpec(("frontend",)).points(base):
            assert cfg.seed == 42
            assert cfg.epochs == 7

    def test_axis_validation(self):
        with pytest.raises(ConfigError):
            GridSpec(())
        with pytest.raises(ConfigError):
            GridSpec(("frontend", "frontend"))
        with pytest.raises(ConfigError):
            GridSpec(("lr",))
