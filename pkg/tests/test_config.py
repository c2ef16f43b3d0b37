import dataclasses

import pytest
import torch

from driveseg import ConfigError, ModelConfig, ShapeError, validate_config
from driveseg.core import (FeaturePyramid, check_divisible, check_feature_map,
                           format_flat, parse_flat)
from driveseg.experiment import (ExperimentConfig, experiment_from_flat,
                                 load_experiment_config)


class TestValidateConfig:
    def test_default_accepted(self):
        cfg = validate_config(ModelConfig())
        assert cfg.encoder_strides == (2, 4, 8, 16, 32)

    def test_input_size_not_divisible(self):
        with pytest.raises(ConfigError, match="divisible by 32"):
            validate_config(ModelConfig(input_size=(500, 500)))

    def test_rbrm_requires_apud(self):
        with pytest.raises(ConfigError, match="use_apud"):
            validate_config(ModelConfig(use_rbrm=True, use_apud=False))

    def test_empty_dilations_rejected(self):
        with pytest.raises(ConfigError, match="nonempty"):
            validate_config(ModelConfig(aspp_dilations=()))

    def test_nonpositive_dilation_rejected(self):
        with pytest.raises(ConfigError, match=">= 1"):
            validate_config(ModelConfig(aspp_dilations=(0, 6)))

    def test_short_channel_list_rejected(self):
        with pytest.raises(ConfigError, match="5 entries"):
            validate_config(ModelConfig(encoder_channels=(32, 64, 128)))

    def test_odd_stage_channels_rejected(self):
        with pytest.raises(ConfigError, match="even"):
            validate_config(ModelConfig(encoder_channels=(32, 63, 128, 192, 256)))

    def test_fixed_strides_enforced(self):
        with pytest.raises(ConfigError, match="fixed"):
            validate_config(ModelConfig(encoder_strides=(1, 2, 4, 8, 16)))

    def test_overlong_decoder_list_truncated(self):
        cfg = validate_config(ModelConfig(decoder_channels=(256, 128, 64, 32, 16)))
        assert cfg.decoder_channels == (256, 128, 64, 32)

    def test_lists_normalized_to_tuples(self):
        cfg = validate_config(ModelConfig(encoder_channels=[32, 64, 128, 192, 256]))
        assert isinstance(cfg.encoder_channels, tuple)

    def test_round_trips_through_dict(self):
        cfg = validate_config(ModelConfig(use_rbrm=False, input_size=(64, 96)))
        again = ModelConfig.from_dict(cfg.to_dict())
        assert dataclasses.asdict(again) == dataclasses.asdict(cfg)

    def test_unknown_dict_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown"):
            ModelConfig.from_dict({"num_classe": 1})


class TestShapeHelpers:
    def test_check_feature_map_accepts_valid(self):
        x = torch.zeros(1, 3, 8, 8)
        assert check_feature_map(x, channels=3) is x

    def test_check_feature_map_rejects_3d(self):
        with pytest.raises(ShapeError, match="4-D"):
            check_feature_map(torch.zeros(3, 8, 8))

    def test_check_feature_map_rejects_wrong_channels(self):
        with pytest.raises(ShapeError, match="channels"):
            check_feature_map(torch.zeros(1, 4, 8, 8), channels=3)

    def test_check_divisible(self):
        with pytest.raises(ShapeError, match="divisible"):
            check_divisible(torch.zeros(1, 3, 100, 100), 32)

    def test_pyramid_strides_must_increase(self):
        maps = [(4, torch.zeros(1, 8, 8, 8)), (2, torch.zeros(1, 8, 16, 16))]
        with pytest.raises(ShapeError, match="increase"):
            FeaturePyramid(maps)

    def test_pyramid_lookup(self):
        pyr = FeaturePyramid([(2, torch.zeros(1, 4, 16, 16)),
                              (4, torch.zeros(1, 8, 8, 8))])
        assert pyr.at_stride(4).shape[1] == 8
        with pytest.raises(ShapeError):
            pyr.at_stride(16)


class TestFlatConfig:
    def test_parse_and_format_round_trip(self):
        cfg = ExperimentConfig()
        text = cfg.dump()
        flat = parse_flat(text)
        again = experiment_from_flat(flat)
        assert again == cfg

    def test_round_trip_preserves_overrides(self, tmp_path):
        path = tmp_path / "exp.cfg"
        path.write_text("model.input_size = 64,64\n"
                        "trainer.lr = 0.01\n"
                        "loss.gamma = 1.5\n"
                        "data.source = toy\n")
        cfg = load_experiment_config(path)
        assert cfg.model.input_size == (64, 64)
        assert cfg.trainer.lr == 0.01
        assert cfg.loss.gamma == 1.5
        again = experiment_from_flat(parse_flat(cfg.dump()))
        assert again == cfg

    def test_comments_and_blanks_ignored(self):
        flat = parse_flat("# a comment\n\nmodel.num_classes = 1  # tail\n")
        assert flat == {"model.num_classes": "1"}

    def test_malformed_line_reports_number(self):
        with pytest.raises(Exception, match=":2:"):
            parse_flat("model.num_classes = 1\nbogus line\n")

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown config key"):
            experiment_from_flat({"model.nope": "1"})

    def test_unknown_namespace_rejected(self):
        with pytest.raises(ConfigError, match="namespaces"):
            experiment_from_flat({"optimizer.lr": "0.1"})

    def test_bad_value_names_key_and_type(self):
        with pytest.raises(ConfigError, match="trainer.lr"):
            experiment_from_flat({"trainer.lr": "fast"})

    def test_overrides_apply_last(self, tmp_path):
        path = tmp_path / "exp.cfg"
        path.write_text("trainer.lr = 0.001\n")
        cfg = load_experiment_config(path, overrides=["trainer.lr=0.01"])
        assert cfg.trainer.lr == 0.01

    def test_format_flat_values(self):
        text = format_flat({"a.b": True, "a.c": (1, 2), "a.d": None})
        assert "a.b = true" in text
        assert "a.c = 1,2" in text
        assert "a.d = none" in text
