"""Configuration types and the flat key = value file format."""

from __future__ import annotations

import pytest

from rsnlab.arch.config import (
    NetworkConfig,
    PRESET_NAMES,
    RSBConfig,
    branch_width_for,
    config_from_text,
    config_to_text,
    load_network_config,
    parse_input_size,
    save_network_config,
    with_input_size,
)
from rsnlab.errors import ConfigError


class TestRSBConfigValidation:
    def test_defaults_are_legal(self):
        cfg = RSBConfig(in_channels=64, out_channels=256, branch_width=26)
        assert cfg.branches == 4 and cfg.stride == 1

    @pytest.mark.parametrize("kw,msg", [
        (dict(branches=0), "branches"),
        (dict(branches=7), "branches"),
        (dict(branch_width=0), "branch_width"),
        (dict(stride=3), "stride"),
        (dict(fusion_mode="other"), "fusion_mode"),
        (dict(in_channels=0), "positive"),
        (dict(in_channels=9), "divisible"),
    ])
    def test_bad_values_rejected(self, kw, msg):
        base = dict(in_channels=8, out_channels=8, branch_width=2, branches=4)
        base.update(kw)
        with pytest.raises(ConfigError, match=msg):
            RSBConfig(**base)


class TestBranchWidth:
    def test_rounds_to_nearest_integer(self):
        assert branch_width_for(256, 1.0, 4.0) == 64
        assert branch_width_for(26, 1.0, 4.0) == 6   # 6.5 rounds to even
        assert branch_width_for(30, 1.0, 4.0) == 8   # 7.5 rounds to even
        assert branch_width_for(64, 1.625, 4.0) == 26

    def test_never_collapses_to_zero(self):
        assert branch_width_for(1, 0.01, 4.0) == 1


class TestNetworkConfigValidation:
    @pytest.mark.parametrize("kw,msg", [
        (dict(stages=3), "stages"),
        (dict(blocks=(1, 1, 1)), "exactly 4"),
        (dict(blocks=(1, 1, 1, 0)), "at least one block"),
        (dict(channels=(0, 8, 8, 8)), "positive"),
        (dict(branches=9), "branches"),
        (dict(fusion_mode="x"), "fusion_mode"),
        (dict(input_h=100), "multiple of 32"),
        (dict(input_w=0), "multiple of 32"),
        (dict(keypoints=0), "positive"),
        (dict(width_mult=0.0), "width_mult"),
        (dict(channels=(10, 8, 8, 8)), "adapt channels first"),
    ])
    def test_bad_values_rejected(self, kw, msg):
        base = dict(stages=1, blocks=(1, 1, 1, 1), channels=(8, 8, 8, 8),
                    stem_channels=8, input_h=64, input_w=64)
        base.update(kw)
        with pytest.raises(ConfigError, match=msg):
            NetworkConfig(**base)

    def test_heatmap_size_is_input_over_four(self):
        cfg = NetworkConfig()
        assert cfg.heatmap_size() == (64, 48)

    def test_with_input_size_replaces_only_the_input(self):
        cfg = with_input_size(NetworkConfig(), 384, 288)
        assert (cfg.input_h, cfg.input_w) == (384, 288)
        assert cfg.channels == NetworkConfig().channels


class TestTextFormat:
    def test_round_trip_preserves_every_field(self):
        cfg = NetworkConfig(stages=2, blocks=(3, 4, 6, 3), channels=(32, 64, 128, 256),
                            stem_channels=32, keypoints=14, input_h=128, input_w=96,
                            prm_enabled=False, upsample_channels=48, branches=4,
                            fusion_mode="baseline1", width_mult=1.25, expansion=4.0,
                            batchnorm=False)
        assert config_from_text(config_to_text(cfg)) == cfg

    def test_comments_and_blank_lines_ignored(self):
        text = "# a comment\n\nstages = 1  # trailing\nblocks=1,1,1,1\n"
        cfg = config_from_text(text)
        assert cfg.stages == 1 and cfg.blocks == (1, 1, 1, 1)

    def test_input_key_sets_both_dimensions(self):
        cfg = config_from_text("input = 128x96\n")
        assert (cfg.input_h, cfg.input_w) == (128, 96)

    @pytest.mark.parametrize("line,fragment", [
        ("stages", "expected 'key = value'"),
        ("stages = two", "wants an integer"),
        ("blocks = 1,a,1,1", "comma-separated ints"),
        ("prm_enabled = maybe", "wants true/false"),
        ("width_mult = soft", "wants a float"),
        ("colour = red", "unknown key"),
    ])
    def test_parse_errors_carry_source_and_line(self, line, fragment):
        text = "stages = 1\n" + line + "\n"
        with pytest.raises(ConfigError, match=fragment) as err:
            config_from_text(text, source="net.cfg")
        assert "net.cfg:2" in str(err.value)

    def test_semantic_errors_surface_as_config_errors(self):
        with pytest.raises(ConfigError, match="stages"):
            config_from_text("stages = 3\n")

    def test_save_and_load_through_a_file(self, tmp_path):
        cfg = NetworkConfig(stages=4, width_mult=1.832, upsample_channels=256)
        path = str(tmp_path / "net.cfg")
        save_network_config(cfg, path)
        assert load_network_config(path) == cfg


class TestInputSizeParsing:
    def test_accepts_lower_and_upper_x(self):
        assert parse_input_size("256x192") == (256, 192)
        assert parse_input_size("256X192") == (256, 192)

    @pytest.mark.parametrize("bad", ["256", "256x192x3", "axb"])
    def test_rejects_malformed_sizes(self, bad):
        with pytest.raises(ConfigError, match="256x192"):
            parse_input_size(bad)


class TestPresetLoading:
    @pytest.mark.parametrize("name", PRESET_NAMES)
    def test_every_preset_parses(self, name):
        cfg = load_network_config(name)
        assert isinstance(cfg, NetworkConfig)

    def test_cfg_suffix_is_accepted(self):
        assert load_network_config("rsn18.cfg") == load_network_config("rsn18")

    def test_unknown_preset_lists_the_options(self):
        with pytest.raises(ConfigError, match="rsn18"):
            load_network_config("rsn99")

    def test_single_and_multi_stage_presets_share_the_backbone(self):
        one = load_network_config("rsn50")
        four = load_network_config("rsn50x4")
        assert one.blocks == four.blocks == (3, 4, 6, 3)
        assert one.stages == 1 and four.stages == 4
