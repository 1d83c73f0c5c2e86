"""Config dataclasses and the key=value file format."""

import pytest

from eetrack.config import (LossWeights, RunConfig, TrackerConfig, TrainConfig,
                            load_run_config, parse_kv_text, run_config_from_mapping,
                            run_config_to_text, save_run_config)


class TestValidation:
    def test_defaults_are_valid(self):
        cfg = TrackerConfig()
        assert cfg.total_tokens == 80
        assert cfg.template_tokens == 16
        assert cfg.grid == 8

    def test_side_multiple_of_patch(self):
        with pytest.raises(ValueError):
            TrackerConfig(template_side=30)

    def test_heads_divide_dim(self):
        with pytest.raises(ValueError):
            TrackerConfig(embed_dim=65)

    def test_enforced_blocks_interior(self):
        with pytest.raises(ValueError):
            TrackerConfig(enforced_blocks=0)
        with pytest.raises(ValueError):
            TrackerConfig(enforced_blocks=8, blocks=8)

    def test_exit_constants_bounded(self):
        with pytest.raises(ValueError):
            TrackerConfig(exit_slack=0.0)
        with pytest.raises(ValueError):
            TrackerConfig(exit_weight=0.0)
        with pytest.raises(ValueError):
            TrackerConfig(sparsity_target=1.5)


class TestKvFormat:
    def test_parse_with_comments(self):
        text = "# header\nmodel.blocks = 4\n\ntrain.seed=9  # inline\n"
        mapping = parse_kv_text(text)
        assert mapping == {"model.blocks": "4", "train.seed": "9"}

    def test_parse_rejects_garbage_line(self):
        with pytest.raises(ValueError, match="line 2"):
            parse_kv_text("a=1\nnot a pair\n")

    def test_unprefixed_keys_resolve(self):
        cfg = run_config_from_mapping({"blocks": "4", "enforced_blocks": "2",
                                       "blur_weight": "0.5", "steps": "7"})
        assert cfg.model.blocks == 4
        assert cfg.weights.blur_weight == 0.5
        assert cfg.train.steps == 7

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError, match="unknown config key"):
            run_config_from_mapping({"not_a_key": "1"})

    def test_unknown_section_rejected(self):
        with pytest.raises(ValueError, match="unknown config section"):
            run_config_from_mapping({"bogus.steps": "1"})

    def test_bool_and_tuple_coercion(self):
        cfg = run_config_from_mapping({"train.use_exit": "off",
                                       "train.blur_lengths": "3,5",
                                       "model.share_exit_params": "true"})
        assert cfg.train.use_exit is False
        assert cfg.train.blur_lengths == (3, 5)
        assert cfg.model.share_exit_params is True

    def test_roundtrip_through_file(self, tmp_path):
        cfg = RunConfig(model=TrackerConfig(blocks=6, enforced_blocks=2),
                        weights=LossWeights(blur_weight=3e-4),
                        train=TrainConfig(steps=11, blur_lengths=(3, 7)))
        path = tmp_path / "run.cfg"
        save_run_config(cfg, path)
        back = load_run_config(path)
        assert back == cfg

    def test_text_contains_all_sections(self):
        text = run_config_to_text(RunConfig())
        for key in ("model.blocks", "weights.sparsity_weight", "train.steps"):
            assert key in text
