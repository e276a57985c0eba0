import math

import pytest

from probadapt.config import (ExperimentConfig, config_hash, parse_config,
                              serialize_config)
from probadapt.errors import ConfigError


def test_empty_document_gives_defaults():
    cfg = parse_config("")
    assert cfg == ExperimentConfig()
    # reference hyperparameter defaults
    assert cfg.momentum == 0.9
    assert cfg.weight_decay == 5e-4
    assert cfg.lambda1 == 1.0
    assert cfg.lambda2_a == 1.0
    assert cfg.lambda3_a == 0.25
    assert cfg.delta == 10.0
    assert cfg.label_smoothing == 0.1
    assert cfg.epochs == 20
    assert cfg.tau == 3e-4
    assert cfg.upsilon == 0.75
    assert cfg.head_lr_multiplier == 10.0


def test_unknown_key_named_in_error():
    with pytest.raises(ConfigError, match="train.bogus"):
        parse_config("train.bogus = 3")


def test_type_error_names_key():
    with pytest.raises(ConfigError, match="train.epochs"):
        parse_config("train.epochs = soon")


def test_constraint_violation_named():
    with pytest.raises(ConfigError, match="train.epochs"):
        parse_config("train.epochs = 0")
    with pytest.raises(ConfigError, match="mode"):
        parse_config("mode = dance")
    with pytest.raises(ConfigError, match="task_classes"):
        parse_config("generator.pretrain_classes = 4\ngenerator.task_classes = 8")


def test_duplicate_key_rejected():
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config("seed = 1\nseed = 2")


def test_comments_and_blank_lines_ignored():
    cfg = parse_config("# a comment\n\nseed = 9  # trailing\n")
    assert cfg.seed == 9


def test_round_trip():
    cfg = parse_config("mode = pda\nseed = 3\ngenerator.rotation = 0.5\n"
                       "generator.translation = 0.1,0.2,0.3,0.4,0.5,0.6\n"
                       "train.focal_gamma = 2.0\n")
    assert parse_config(serialize_config(cfg)) == cfg


def test_round_trip_defaults():
    cfg = ExperimentConfig()
    assert parse_config(serialize_config(cfg)) == cfg


def test_hash_stable_under_reordering():
    a = parse_config("seed = 4\ntrain.epochs = 7\n")
    b = parse_config("train.epochs = 7\nseed = 4\n")
    assert config_hash(a) == config_hash(b)
    c = parse_config("seed = 5\ntrain.epochs = 7\n")
    assert config_hash(a) != config_hash(c)


def test_optional_fields_parse():
    cfg = parse_config("generator.target_class_count = 2\ntrain.focal_gamma = none\n")
    assert cfg.target_class_count == 2
    assert cfg.focal_gamma is None


def test_translation_length_checked():
    with pytest.raises(ConfigError, match="translation"):
        parse_config("generator.input_dim = 4\ngenerator.translation = 1.0,2.0\n")


def test_defaults_build_valid_components():
    cfg = ExperimentConfig()
    spec = cfg.generator_spec()
    assert spec.task_classes <= spec.pretrain_classes
    sched = cfg.schedule_config()
    assert sched.eta0 == cfg.eta0
    tc = cfg.train_config(with_pda=True)
    assert tc.pda is not None and tc.pda.threshold == cfg.pda_threshold
    assert cfg.train_config().pda is None
