import logging

import pytest

from uada.adapt import Strategy
from uada.augment import OpKind
from uada.config import ConfigError, TrainerConfig, defaults, dump_flat, load_config, load_flat, parse_lines


def test_defaults_mirror_training_setup():
    cfg = load_config()
    assert (cfg.adapt.delta, cfg.adapt.epsilon, cfg.n_ops) == (1, 1, 2)
    assert cfg.adapt.strategy is Strategy.MAXIMIZE and cfg.adapt.include_original_in_selection
    assert (cfg.optim.momentum, cfg.optim.weight_decay, cfg.optim.schedule) == (0.9, 1e-4, "cosine")
    assert cfg.arch == "cnn-s" and len(cfg.ops) == 10
    assert (cfg.data.num_classes, cfg.data.image_size, cfg.data.train_count, cfg.data.test_count) == (3, 16, 2000, 500)


def test_file_then_overrides(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("# comment\n\nadapt.epsilon=2\ntrain.epochs = 3\ntrain.ops=Rotate, cutout\n")
    cfg = load_config(path, ["adapt.epsilon=3", "adapt.strategy=none"])
    assert cfg.adapt.epsilon == 3 and cfg.epochs == 3 and cfg.adapt.strategy is Strategy.NONE
    assert cfg.ops == (OpKind.ROTATE, OpKind.CUTOUT)


def test_all_errors_reported_with_lines():
    with pytest.raises(ConfigError) as info:
        parse_lines(["adapt.epsilon=two", "bogus.key=1", "no equals sign", "model.arch=resnet"], "f.txt")
    problems = info.value.problems
    assert len(problems) == 4
    assert problems[0].startswith("f.txt:1: adapt.epsilon")
    assert "f.txt:2: unknown key 'bogus.key'" in problems[1]
    assert problems[2].startswith("f.txt:3:") and problems[3].startswith("f.txt:4:")


def test_duplicate_key_last_wins(caplog):
    with caplog.at_level(logging.WARNING):
        values = parse_lines(["train.epochs=3", "train.epochs=5"])
    assert values["train.epochs"] == 5
    assert "last value wins" in caplog.text


def test_invalid_values_are_config_errors():
    for bad in (["adapt.epsilon=0"], ["train.epochs=0"], ["optim.momentum=1.5"], ["train.ops=Invert"],
                ["adapt.include_original=maybe"], ["data.source=jpeg"]):
        with pytest.raises(ConfigError):
            load_config(None, bad)


def test_dump_round_trip(tmp_path):
    cfg = load_config(None, ["adapt.strategy=random", "train.ops=Rotate,Solarize", "data.noise=0.1"])
    path = tmp_path / "dump.txt"
    path.write_text(dump_flat(cfg.to_flat()))
    assert load_config(path) == cfg
    assert dump_flat(defaults()) == dump_flat(load_config().to_flat())


def test_with_overrides():
    cfg = load_config()
    other = cfg.with_overrides(adapt__epsilon=2, train__seed=7)
    assert other.adapt.epsilon == 2 and other.seed == 7 and cfg.adapt.epsilon == 1
    with pytest.raises(ConfigError):
        TrainerConfig.from_flat({"adapt.nope": 1})


def test_missing_file():
    with pytest.raises(FileNotFoundError):
        load_flat("/nonexistent/config.txt")
