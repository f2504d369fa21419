import json
from pathlib import Path

import numpy as np
import pytest

from totkit import config as cfgmod
from totkit.checkpoint import MAGIC, load_checkpoint, read_metadata, save_checkpoint
from totkit.errors import CheckpointError, ConfigError
from totkit.features import FeatureMask
from totkit.model import PARAM_NAMES, ModelConfig, init_params

DEFAULT_CFG = Path(__file__).resolve().parents[1] / "configs" / "default.cfg"


@pytest.fixture
def saved(tmp_path):
    config = ModelConfig(embed_dim=5, hidden_dim=4, mask=FeatureMask.parse("G+H+O"), architecture="single-lstm")
    params = init_params(config, 9)
    path = save_checkpoint(tmp_path / "m.ckpt", params, config)
    return path, params, config


def test_round_trip_bit_exact(saved):
    path, params, config = saved
    p2, c2 = load_checkpoint(path)
    assert c2 == config
    for name in PARAM_NAMES:
        a, b = getattr(params, name), getattr(p2, name)
        assert a.tobytes() == b.tobytes() and a.shape == b.shape


def test_header_fields(saved):
    path, _, _ = saved
    obj = json.loads(path.read_text())
    assert obj["magic"] == MAGIC and obj["format_version"] == 1 and obj["feature_order_version"] == 1
    assert obj["config"]["rate"] == 15.0 and obj["config"]["architecture"] == "single-lstm"
    assert [p["name"] for p in obj["params"]] == list(PARAM_NAMES)
    assert read_metadata(path)["lstm_variant"] == "single-layer, no-peephole"


def test_mask_mismatch_fails(saved):
    path, _, _ = saved
    load_checkpoint(path, expected_mask="G+H+O")
    with pytest.raises(CheckpointError, match="features"):
        load_checkpoint(path, expected_mask=FeatureMask.full())


def test_truncated_and_corrupt(saved, tmp_path):
    path, _, _ = saved
    text = path.read_text()
    (tmp_path / "t.ckpt").write_text(text[: len(text) // 2])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(tmp_path / "t.ckpt")
    obj = json.loads(text)
    obj["format_version"] = 99
    (tmp_path / "v.ckpt").write_text(json.dumps(obj))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(tmp_path / "v.ckpt")
    obj = json.loads(text)
    obj["params"][2]["data"] = obj["params"][2]["data"][:-8]
    (tmp_path / "b.ckpt").write_text(json.dumps(obj))
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "b.ckpt")
    obj = json.loads(text)
    obj["magic"] = "NOPE"
    (tmp_path / "m.ckpt").write_text(json.dumps(obj))
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(tmp_path / "m.ckpt")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "absent.ckpt")


def test_default_cfg_matches_code_defaults():
    assert cfgmod.load(DEFAULT_CFG) == cfgmod.RunConfig()
    assert DEFAULT_CFG.read_text() == cfgmod.dumps(cfgmod.RunConfig())


def test_config_overrides_and_errors():
    cfg = cfgmod.loads("model.hidden_dim = 16\ntrain.lr = 0.01  # faster\ngenerator.reading.mean_h = 5\n"
                       "split.ratios = 0.8, 0.1, 0.1\nmodel.mask = H+O\n")
    assert cfg.model.hidden_dim == 16 and cfg.train.lr == 0.01
    assert cfg.generator.to_flat()["reading.mean_h"] == 5.0
    assert cfg.split_ratios == (0.8, 0.1, 0.1) and cfg.model.mask == FeatureMask.parse("H+O")
    for bad in ("model.colour = red", "train.epochs = ten", "just words", "a = 1\na = 2",
                "generator.noise_amp = 0.9", "augment.k = -1"):
        with pytest.raises(ConfigError):
            cfgmod.loads(bad)


def test_seed_and_rate_helpers():
    cfg = cfgmod.RunConfig().with_seed(7).with_rate(30.0)
    assert cfg.seed == 7 and cfg.model.rate == 30.0 and cfg.generator.rate == 30.0
    assert cfg.model.window_frames == 60
