import io
import json
import warnings
from collections import Counter

import numpy as np
import pytest

from totkit.dataio import (dumps_episodes, episode_from_json, episode_to_json, iter_frames_jsonl, load_dataset,
                           read_episodes, read_frames, save_dataset, write_frames_csv, write_frames_jsonl)
from totkit.episodes import AugmentationWarning, augment_dataset
from totkit.errors import ConfigError, DataError
from totkit.features import Activity
from totkit.generator import GeneratorParams, generate_cds_mirror
from totkit.splits import DatasetManifest, _allocate, split_dataset, subsample_stratified

from conftest import random_frame


@pytest.fixture(scope="module")
def small_set():
    counts = {a: 10 for a in Activity}
    counts[Activity.PHONE_CALL] = 3
    return generate_cds_mirror(GeneratorParams(), seed=1, counts=counts)


def test_allocate_largest_remainder():
    assert _allocate(10, (0.7, 0.15, 0.15)) == [7, 2, 1]
    assert _allocate(3, (0.7, 0.15, 0.15)) == [2, 1, 0]
    assert sum(_allocate(308, (0.7, 0.15, 0.15))) == 308


def test_split_is_stratified_and_complete(small_set):
    m = split_dataset(small_set, seed=0)
    assert set(m.splits) == {ep.episode_id for ep in small_set}
    per = Counter((ep.activity, m.splits[ep.episode_id]) for ep in small_set)
    assert per[(Activity.ATTENTIVE, "train")] == 7
    assert per[(Activity.ATTENTIVE, "val")] + per[(Activity.ATTENTIVE, "test")] == 3
    assert split_dataset(small_set, seed=0).splits == m.splits
    assert split_dataset(small_set, seed=1).splits != m.splits


def test_augmented_inherit_split(small_set):
    m0 = split_dataset(small_set, seed=0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", AugmentationWarning)
        full = augment_dataset(small_set, seed=0)
    m = split_dataset(full, seed=0)
    for ep in full:
        assert m.splits[ep.episode_id] == m0.splits[ep.root_id]


def test_split_rejects_bad_ratios(small_set):
    with pytest.raises(ConfigError):
        split_dataset(small_set, (0.5, 0.2, 0.2))


def test_subsample_stratified(small_set):
    sub = subsample_stratified(small_set, 0.5, seed=0)
    c = Counter(ep.activity for ep in sub)
    assert c[Activity.ATTENTIVE] == 5 and c[Activity.PHONE_CALL] == 2
    assert subsample_stratified(small_set, 1.0, seed=0) == list(small_set)
    with pytest.raises(DataError):
        subsample_stratified(small_set, 0.1, seed=0)


def test_frames_jsonl_and_csv_round_trip(rng, tmp_path):
    frames = [random_frame(rng, k / 15) for k in range(20)]
    write_frames_jsonl(frames, tmp_path / "f.jsonl")
    write_frames_csv(frames, tmp_path / "f.csv")
    assert read_frames(tmp_path / "f.jsonl") == frames
    assert read_frames(tmp_path / "f.csv") == frames


def test_malformed_jsonl_reports_line(rng):
    good = json.dumps(random_frame(rng).to_json())
    with pytest.raises(DataError, match="line 2"):
        list(iter_frames_jsonl(io.StringIO(good + "\n{bad\n")))
    with pytest.raises(DataError, match="line 1"):
        list(iter_frames_jsonl(io.StringIO('{"t": 0}\n')))


@pytest.mark.parametrize("encoding", ["b64", "json"])
def test_episode_round_trip(small_set, encoding):
    ep = small_set[0]
    back = episode_from_json(json.loads(json.dumps(episode_to_json(ep, encoding))))
    assert back.same_as(ep)


def test_dataset_dir_round_trip(small_set, tmp_path):
    m = split_dataset(small_set, seed=0)
    save_dataset(tmp_path / "ds", small_set, m)
    eps, m2 = load_dataset(tmp_path / "ds")
    assert m2.splits == m.splits and m2.seed == 0
    assert all(a.same_as(b) for a, b in zip(eps, small_set))
    assert read_episodes(io.StringIO(dumps_episodes(small_set[:2])))[1].same_as(small_set[1])


def test_dataset_missing_manifest_entry(small_set, tmp_path):
    m = split_dataset(small_set, seed=0)
    m = DatasetManifest({k: v for k, v in list(m.splits.items())[1:]}, m.seed, m.rate)
    save_dataset(tmp_path / "ds", small_set, m)
    with pytest.raises(DataError, match="missing"):
        load_dataset(tmp_path / "ds")


def test_corrupt_block(small_set):
    obj = episode_to_json(small_set[0])
    obj["frames_b64"] = obj["frames_b64"][:-12]
    with pytest.raises(DataError):
        episode_from_json(obj)
