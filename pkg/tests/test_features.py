import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from totkit.errors import ConfigError, ValidationError
from totkit.features import (ABLATION_MASKS, FEATURE_ORDER_VERSION, FIELD_SLICES, FULL_DIM, Activity,
                             FeatureFrame, FeatureMask, column_names, flatten, ingest, mask_indices,
                             validate_frame, validate_matrix)

from conftest import random_frame


def test_canonical_layout():
    assert FULL_DIM == 41
    assert FEATURE_ORDER_VERSION == 1
    names = column_names()
    assert len(names) == 41 and len(set(names)) == 41
    assert names[0].startswith("foot:") and names[-1].startswith("obj_r:")
    assert FIELD_SLICES["stereo"] == slice(25, 27)


def test_mask_dims():
    assert FeatureMask.full().dim == 41
    assert FeatureMask.parse("F").dim == 5
    assert FeatureMask.parse("G").dim == 8
    assert FeatureMask.parse("H").dim == 12
    assert FeatureMask.parse("H+S").dim == 14
    assert FeatureMask.parse("H+O").dim == 26
    assert FeatureMask.parse("full") == FeatureMask.parse("FGHSO")


def test_mask_indices_order_is_canonical():
    idx = mask_indices(FeatureMask.parse("O+F"))
    assert list(idx) == list(range(0, 5)) + list(range(27, 41))
    with pytest.raises(ConfigError):
        mask_indices(FeatureMask())
    with pytest.raises(ConfigError):
        FeatureMask.parse("F+X")


def test_ablation_rows():
    codes = [m.code for m in ABLATION_MASKS]
    assert len(codes) == 11 and len(set(codes)) == 11
    assert codes[0] == "F" and codes[-1] == "F+G+H+S+O"


def test_flatten_full_and_hands(rng):
    f = random_frame(rng, 1.0)
    assert np.array_equal(flatten(f, FeatureMask.full()), f.vector())
    assert np.array_equal(flatten(f, FeatureMask.parse("H")), np.concatenate([f.hand_left, f.hand_right]))


def test_validate_reports_bad_foot_sum(rng):
    f = random_frame(rng)
    bad = FeatureFrame(0.0, [0.5, 0.5, 0.5, 0, 0], f.gaze, f.hand_left, f.hand_right, f.stereo,
                       f.object_left, f.object_right)
    problems = validate_frame(bad)
    assert problems == ["foot sum = 1.5"]
    with pytest.raises(ValidationError, match="foot sum"):
        flatten(bad, FeatureMask.full())


def test_negative_stereo_rejected(rng):
    f = random_frame(rng)
    bad = FeatureFrame(0.0, f.foot, f.gaze, f.hand_left, f.hand_right, [-0.1, 0.2],
                       f.object_left, f.object_right)
    assert any("negative" in p for p in validate_frame(bad))


def test_ingest_renormalizes_small_drift(rng):
    f = random_frame(rng)
    drift = FeatureFrame(0.0, f.foot * 1.0005, f.gaze, f.hand_left, f.hand_right, f.stereo,
                         f.object_left, f.object_right)
    with pytest.warns(UserWarning, match="renormalized"):
        fixed = ingest(drift)
    assert validate_frame(fixed) == []
    big = FeatureFrame(0.0, f.foot * 1.01, f.gaze, f.hand_left, f.hand_right, f.stereo,
                       f.object_left, f.object_right)
    with pytest.raises(ValidationError):
        ingest(big)


def test_valid_frame_is_not_touched(rng):
    f = random_frame(rng)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert ingest(f) is f


def test_frames_are_immutable(rng):
    f = random_frame(rng)
    with pytest.raises(ValueError):
        f.foot[0] = 1.0


def test_wrong_field_size():
    with pytest.raises(ValidationError, match="gaze"):
        FeatureFrame(0.0, np.ones(5) / 5, np.ones(7) / 7, np.ones(6) / 6, np.ones(6) / 6, [0, 0],
                     np.ones(7) / 7, np.ones(7) / 7)


def test_json_round_trip(rng):
    f = random_frame(rng, 3.25)
    g = FeatureFrame.from_json(json.loads(json.dumps(f.to_json())))
    assert g == f and hash(g) == hash(f)


def test_json_missing_key(rng):
    obj = random_frame(rng).to_json()
    del obj["stereo"]
    with pytest.raises(ValidationError, match="stereo"):
        FeatureFrame.from_json(obj)


def test_validate_matrix(rng):
    block = np.stack([random_frame(rng).vector() for _ in range(5)])
    assert validate_matrix(block) == []
    block[2, 5] += 0.1
    assert any("gaze" in p and "frame 2" in p for p in validate_matrix(block))


def test_activity_parse():
    assert Activity.parse("texting") is Activity.TEXTING
    assert Activity.parse(7) is Activity.READING
    assert Activity.parse("lap/eyes-closed") is Activity.EYES_CLOSED
    with pytest.raises(ValidationError):
        Activity.parse("juggling")


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sets(st.sampled_from("FGHSO"), min_size=1))
def test_flatten_matches_indices(seed, fams):
    frame = random_frame(np.random.default_rng(seed))
    mask = FeatureMask.parse("".join(fams))
    out = flatten(frame, mask)
    assert out.shape == (mask.dim,)
    assert np.array_equal(out, frame.vector()[mask_indices(mask)])
