import io
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from totkit.errors import ConfigError, DataError, ValidationError
from totkit.features import FeatureFrame, FeatureMask
from totkit.model import ModelConfig, forward_window, init_params, prepare_inputs, zero_params
from totkit.streaming import Action, Status, StreamRuntime, replay_stream, run_live, safety_gate

from conftest import random_frame


@pytest.fixture(scope="module")
def runtime_parts():
    config = ModelConfig(embed_dim=8, hidden_dim=6, mask=FeatureMask.parse("G+H+O"))
    return config, init_params(config, 2)


def test_warmup_then_predictions(rng, runtime_parts):
    config, params = runtime_parts
    rt = StreamRuntime(params, config)
    preds = [rt.push_frame(random_frame(rng, k / 15)) for k in range(40)]
    assert all(p.status is Status.WARMING and p.outputs is None for p in preds[:29])
    assert all(p.status is Status.OK and p.tot == max(p.outputs) for p in preds[29:])
    assert len(rt) == 30


def test_zero_model_streams_ln2(rng):
    config = ModelConfig(embed_dim=4, hidden_dim=3)
    rt = StreamRuntime(zero_params(config), config)
    for k in range(30):
        p = rt.push_frame(random_frame(rng, k / 15))
    assert p.outputs == (math.log(2.0),) * 3


def test_stream_equals_batch_bit_exact(runtime_parts, episodes16):
    config, params = runtime_parts
    ep = episodes16[5]
    rt = StreamRuntime(params, config)
    feats = prepare_inputs(config, ep.features)
    for k in range(ep.n_frames):
        p = rt.push_frame(ep.frame(k))
        if k >= 29:
            want = forward_window(params, feats[k - 29:k + 1])
            assert p.outputs == tuple(float(v) for v in want)


def test_out_of_order_and_invalid(rng, runtime_parts):
    config, params = runtime_parts
    rt = StreamRuntime(params, config)
    rt.push_frame(random_frame(rng, 1.0))
    with pytest.raises(DataError):
        rt.push_frame(random_frame(rng, 0.5))
    f = random_frame(rng, 2.0)
    bad = FeatureFrame(2.0, f.foot * 2, f.gaze, f.hand_left, f.hand_right, f.stereo, f.object_left, f.object_right)
    with pytest.raises(ValidationError):
        rt.push_frame(bad)


def test_gap_fills_and_marks_stale(rng, runtime_parts):
    config, params = runtime_parts
    rt = StreamRuntime(params, config, staleness=0.5)
    for k in range(30):
        rt.push_frame(random_frame(rng, k / 15))
    last = 29 / 15
    p = rt.push_frame(random_frame(rng, last + 1.0))  # 1 s gap -> 14 repeated frames
    assert p.status is Status.STALE
    # stale until the 14 filled frames have left the 30-frame window
    for j in range(1, 29):
        p = rt.push_frame(random_frame(rng, last + 1.0 + j / 15))
    assert p.status is Status.STALE
    p = rt.push_frame(random_frame(rng, last + 1.0 + 29 / 15))
    assert p.status is Status.OK


def test_replay_trace(runtime_parts, episodes16):
    config, params = runtime_parts
    ep = episodes16[1]
    rt = StreamRuntime(params, config)
    t1 = replay_stream(rt, ep)
    t2 = replay_stream(rt, ep)
    assert len(t1) == ep.n_frames and all("status" in r for r in t1)
    assert t1 == t2
    at_tor = t1[ep.tor_index]
    want = forward_window(params, prepare_inputs(config, ep.window(30)))
    assert (at_tor["o_e"], at_tor["o_f"], at_tor["o_h"]) == tuple(float(v) for v in want)
    assert at_tor["target_h"] == ep.targets[2] and at_tor["elapsed"] == 0
    scored = [r for r in t1 if "err_tot" in r]
    assert scored[-1]["elapsed"] <= ep.tot
    assert all(min(r["target_e"], r["target_f"], r["target_h"]) >= 0 for r in scored)


def test_run_live_jsonl(rng, runtime_parts):
    config, params = runtime_parts
    rt = StreamRuntime(params, config)
    lines = [json.dumps(random_frame(rng, k / 15).to_json()) for k in range(31)]
    out = io.StringIO()
    assert run_live(rt, lines, out, ttc=5.0, epsilon=0.5) == 31
    recs = [json.loads(l) for l in out.getvalue().splitlines()]
    assert recs[0]["status"] == "warming" and "gate" not in recs[0]
    assert recs[-1]["gate"] in ("Handover", "SafeStop")
    with pytest.raises(DataError, match="line 1"):
        run_live(StreamRuntime(params, config), ["{oops"], io.StringIO())


def test_gate_examples():
    assert safety_gate(1.0, 2.0, 0.5).action is Action.HANDOVER
    assert safety_gate(1.8, 2.0, 0.5).action is Action.SAFE_STOP
    assert safety_gate(1.5, 2.0, 0.5).action is Action.SAFE_STOP
    d = safety_gate(1.0, 2.0, 0.5)
    assert (d.tot, d.ttc, d.epsilon) == (1.0, 2.0, 0.5)


@pytest.mark.parametrize("bad", [(-1.0, 2.0, 0.5), (1.0, math.inf, 0.5), (1.0, 2.0, math.nan)])
def test_gate_rejects_bad_inputs(bad):
    with pytest.raises(ConfigError):
        safety_gate(*bad)


@settings(max_examples=200)
@given(st.floats(0, 20), st.floats(0, 20), st.floats(0, 20), st.floats(0, 5))
def test_gate_monotone(t1, t2, ttc, eps):
    lo, hi = sorted((t1, t2))
    if safety_gate(hi, ttc, eps).action is Action.HANDOVER:
        assert safety_gate(lo, ttc, eps).action is Action.HANDOVER


def test_staleness_must_be_positive(runtime_parts):
    config, params = runtime_parts
    with pytest.raises(ConfigError):
        StreamRuntime(params, config, staleness=0.0)
