"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the summary lines are
printed in the "acceptance criteria" section at the end of the run.
"""
import math
import time
import warnings

import numpy as np
import pytest

from totkit.checkpoint import load_checkpoint, save_checkpoint
from totkit.episodes import AugmentationWarning, augment_tor, frames_for
from totkit.errors import CheckpointError
from totkit.evaluation import compute_mae, run_ablation
from totkit.features import ABLATION_MASKS, Activity, FeatureMask
from totkit.generator import GeneratorParams, CDS_COUNTS, generate_cds_mirror, noise_floor
from totkit.model import (PARAM_NAMES, ModelConfig, forward_batch, forward_window, gradient_check, init_params,
                          prepare_inputs, zero_params)
from totkit.splits import fit_stereo_normalization
from totkit.streaming import Action, StreamRuntime, safety_gate
from totkit.training import TrainConfig, build_windows, mae_tuple, predict, train

from conftest import random_frame


def test_c01_gradient_oracle(acceptance):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst, shapes = 0.0, []
    masks = ["G+H+S+O", "F+G+H+S+O", "H", "G+H+O", "F+S"]
    for k in range(5):
        config = ModelConfig(embed_dim=int(rng.integers(3, 9)), hidden_dim=int(rng.integers(2, 7)),
                             mask=FeatureMask.parse(masks[k]),
                             architecture="id-lstms" if k % 2 == 0 else "single-lstm")
        T = int(rng.integers(4, 12))
        params = init_params(config, int(rng.integers(1 << 30)))
        shapes.append(f"{config.architecture}/E{config.embed_dim}/H{config.hidden_dim}/T{T}/{masks[k]}")
        for b in range(3):
            x = prepare_inputs(config, np.stack([
                np.stack([random_frame(rng).vector() for _ in range(T)]) for _ in range(32)]))
            y = rng.uniform(0.2, 5.0, (32, 3))
            worst = max(worst, gradient_check(params, x, y, eps=1e-5, n_samples=None, seed=b))
    elapsed = time.perf_counter() - start
    acceptance(1, "gradient oracle", worst < 1e-4 and elapsed < 60,
               f"max rel err {worst:.2e} over 5 shapes x 3 batches ({elapsed:.1f} s)")


def test_c02_zero_model(acceptance):
    rng = np.random.default_rng(5)
    ln2 = math.log(2.0)
    ok, notes = True, []
    for arch in ("id-lstms", "single-lstm"):
        config = ModelConfig(embed_dim=8, hidden_dim=6, architecture=arch)
        params = zero_params(config)
        rt = StreamRuntime(params, config)
        frames = [random_frame(rng, k / 15) for k in range(30)]
        for f in frames:
            streamed = rt.push_frame(f).outputs
        win = prepare_inputs(config, np.stack([f.vector() for f in frames]))
        batch = forward_batch(params, win[None])[0][0]
        single = forward_window(params, win)
        ok &= streamed == (ln2,) * 3 and tuple(batch) == (ln2,) * 3 and tuple(single) == (ln2,) * 3
        notes.append(f"{arch} stream={streamed[0]!r}")
    acceptance(2, "zero-model closed form", ok, f"ln 2 = {ln2!r}; " + ", ".join(notes))


def test_c03_overfit(acceptance):
    episodes = generate_cds_mirror(GeneratorParams(), seed=1, counts={a: 2 for a in Activity})
    config = ModelConfig(embed_dim=16, hidden_dim=16, **fit_stereo_normalization(episodes))
    start = time.perf_counter()
    params, history = train(config, episodes, episodes, TrainConfig(lr=0.003, epochs=500, batch_size=2, seed=0))
    elapsed = time.perf_counter() - start
    x, y = build_windows(config, episodes)
    tot = mae_tuple(predict(params, x), y)[3]
    hit = next((i + 1 for i, v in enumerate(history.val_tot_mae) if v < 0.1), None)
    acceptance(3, "overfit sanity", len(episodes) == 16 and tot < 0.1 and elapsed < 300,
               f"train TOT MAE {tot:.4f} s (first < 0.1 at epoch {hit}), {elapsed:.0f} s")


def test_c04_mirror_end_to_end(acceptance, mirror, mirror_model):
    config, params, _, train_seconds = mirror_model
    counts = {a: sum(e.activity is a for e in mirror["episodes"]) for a in Activity}
    sizes = {s: len(mirror[s]) for s in ("val", "test")}
    start = time.perf_counter()
    x, y = build_windows(config, mirror["test"])
    tot = mae_tuple(predict(params, x), y)[3]
    floor = noise_floor(GeneratorParams(), [e.activity for e in mirror["test"]])
    elapsed = mirror["seconds"] + train_seconds + time.perf_counter() - start
    ok = (counts == dict(CDS_COUNTS) and len(mirror["episodes"]) == 1375
          and abs(sizes["val"] - 206) <= 8 and abs(sizes["test"] - 206) <= 8
          and tot <= 1.5 * floor and elapsed < 900)
    acceptance(4, "synthetic benchmark end-to-end", ok,
               f"test TOT MAE {tot:.4f} s vs 1.5 x floor {1.5 * floor:.4f} s (floor {floor:.4f}), "
               f"val/test {sizes['val']}/{sizes['test']}, {elapsed:.0f} s")


def test_c05_ablation(acceptance, mirror):
    table = run_ablation(mirror["train"], mirror["val"], seed=0)
    lines = table.to_csv().strip().splitlines()
    full = table.find(FeatureMask.full()).report.tot_mae
    best = table.best()
    ok = (lines[0] == "F,G,H,S,O,mae_e,mae_f,mae_h,mae_tot" and len(lines) == 1 + len(ABLATION_MASKS) == 12
          and all(len(l.split(",")) == 9 for l in lines) and full <= 1.05 * best.report.tot_mae)
    acceptance(5, "ablation shape", ok,
               f"{len(lines) - 1} rows; full {full:.4f} s vs best {best.mask.code} {best.report.tot_mae:.4f} s "
               f"(ratio {full / best.report.tot_mae:.3f})")


def _brute(preds, targets):
    s = [0.0] * 4
    for p, t in zip(preds, targets):
        for j in range(3):
            s[j] += abs(p[j] - t[j])
        s[3] += abs(max(p) - max(t))
    return [v / len(preds) for v in s]


def test_c06_metric_oracle(acceptance):
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 64))
        p, t = rng.uniform(0, 10, (n, 3)).tolist(), rng.uniform(0, 10, (n, 3)).tolist()
        worst = max(worst, float(np.max(np.abs(np.subtract(compute_mae(p, t).mae, _brute(p, t))))))
    acceptance(6, "max-rule metric oracle", worst <= 1e-12, f"max |diff| {worst:.1e} over 100 cases")


def test_c07_gate(acceptance):
    cases = [((1.0, 2.0, 0.5), Action.HANDOVER), ((1.8, 2.0, 0.5), Action.SAFE_STOP),
             ((1.5, 2.0, 0.5), Action.SAFE_STOP)]
    got = [safety_gate(*args).action for args, _ in cases]
    acceptance(7, "gate truth table", got == [want for _, want in cases], ", ".join(a.value for a in got))


def test_c08_augmentation(acceptance, mirror):
    guard = 0.1
    sources = mirror["episodes"]
    n_aug, bad = 0, []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", AugmentationWarning)
        i = 0
        while n_aug < 10_000:
            src = sources[i % len(sources)]
            for aug in augment_tor(src, np.random.default_rng([8, i]), k=1, guard=guard):
                n_aug += 1
                delta = aug.shift - src.shift
                s = frames_for(delta, src.rate)
                if not min(aug.targets) > 0:
                    bad.append(f"{aug.episode_id}: target <= 0")
                if not 0 < delta < min(src.targets) - guard:
                    bad.append(f"{aug.episode_id}: shift {delta}")
                if not np.array_equal(aug.features[: src.n_frames - s], src.features[s:]):
                    bad.append(f"{aug.episode_id}: content not an index shift")
                if not np.allclose(np.subtract(src.targets, aug.targets), delta, rtol=0, atol=1e-12):
                    bad.append(f"{aug.episode_id}: targets not shifted by delta")
            i += 1
    acceptance(8, "augmentation invariants", not bad,
               f"{n_aug} augmentations, {len(bad)} violations" + (f" (first: {bad[0]})" if bad else ""))


def test_c09_determinism_and_persistence(acceptance, episodes16, tmp_path):
    config = ModelConfig(embed_dim=8, hidden_dim=6)
    hyper = TrainConfig(epochs=3, batch_size=4, seed=11)
    p1, h1 = train(config, episodes16[:12], episodes16[12:], hyper)
    p2, h2 = train(config, episodes16[:12], episodes16[12:], hyper)
    same_history = h1.train_losses == h2.train_losses and h1.val_tot_mae == h2.val_tot_mae
    path = save_checkpoint(tmp_path / "m.ckpt", p1, config)
    loaded, c2 = load_checkpoint(path)
    exact = c2 == config and all(getattr(p1, n).tobytes() == getattr(loaded, n).tobytes() for n in PARAM_NAMES)
    try:
        load_checkpoint(path, expected_mask="G+H+O")
        rejected = False
    except CheckpointError:
        rejected = True
    acceptance(9, "determinism and persistence", same_history and exact and rejected,
               f"histories identical={same_history}, round trip bit-exact={exact}, mismatch rejected={rejected}")


HIGH = (Activity.TEXTING, Activity.PHONE_CALL, Activity.COUNTING_CHANGE, Activity.READING)
LOW = (Activity.ATTENTIVE, Activity.TALKING, Activity.INFOTAINMENT)


def test_c10_generator_ordering(acceptance):
    n = 1000
    episodes = generate_cds_mirror(GeneratorParams(), seed=10, counts={a: n for a in Activity})
    by_act = {a: np.array([e.targets for e in episodes if e.activity is a]) for a in Activity}

    def z(a: np.ndarray, b: np.ndarray) -> float:
        return (a.mean() - b.mean()) / math.sqrt(a.var(ddof=1) / a.size + b.var(ddof=1) / b.size)

    tot = {a: y.max(axis=1) for a, y in by_act.items()}
    group = min(z(tot[h], tot[l]) for h in HIGH for l in LOW)
    hand = min(min(z(y[:, 2], y[:, 0]), z(y[:, 2], y[:, 1])) for y in by_act.values())
    ok = all(len(y) >= n for y in by_act.values()) and group >= 2 and hand >= 2
    acceptance(10, "generator ordering", ok,
               f"min pairwise high-low TOT z {group:.1f}, min t_h-vs-(t_e,t_f) z {hand:.1f}, {n} draws/activity")


def test_c11_latency(acceptance):
    rng = np.random.default_rng(11)
    config = ModelConfig(hidden_dim=64)
    rt = StreamRuntime(init_params(config, 0), config)
    frames = [random_frame(rng, k / 15) for k in range(1030)]
    for f in frames[:30]:
        rt.push_frame(f)
    times = []
    for f in frames[30:]:
        t0 = time.perf_counter()
        rt.push_frame(f)
        times.append(time.perf_counter() - t0)
    ms = np.array(times) * 1e3
    p50, p99 = np.percentile(ms, [50, 99])
    acceptance(11, "streaming latency", p99 <= 5.0 and config.window_frames == 30,
               f"median {p50:.2f} ms, p99 {p99:.2f} ms, max {ms.max():.2f} ms over 1000 frames (hidden 64)")
