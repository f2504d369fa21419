from __future__ import annotations

import time

import numpy as np
import pytest

from totkit.episodes import augment_dataset
from totkit.features import Activity, FeatureFrame, FeatureMask
from totkit.generator import GeneratorParams, generate_cds_mirror, generate_episode
from totkit.model import ModelConfig, init_params
from totkit.splits import split_dataset
from totkit.training import TrainConfig, train


def random_frame(rng: np.random.Generator, t: float = 0.0) -> FeatureFrame:
    """A valid frame with Dirichlet probability vectors."""
    return FeatureFrame(
        t,
        rng.dirichlet(np.ones(5)),
        rng.dirichlet(np.ones(8)),
        rng.dirichlet(np.ones(6)),
        rng.dirichlet(np.ones(6)),
        rng.uniform(0.0, 0.6, 2),
        rng.dirichlet(np.ones(7)),
        rng.dirichlet(np.ones(7)),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_config():
    return ModelConfig(embed_dim=8, hidden_dim=6)


@pytest.fixture(scope="session")
def small_params(small_config):
    return init_params(small_config, 7)


@pytest.fixture(scope="session")
def episodes16():
    params = GeneratorParams()
    acts = list(Activity) * 2
    return [generate_episode(a, params, np.random.default_rng([99, i]), episode_id=f"e{i:02d}")
            for i, a in enumerate(acts)]


@pytest.fixture(scope="session")
def mirror():
    """The synthetic 1,375-episode benchmark, split and augmented (train only)."""
    start = time.perf_counter()
    episodes = generate_cds_mirror(GeneratorParams(), seed=0)
    manifest = split_dataset(episodes, (0.7, 0.15, 0.15), seed=0)
    train_set = augment_dataset(manifest.select(episodes, "train"), seed=0)
    return {
        "episodes": episodes,
        "manifest": manifest,
        "train": train_set,
        "val": manifest.select(episodes, "val"),
        "test": manifest.select(episodes, "test"),
        "seconds": time.perf_counter() - start,
    }


@pytest.fixture(scope="session")
def mirror_model(mirror):
    config = ModelConfig()
    start = time.perf_counter()
    params, history = train(config, mirror["train"], mirror["val"], TrainConfig(seed=0))
    return config, params, history, time.perf_counter() - start


@pytest.fixture
def full_mask():
    return FeatureMask.full()


# Acceptance summary: test_acceptance records one line per criterion and the
# lines are printed together at the end of the run.

_ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = []


@pytest.fixture
def acceptance(request):
    lines = request.config.stash[_ACCEPTANCE_KEY]

    def record(number: int, title: str, ok: bool, detail: str) -> None:
        lines.append((number, f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d} {title}: {detail}"))
        assert ok, f"criterion {number} ({title}) failed: {detail}"

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
