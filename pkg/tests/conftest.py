import os
import sys

import numpy as np
import pytest

ACCEPTANCE_LINES = []


def report_acceptance(number, passed, detail):
    """Record (and immediately print) one acceptance verdict line."""
    line = f"ACCEPTANCE {number:>2} {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    sys.__stdout__.write("\n" + line + "\n")
    sys.__stdout__.flush()
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def dataset_dir(tmp_path_factory):
    from lococycle.motion import default_clips, write_dataset

    d = tmp_path_factory.mktemp("dataset")
    write_dataset(str(d), default_clips(seed=0))
    return str(d)


@pytest.fixture(scope="session")
def dataset(dataset_dir):
    from lococycle.motion import load_dataset

    return load_dataset(dataset_dir)


def small_config(dataset_dir, out_dir, **kw):
    """A tiny but complete training config for fast end-to-end tests."""
    from lococycle.config import TrainConfig
    from lococycle.correspond import MapperConfig
    from lococycle.rl import PPOConfig

    ppo = PPOConfig(num_envs=8, horizon=16, hidden=(32, 32))
    mapper = MapperConfig(epochs=2, minibatch=64, hidden=(16, 16))
    base = dict(dataset=dataset_dir, ppo=ppo, mapper=mapper, iterations=3, checkpoint_every=2,
                output_dir=os.path.join(str(out_dir), "run"), eval_sd=16)
    base.update(kw)
    return TrainConfig(**base)
