import numpy as np
import pytest

from xrsim.config import Experiment


def tiny_experiment(**extra):
    """Seconds-scale training profile used by trainer/cli tests."""
    sections = {
        "trainer": dict(K0=5, K1=2, K2=1, K3=1, n_sim=300, n_real=150, horizon=60, eval_episodes=2),
        "ppo": dict(rollout_steps=200, epochs=2, minibatch=64),
        "ratio": dict(n_centers=30),
    }
    for sec, kv in extra.items():
        sections.setdefault(sec, {}).update(kv)
    return Experiment.default(**sections)


@pytest.fixture
def tiny_exp():
    return tiny_experiment()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
