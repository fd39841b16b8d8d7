import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import pytest

from posthoc.synth.experiment import make_data, run_ensemble_experiment
from posthoc.synth.mlp import MlpConfig


@pytest.fixture(scope="session")
def tiny_experiment():
    """Three small MLP runs on noisy spirals, checkpointed every 5 epochs."""
    cfg = MlpConfig(depth=3, hidden=16, epochs=60, ckpt_interval=5, seed=3, lr=0.1)
    data = make_data(seed=3, n_train=200, n_eval=100)
    return run_ensemble_experiment(3, data, cfg)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
