import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))  # for the shared oracles module

from twoshot import synthetic
from twoshot.config import load_config
from twoshot.pipeline import run_all


@pytest.fixture(scope="session")
def fixture_episode(tmp_path_factory):
    """Synthetic mini-episode inputs plus ground truth, generated once."""
    root = tmp_path_factory.mktemp("episode")
    truth = synthetic.generate(root, seed=7)
    return root, truth


@pytest.fixture(scope="session")
def pipeline_run(fixture_episode):
    """One full run-all over the synthetic episode."""
    root, truth = fixture_episode
    cfg = load_config(root / "config.yaml")
    results = run_all(cfg)
    return cfg, truth, results
