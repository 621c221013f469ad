"""Shared fixtures for the test suite.

The expensive closed-loop runs are session-scoped so the acceptance
criteria can share them instead of re-simulating.
"""

import pytest

from sdmrac import harness


@pytest.fixture(scope="session")
def default_run():
    """One full-length default S-DMRAC run at seed 0."""
    cfg = harness.ExperimentConfig(seed=0)
    log, report = harness.run_experiment(cfg)
    return cfg, log, report


@pytest.fixture(scope="session")
def dmrac_run():
    """The deterministic baseline at the same seed and schedule."""
    cfg = harness.ExperimentConfig(seed=0, mode="dmrac")
    log, report = harness.run_experiment(cfg)
    return cfg, log, report


@pytest.fixture(scope="session")
def baseline_run():
    """Pure baseline control (u_ad = 0) at the same seed and schedule."""
    cfg = harness.ExperimentConfig(seed=0, mode="baseline_only")
    log, report = harness.run_experiment(cfg)
    return cfg, log, report


@pytest.fixture(scope="session")
def seeded_runs(default_run):
    """S-DMRAC reports for seeds 0..9 (seed 0 reused from default_run)."""
    out = {0: (default_run[1], default_run[2])}
    for seed in range(1, 10):
        cfg = harness.ExperimentConfig(seed=seed)
        out[seed] = harness.run_experiment(cfg)
    return out
