from __future__ import annotations

import time

import pytest

from lobe_moe.config import RunConfig
from lobe_moe.pipeline import run_stages
from lobe_moe.synth import SynthConfig, generate_cohort

SMALL_RUN = dict(n_patients=30, dims="16,24,24", max_epochs=20, gate_max_epochs=20, moe_max_epochs=10)


@pytest.fixture(scope="session")
def small_cohort(tmp_path_factory):
    out = tmp_path_factory.mktemp("small_cohort")
    cfg = SynthConfig(n_patients=12, dims=(12, 16, 16), seed=7)
    cohort, truth = generate_cohort(cfg, out)
    return cohort, truth, out


@pytest.fixture(scope="session")
def small_run(tmp_path_factory):
    """A complete pipeline run on a 30-patient cohort."""
    out = tmp_path_factory.mktemp("small_run")
    cfg = RunConfig(out=str(out), **SMALL_RUN)
    run_stages(cfg)
    return cfg, out


@pytest.fixture(scope="session")
def default_run(tmp_path_factory):
    """Default 200-patient cohort run through the validation-weighted ensemble stage."""
    out = tmp_path_factory.mktemp("default_run")
    cfg = RunConfig(out=str(out), stop_after="ensemble")
    t0 = time.perf_counter()
    run = run_stages(cfg)
    return cfg, out, run, time.perf_counter() - t0


def pytest_terminal_summary(terminalreporter):
    import helpers
    if helpers.ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(helpers.ACCEPTANCE, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
