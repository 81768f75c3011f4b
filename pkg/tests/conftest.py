"""Shared, lazily built full-size runs and the acceptance report."""
import functools

import pytest

from nssda import experiments as ex
from nssda.config import RunConfig

_REPORT = []


@functools.lru_cache(maxsize=None)
def twin(preset, sigma2, seed, l_train):
    cfg = RunConfig(preset=preset, sigma2=sigma2, l_train=l_train, seed_observation=seed,
                    seed_ensemble=seed, seed_params=seed)
    return ex.make_twin(cfg.resolved())


@functools.lru_cache(maxsize=None)
def experiment(preset, model, seed, l_train, sigma2, filters=ex.FILTER_KINDS):
    """Train one surrogate and run the requested filters; cached for the session."""
    base = twin(preset, sigma2, seed, l_train)
    cfg = base.config.with_overrides(model=model, l_train=l_train)
    return ex.run_experiment(ex.with_config(base, cfg), filters=filters)


@pytest.fixture
def report(capsys):
    def emit(line):
        _REPORT.append(line)
        with capsys.disabled():
            print("\n" + line)
    return emit


def pytest_terminal_summary(terminalreporter):
    if _REPORT:
        terminalreporter.section("acceptance criteria")
        for line in _REPORT:
            terminalreporter.write_line(line)
