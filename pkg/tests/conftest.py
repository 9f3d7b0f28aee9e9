"""Shared test fixtures: a tiny linearly separable dataset and a small
training config that keeps unit tests fast. Also collects the release
criteria results and prints one verdict line per criterion at the end."""

import random

import pytest

from advforge.victim import Dataset, LabeledText, TrainConfig

FILLER = ["ཁ", "ག", "ང", "ཅ", "ཆ", "ཇ"]

_ACCEPTANCE: dict[str, bool] = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "acceptance(label): release criterion reported in the summary"
    )


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    label = marker.args[0]
    if report.when == "call":
        _ACCEPTANCE[label] = report.passed
    elif report.failed:  # setup or teardown error
        _ACCEPTANCE[label] = False


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label, passed in _ACCEPTANCE.items():
        verdict = "PASSED" if passed else "FAILED"
        terminalreporter.write_line(f"[ACCEPTANCE] {label}: {verdict}")


def separable_dataset():
    """Label is A iff the unit ཀ is present; linearly separable by design."""
    rng = random.Random(42)
    records = []
    for i in range(20):
        units = [rng.choice(FILLER) for _ in range(6)]
        if i % 2 == 0:
            units[rng.randrange(len(units))] = "ཀ"
            label = "A"
        else:
            label = "B"
        records.append(LabeledText("་".join(units), label))
    return Dataset.from_splits("separable", records, records[:6])


def small_cfg(**overrides):
    defaults = dict(feature_dim=2**10, epochs=10, seed=7)
    defaults.update(overrides)
    return TrainConfig(**defaults)
