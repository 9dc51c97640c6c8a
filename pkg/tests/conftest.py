import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # for oracles.py

from ppn.bev import BevConfig, PointCloud


@pytest.fixture
def small_config():
    return BevConfig(resolution=0.2, width=10, height=10, depth_size=10)


@pytest.fixture
def test_config():
    return BevConfig(resolution=0.4, width=64, height=64, depth_size=16)


def random_cloud(rng, n, extent=1.0):
    pts = rng.uniform(-extent, extent, (n, 3))
    intensity = rng.uniform(0, 1, (n, 1))
    return PointCloud(points=np.hstack([pts, intensity]))


# ---- acceptance criterion reporting ----------------------------------------
# Tests marked @pytest.mark.criterion(n, "name") are aggregated into one
# "criterion n (name): verdict" line each in the terminal summary.

_criterion_map = {}
_criterion_outcomes = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "criterion(number, name): release acceptance criterion label")


def pytest_collection_modifyitems(items):
    for item in items:
        marker = item.get_closest_marker("criterion")
        if marker:
            _criterion_map[item.nodeid] = marker.args


def pytest_runtest_logreport(report):
    key = _criterion_map.get(report.nodeid)
    if key is None:
        return
    outcomes = _criterion_outcomes.setdefault(key, [])
    if report.when == "setup" and report.skipped:
        outcomes.append("SKIP")
    elif report.when == "call":
        outcomes.append("PASS" if report.passed
                        else "SKIP" if report.skipped else "FAIL")


def pytest_terminal_summary(terminalreporter):
    if not _criterion_outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for (number, name) in sorted(_criterion_outcomes):
        outcomes = _criterion_outcomes[(number, name)]
        if "FAIL" in outcomes:
            verdict = "FAIL"
        elif all(o == "SKIP" for o in outcomes):
            verdict = "SKIP"
        elif "SKIP" in outcomes:
            verdict = f"PASS ({outcomes.count('SKIP')} part(s) skipped)"
        else:
            verdict = "PASS"
        terminalreporter.write_line(f"criterion {number} ({name}): {verdict}")
