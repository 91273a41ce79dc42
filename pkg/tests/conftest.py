from __future__ import annotations

import numpy as np
import pytest


def brute_roi(img, mask):
    """Per-pixel loop reference for ROI mean GCC/RCC."""
    g = r = 0.0
    n = 0
    h, w = mask.shape
    for y in range(h):
        for x in range(w):
            if mask[y, x]:
                R, G, B = (float(v) for v in img[y, x])
                s = R + G + B
                if s > 0:
                    g += G / s
                    r += R / s
                    n += 1
    return g / n, r / n


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance reporting: one PASS/FAIL line per criterion in the terminal summary
_CRITERIA: dict[int, dict] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


class CriterionLog:
    def __init__(self, number: int, title: str):
        self.entry = _CRITERIA.setdefault(number, {"title": title, "details": [], "failed": False, "ran": 0})

    def note(self, text: str) -> None:
        self.entry["details"].append(text)


@pytest.fixture
def criterion(request):
    marker = request.node.get_closest_marker("criterion")
    number, title = marker.args
    log = CriterionLog(number, title)
    yield log
    rep = getattr(request.node, "rep_call", None)
    log.entry["ran"] += 1
    if rep is None or not rep.passed:
        log.entry["failed"] = True


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion this test belongs to")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        e = _CRITERIA[number]
        status = "FAIL" if e["failed"] else "PASS"
        terminalreporter.write_line(f"criterion {number} [{status}] {e['title']} ({e['ran']} checks)")
        for d in e["details"]:
            terminalreporter.write_line(f"    {d}")
