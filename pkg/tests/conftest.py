import time
from contextlib import contextmanager

import numpy as np
import pytest

_ACCEPTANCE: dict[int, str] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running training studies")


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[k])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


class _Criterion:
    def __init__(self):
        self.checks: list[tuple[str, bool, str]] = []

    def check(self, name: str, ok, detail: str = "") -> None:
        self.checks.append((name, bool(ok), detail))


@pytest.fixture
def criterion():
    """Time a criterion, record one PASS/FAIL line, and fail the test if any check failed."""

    @contextmanager
    def run(number: int, title: str, limit_s: float):
        c = _Criterion()
        t0 = time.perf_counter()
        try:
            yield c
        except Exception as exc:
            c.check("completed", False, f"{type(exc).__name__}: {exc}")
        dt = time.perf_counter() - t0
        c.check("runtime", dt < limit_s, f"{dt:.1f}s < {limit_s:g}s")
        bad = [f"{n} ({d})" for n, ok, d in c.checks if not ok]
        good = "; ".join(f"{n}: {d}" for n, ok, d in c.checks if ok and d)
        status = "PASS" if not bad else "FAIL"
        line = f"criterion {number} [{status}] {title} | {good}"
        if bad:
            line += " | failed: " + "; ".join(bad)
        _ACCEPTANCE[number] = line
        print(line)
        assert not bad, line

    return run
