import time
from contextlib import contextmanager

import pytest

_RESULTS: dict[int, str] = {}


@contextmanager
def _criterion(number: int, title: str):
    """Time a block and record one PASS/FAIL line for it."""
    t0 = time.perf_counter()
    detail = {}
    try:
        yield detail
    except BaseException:
        status = "FAIL"
        raise
    else:
        status = "PASS"
    finally:
        dt = time.perf_counter() - t0
        extra = ", ".join(f"{k}={v}" for k, v in detail.items())
        line = f"criterion {number:2d} {status}  {title}  [{dt:.1f}s]" + (f"  {extra}" if extra else "")
        _RESULTS[number] = line
        print(line)


@pytest.fixture
def criterion():
    return _criterion


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        terminalreporter.write_line(_RESULTS[n])
