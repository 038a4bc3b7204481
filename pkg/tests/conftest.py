import numpy as np
import pytest

from convexinit.numerics import make_rng


@pytest.fixture
def rng():
    return make_rng(1234)


def naive_matmul(A, B):
    """Triple-loop reference product, independent of BLAS."""
    n, k = A.shape
    k2, m = B.shape
    assert k == k2
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for t in range(k):
                acc += A[i, t] * B[t, j]
            out[i, j] = acc
    return out


_CRITERIA = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        name = report.nodeid.split("::")[-1][len("test_criterion_"):]
        detail = dict(report.user_properties).get("detail", "")
        _CRITERIA[name] = (report.outcome == "passed", detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_CRITERIA):
        ok, detail = _CRITERIA[name]
        number, _, label = name.partition("_")
        line = f"criterion {int(number):2d} {label.replace('_', ' ')}: {'PASS' if ok else 'FAIL'}"
        terminalreporter.write_line(f"{line} | {detail}" if detail else line)
