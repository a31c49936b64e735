import time

import pytest

_ACCEPTANCE = {}


class AcceptanceRecorder:
    """Collects the checks of one acceptance criterion and its runtime."""

    def __init__(self, number, title):
        self.number, self.title = number, title
        self.checks = []
        self.start = time.perf_counter()
        self.seconds = None

    def check(self, ok, detail):
        self.checks.append((bool(ok), detail))
        return bool(ok)

    def finish(self, budget=None):
        """Stop the clock, check the runtime budget and fail the test if any check failed."""
        self.seconds = time.perf_counter() - self.start
        if budget is not None:
            self.check(self.seconds < budget, f"runtime {self.seconds:.1f} s within {budget:g} s")
        failed = [d for ok, d in self.checks if not ok]
        assert not failed, "; ".join(failed)

    @property
    def passed(self):
        # an exception before finish() leaves seconds unset and counts as a failure
        return self.seconds is not None and bool(self.checks) and all(ok for ok, _ in self.checks)

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        failed = [d for ok, d in self.checks if not ok]
        if self.seconds is None:
            failed.append("raised before completing")
        note = "; ".join(failed) if failed else f"{len(self.checks)} checks"
        seconds = self.seconds if self.seconds is not None else time.perf_counter() - self.start
        return f"criterion {self.number} [{status}] {self.title} ({seconds:.1f} s): {note}"


@pytest.fixture
def acceptance(request):
    def make(number, title):
        rec = AcceptanceRecorder(number, title)
        _ACCEPTANCE[number] = rec
        return rec
    return make


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[n].line())
