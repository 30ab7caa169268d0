import time

import pytest

_LINES_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_LINES_KEY] = []


@pytest.fixture
def criterion(request):
    """Record and print one verdict line for an acceptance criterion.

    Usage: ``with criterion(n, title) as rec: ...; rec.check(ok, detail)``.
    The wall time of the block is compared against ``budget`` seconds.
    """
    lines = request.config.stash[_LINES_KEY]
    capman = request.config.pluginmanager.getplugin("capturemanager")

    class Record:
        def __init__(self, number, title, budget):
            self.number, self.title, self.budget = number, title, budget
            self.checks = []

        def check(self, ok, detail):
            self.checks.append((bool(ok), detail))

        def __enter__(self):
            self.start = time.perf_counter()
            return self

        def __exit__(self, exc_type, exc, tb):
            elapsed = time.perf_counter() - self.start
            self.check(elapsed < self.budget, f"runtime {elapsed:.1f}s < {self.budget:g}s")
            ok = exc_type is None and all(c for c, _ in self.checks)
            details = "; ".join(d for _, d in self.checks)
            if exc_type is not None:
                details = f"{exc_type.__name__}: {exc}; " + details
            line = f"[{'PASS' if ok else 'FAIL'}] criterion {self.number}: {self.title} ({details})"
            lines.append(line)
            with capman.global_and_fixture_disabled():
                print("\n" + line)
            if exc_type is None:
                failed = [d for c, d in self.checks if not c]
                assert not failed, f"criterion {self.number} failed: {failed}"
            return False

    return Record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
