import pytest

_RESULTS = pytest.StashKey[list]()


class Recorder:
    """Collects one pass/fail line per acceptance criterion."""

    def __init__(self, lines):
        self.lines = lines

    def check(self, label, ok, detail=""):
        line = f"criterion {label}: {'PASS' if ok else 'FAIL'}" + (f" ({detail})" if detail else "")
        self.lines.append(line)
        print(line)
        assert ok, line


@pytest.fixture
def acceptance(request):
    return Recorder(request.config.stash.setdefault(_RESULTS, []))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_RESULTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=_order):
            terminalreporter.write_line(line)


def _order(line):
    label = line.split()[1].rstrip(":")
    digits = "".join(c for c in label if c.isdigit())
    return int(digits), label
