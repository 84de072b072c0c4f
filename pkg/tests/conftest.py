import pytest
from hypothesis import settings

settings.register_profile("steindiff", deadline=None, max_examples=30, derandomize=True,
                          print_blob=True)
settings.load_profile("steindiff")

_LINES = []


@pytest.fixture(scope="session")
def criterion_log():
    """Collects one summary line per acceptance criterion."""
    return _LINES


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
