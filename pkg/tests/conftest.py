import pytest

_LINES_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_LINES_KEY] = []


@pytest.fixture
def criterion(request):
    """Call with (name, passed, detail); the line is printed now and repeated in the summary."""
    lines = request.config.stash[_LINES_KEY]

    def report(name: str, passed: bool | None, detail: str) -> None:
        verdict = {True: "PASS", False: "FAIL", None: "SKIP"}[passed]
        line = f"[{verdict}] {name}: {detail}"
        lines.append(line)
        print(line)

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
