from pathlib import Path

import pytest

DATA = Path(__file__).parent / "data"
_VERDICTS = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def sample_csv():
    """One simulated day of excitation data shipped with the repository."""
    return DATA / "sample_day.csv"


@pytest.fixture(scope="session")
def verdict(request):
    """``verdict(n, ok, detail)`` prints an acceptance line now and in the summary."""
    lines = request.config.stash.setdefault(_VERDICTS, [])
    capman = request.config.pluginmanager.getplugin("capturemanager")

    def report(n, ok, detail):
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        with capman.global_and_fixture_disabled():
            print("\n" + line, flush=True)
        return ok

    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
