import time

import pytest

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def synthetic_features(tmp_path_factory):
    """Synthetic corpus (per_class=20, seed 42) extracted with default settings.

    Returns ``(root, seconds)`` where ``seconds`` is the time spent on
    generation plus extraction, so criteria that include those stages can
    charge it to their own budget.
    """
    from genrebilstm.cli import main

    root = tmp_path_factory.mktemp("synthetic")
    t0 = time.perf_counter()
    assert main(["synth", "--per-class", "20", "--seed", "42", "--out", str(root / "synth"), "-q"]) == 0
    assert main(["extract", str(root / "synth" / "manifest.csv"), "--out", str(root / "feat"),
                 "--deterministic", "-q"]) == 0
    return root, time.perf_counter() - t0
