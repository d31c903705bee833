import os
from pathlib import Path

import pytest

REPO = Path(__file__).resolve().parent.parent
_CRITERIA = {}


@pytest.fixture(scope="session")
def desk():
    """The bundled desk family run, cached on disk between sessions."""
    from vlasov_cutoff.cli import resolve_config
    from vlasov_cutoff.experiments import run_desk

    cfg = resolve_config("desk_eps08", None)
    cache = os.environ.get("VLASOV_CUTOFF_CACHE", str(REPO / ".cache"))
    return run_desk(cfg, cache_dir=cache)


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion (printed in the summary)."""
    def record(key: str, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'}  criterion {key}: {detail}"
        _CRITERIA[key] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_CRITERIA, key=lambda k: (int("".join(c for c in k if c.isdigit())), k)):
        terminalreporter.write_line(_CRITERIA[key])
