from __future__ import annotations

import json
from pathlib import Path

import pytest

DATA = Path(__file__).parent / "data"


def load_oracles() -> list[dict]:
    lines = (DATA / "stat_oracles.jsonl").read_text(encoding="utf-8").splitlines()
    return [json.loads(line) for line in lines if line and not line.startswith("#")]


def oracle_cases(method: str) -> list[dict]:
    return [c for c in load_oracles() if c["method"] == method]


@pytest.fixture
def data_dir() -> Path:
    return DATA


_ACCEPTANCE = pytest.StashKey[list]()


class Criterion:
    """Collects checks for one acceptance criterion and records a single result line."""

    def __init__(self, lines: list[str], number: int, title: str):
        self.lines, self.number, self.title = lines, number, title
        self.failures: list[str] = []
        self.details: list[str] = []

    def check(self, ok: bool, what: str) -> None:
        if not ok:
            self.failures.append(what)

    def note(self, text: str) -> None:
        self.details.append(text)

    def _emit(self, status: str, detail: str) -> str:
        line = f"criterion {self.number} {status}: {self.title}" + (f" ({detail})" if detail else "")
        self.lines.append(line)
        print(line)
        return line

    def __enter__(self) -> Criterion:
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        if exc_type is not None and issubclass(exc_type, pytest.skip.Exception):
            self._emit("SKIP", str(exc))
            return False
        if exc_type is not None:
            self._emit("FAIL", f"{exc_type.__name__}: {exc}")
            return False
        if self.failures:
            line = self._emit("FAIL", "; ".join(self.failures))
            pytest.fail(line, pytrace=False)
        self._emit("PASS", "; ".join(self.details))
        return False


@pytest.fixture
def criterion(request):
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])
    return lambda number, title: Criterion(lines, number, title)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
