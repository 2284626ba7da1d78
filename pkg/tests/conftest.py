"""Collects one PASS/FAIL line per acceptance criterion and prints them at the end."""

import pytest

_LINES: list[str] = []


class Verdict:
    def __init__(self, label: str):
        self.label = label

    def check(self, ok: bool, detail: str) -> None:
        line = f"[{'PASS' if ok else 'FAIL'}] {self.label}: {detail}"
        _LINES.append(line)
        print(line)
        assert ok, line


@pytest.fixture
def verdict(request):
    marker = request.node.get_closest_marker("criterion")
    return Verdict(marker.args[0] if marker else request.node.name)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label): acceptance criterion label")


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
