"""Collects acceptance-criterion outcomes and prints one line per criterion."""
from dataclasses import dataclass, field

import pytest


@dataclass
class Criterion:
    number: int
    title: str
    limit_s: float
    parts: list = field(default_factory=list)  # (name, passed, detail, seconds)

    @property
    def passed(self):
        return bool(self.parts) and all(p[1] for p in self.parts)

    @property
    def seconds(self):
        return sum(p[3] for p in self.parts)


class Results:
    def __init__(self):
        self.criteria = {}

    def record(self, number, title, limit_s, part, passed, detail, seconds):
        c = self.criteria.setdefault(number, Criterion(number, title, limit_s))
        c.parts.append((part, bool(passed), detail, seconds))

    def lines(self):
        out = []
        for n in sorted(self.criteria):
            c = self.criteria[n]
            status = "PASS" if c.passed else "FAIL"
            detail = "; ".join(f"{p[0]}: {'ok' if p[1] else 'FAILED'} ({p[2]})" for p in c.parts)
            out.append(f"[{status}] {n:2d}. {c.title} [{c.seconds:.2f}s / limit {c.limit_s:g}s] {detail}")
        return out


_RESULTS = Results()


@pytest.fixture(scope="session")
def acceptance():
    return _RESULTS


def pytest_terminal_summary(terminalreporter):
    lines = _RESULTS.lines()
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in lines:
        terminalreporter.write_line(line)
    passed = sum(c.passed for c in _RESULTS.criteria.values())
    terminalreporter.write_line(f"{passed}/{len(lines)} criteria pass")
