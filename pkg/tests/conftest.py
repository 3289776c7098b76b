from collections import defaultdict

import pytest

_CRITERIA = defaultdict(list)


class CriterionLog:
    def record(self, number, title, ok, detail=""):
        _CRITERIA[number].append((title, bool(ok), detail))
        return ok


@pytest.fixture(scope="session")
def criteria():
    return CriterionLog()


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        parts = _CRITERIA[number]
        ok = all(p[1] for p in parts)
        title = parts[0][0]
        terminalreporter.write_line(f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}")
        for _, part_ok, detail in parts:
            if detail:
                terminalreporter.write_line(f"      {'ok ' if part_ok else 'BAD'} {detail}")
