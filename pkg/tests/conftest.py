import os

import pytest

# keep thread pools small and deterministic under the test runner
os.environ.setdefault("MUXREAD_THREADS", "4")

_RESULTS = {}
_TITLES = {}


class AcceptanceRecorder:
    def title(self, cid, text):
        _TITLES[cid] = text

    def record(self, cid, ok, detail):
        _RESULTS.setdefault(cid, []).append((bool(ok), detail))
        return ok


@pytest.fixture(scope="session")
def acceptance():
    return AcceptanceRecorder()


def pytest_terminal_summary(terminalreporter):
    if not _TITLES:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for cid in sorted(_TITLES, key=lambda c: int(c[1:])):
        rows = _RESULTS.get(cid)
        if not rows:
            tr.write_line(f"{cid:>4} NOT RUN  {_TITLES[cid]}")
            continue
        ok = all(r[0] for r in rows)
        failed = [d for good, d in rows if not good]
        detail = "; ".join(failed if failed else [d for _, d in rows])
        tr.write_line(f"{cid:>4} {'PASS' if ok else 'FAIL'}     {_TITLES[cid]} | {detail}")
