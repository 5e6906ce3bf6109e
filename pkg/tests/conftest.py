import pytest

from bregsurr import solvers

CHECKED = {"runs": 0, "violations": 0}
ACCEPTANCE = {}


@pytest.fixture(autouse=True)
def bound_holds_on_every_run():
    """Every solver run made by a test must satisfy the averaged error bound."""
    traces = []
    solvers.TRACE_OBSERVERS.append(traces.append)
    try:
        yield
    finally:
        solvers.TRACE_OBSERVERS.remove(traces.append)
    bad = [t for t in traces if t.opt_terms and not t.check_bound()]
    CHECKED["runs"] += len(traces)
    CHECKED["violations"] += len(bad)
    assert not bad, f"{len(bad)} of {len(traces)} runs violate the bound, " \
                    f"worst gap {min(float(t.bound_gaps().min()) for t in bad):.3e}"


@pytest.fixture
def acceptance():
    """Record ``(number, ok, detail)`` for the end-of-session criterion report."""
    def record(number, ok, detail):
        ACCEPTANCE[number] = (bool(ok), detail)
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})")
    return record


def pytest_terminal_summary(terminalreporter):
    terminalreporter.write_line(
        f"bound check: {CHECKED['runs']} solver runs, {CHECKED['violations']} violations")
    if not ACCEPTANCE:
        return
    if 2 in ACCEPTANCE:
        ok, detail = ACCEPTANCE[2]
        ok = ok and CHECKED["violations"] == 0
        ACCEPTANCE[2] = (ok, f"{detail}; session-wide {CHECKED['runs']} runs, "
                             f"{CHECKED['violations']} violations")
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'} ({detail})")
