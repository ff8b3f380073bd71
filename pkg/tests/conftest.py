import harness

TITLES = {
    1: "formation without a preceding vehicle",
    2: "safety behind an aggressive preceding vehicle",
    3: "formation time scaling with platoon size",
    4: "RLS against batch least squares",
    5: "horizon and closure-time closed forms",
    6: "QP solver against active-set enumeration",
    7: "prediction chain against scalar simulation",
    8: "byte-identical preset trajectories",
}


def pytest_terminal_summary(terminalreporter):
    if not harness.ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(harness.ACCEPTANCE):
        ok, detail = harness.ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n}. {TITLES[n]}: {detail}")
