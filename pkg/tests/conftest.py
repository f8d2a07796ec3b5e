def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(RESULTS):
        parts = RESULTS[criterion]
        failed = [p for p, ok, _ in parts if not ok]
        status = "PASS" if not failed else "FAIL"
        line = f"{status} criterion {criterion:>2}: {len(parts) - len(failed)}/{len(parts)} parts"
        if failed:
            line += " (failing: " + "; ".join(failed) + ")"
        terminalreporter.write_line(line)
