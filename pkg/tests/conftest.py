"""Shared pytest plumbing: print the acceptance scorecard after the run."""


def pytest_terminal_summary(terminalreporter, exitstatus):
    try:
        import test_acceptance
    except ImportError:
        return
    lines = getattr(test_acceptance, "SCORECARD", [])
    if lines:
        terminalreporter.section("acceptance scorecard")
        for line in lines:
            terminalreporter.write_line(line)
