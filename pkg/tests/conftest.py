def pytest_configure(config):
    config._acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = sorted(config._acceptance_lines)
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in lines:
            terminalreporter.write_line(line)
