import pytest

from selboot import simulator

# criterion number -> (passed, detail line), filled in by test_acceptance
ACCEPTANCE = {}

HALFSPACE_TRIALS = 10_000


@pytest.fixture(scope="session")
def halfspace_records():
    """One shared run of the flat-boundary experiment (m + 1 = 2, 13 scales, B = 10^4)."""
    region = simulator.half_space(2)
    config = simulator.PipelineConfig(B=10_000, seed=20_240_601)
    return simulator.run_trials(region, simulator.boundary_point(region), HALFSPACE_TRIALS, config)


def record(criterion, passed, detail):
    """Store a criterion outcome; ``passed=None`` marks it as skipped."""
    ACCEPTANCE[criterion] = (passed if passed is None else bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[k]
        status = "SKIP" if passed is None else "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {k:2d}: {status}  {detail}")
