import pytest

from moses_lab import experiment

ACCEPTANCE = {}


def record_verdict(number, title, ok, detail=""):
    ACCEPTANCE[number] = (title, bool(ok), detail)
    print(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}  {detail}")


@pytest.fixture(scope="session")
def flagship_setup():
    """Default run config with its source dataset generated and the model pretrained (done once)."""
    return experiment.prepare(experiment.load_setup())


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {title}  {detail}")
