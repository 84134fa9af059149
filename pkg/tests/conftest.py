import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))


def pytest_runtest_logreport(report):
    # One visible pass/fail line per acceptance criterion.
    if "test_acceptance" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.when == "call":
        print(f"\n[{'PASS' if report.passed else 'FAIL'}] {name}", flush=True)
    elif report.when == "setup" and report.skipped:
        print(f"\n[SKIP] {name}", flush=True)
