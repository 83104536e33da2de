from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

CRITERIA = {
    "C1": "Reward-oracle equivalence (1000 pairs, 4.4 / -1.4)",
    "C2": "IoU pixel-oracle equivalence (10k pairs, 1/7 case)",
    "C3": "Mask semantics: exact region, idempotent, depends only on (original, latest draft)",
    "C4": "Budget enforcement over 200 adversarial sessions",
    "C5": "Parser round-trip, worked tool-and-reflection example, single-byte corruption",
    "C6": "End-to-end oracle run 100.00/100.00 and noisy replay fidelity",
    "C7": "Canny fixtures: constant, step, reference match on 5 fixtures",
    "C8": "V2-CoT partition, cleaning fixtures, distribution totals",
    "C9": "Verification-reward truth table",
}

_outcomes: dict[str, list[bool]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(cid): acceptance criterion the test belongs to")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    cid = marker.args[0]
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        _outcomes.setdefault(cid, []).append(not rep.failed)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for cid, desc in CRITERIA.items():
        got = _outcomes.get(cid)
        status = "NOT RUN" if not got else ("PASS" if all(got) else "FAIL")
        n = f"{sum(got)}/{len(got)} tests" if got else ""
        tr.write_line(f"{cid} {status:<7} {desc} {n}".rstrip())
