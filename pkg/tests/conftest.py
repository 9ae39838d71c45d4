"""Pytest wiring shared by the whole suite.

``CRITERIA`` names the shipping gate: every key has a matching
``test_<key>_*`` function in ``test_acceptance.py``.  After any run that
touched that module, the terminal summary prints one verdict line per
criterion — including the failing ones, which is the whole point of the
summary.
"""

CRITERIA = {
    "c01": "full-corpus accuracy runs replaced by this battery",
    "c02": "gradients: every op and layer vs central differences",
    "c03": "vectorized ops match naive loop oracles",
    "c04": "channel gate recomposition; gates strictly in (0, 1)",
    "c05": "zeroed residual branch reduces to relu(shortcut)",
    "c06": "default recipe memorizes the 56-sample fixture",
    "c07": "fresh model scores at chance on a balanced fixture",
    "c08": "uniform logits cost ln 7; softmax rows sum to 1",
    "c09": "stale metrics cut the rate by its factor down to the floor",
    "c10": "accuracy: trace over total, binary case and counting oracle",
    "c11": "loader fidelity, flip involution, batch conservation, counts",
    "c12": "seeded replay, bitwise roundtrip, resume equals straight run",
}

_ACCEPTANCE = "test_acceptance.py"


def _verdict(states: set) -> str:
    if "failed" in states or "error" in states:
        return "FAIL"
    if states == {"skipped"}:
        return "SKIP"
    if "passed" in states:
        return "PASS"
    return "NOT RUN"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    outcomes: dict[str, set] = {}
    module_error = False
    for status in ("passed", "failed", "error", "skipped"):
        for report in terminalreporter.stats.get(status, []):
            nodeid = getattr(report, "nodeid", "")
            if _ACCEPTANCE not in nodeid:
                continue
            if "::" not in nodeid:
                # the module itself failed to collect; every criterion is down
                module_error = module_error or status in ("failed", "error")
                continue
            test_name = nodeid.rsplit("::", 1)[-1]
            for key in CRITERIA:
                if test_name.startswith(f"test_{key}_"):
                    outcomes.setdefault(key, set()).add(status)
    if not outcomes and not module_error:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for key, label in CRITERIA.items():
        states = outcomes.get(key, set())
        verdict = "FAIL" if module_error and not states else _verdict(states)
        terminalreporter.write_line(f"{key.upper()}  {label:<58} {verdict}")
