"""Prints one ACCEPTANCE verdict line per sign-off test, through the
terminal reporter so the lines survive output capture."""

import pytest

ACCEPTANCE_TITLES = {
    "test_1_pool_convergence": (1, "optimal pool convergence"),
    "test_2_start_latency_elimination": (2, "start-latency elimination"),
    "test_3_flow_adaptation_policies": (3, "flow adaptation policies"),
    "test_4_single_live_sender": (4, "single live sender over 60s"),
    "test_5_exactly_once_million_rows": (5, "exactly-once delivery at 1M rows"),
    "test_6_lock_free_queue_integrity": (6, "lock-free queue integrity"),
    "test_7_scaling_ratio_arithmetic": (7, "scaling ratio arithmetic"),
    "test_8_desk_scale_scaling_efficiency": (8, "desk-scale scaling efficiency"),
    "test_9_atomic_commit_visibility": (9, "atomic commit visibility"),
}

_config = None


def pytest_configure(config):
    global _config
    _config = config


@pytest.hookimpl(trylast=True)
def pytest_runtest_logreport(report):
    # trylast: let the reporter finish its own PASSED/FAILED line first
    if report.when != "call" or _config is None:
        return
    entry = ACCEPTANCE_TITLES.get(report.nodeid.rpartition("::")[2])
    if entry is None:
        return
    reporter = _config.pluginmanager.get_plugin("terminalreporter")
    if reporter is None:
        return
    number, title = entry
    verdict = "PASS" if report.passed else "FAIL"
    reporter.write_line(f"ACCEPTANCE {number} {title}: {verdict}")
