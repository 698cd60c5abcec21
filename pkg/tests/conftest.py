from support import ACCEPTANCE

CRITERIA = {
    "test_crf_oracle_equivalence": 1, "test_gradient_suite": 2, "test_auc_correctness": 3,
    "test_labeling_rule": 4, "test_overfit_capability": 5, "test_timeline_signal_replication": 6,
    "test_lasso_sparsity": 7, "test_synthetic_calibration": 8, "test_cv_hygiene": 9,
    "test_importance_metrics": 10, "test_equivalence_bridges": 11,
}
_ran = set()


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid or report.when != "call":
        return
    n = CRITERIA.get(report.nodeid.rsplit("::", 1)[-1])
    if n is None:
        return
    _ran.add(n)
    if report.failed and n not in ACCEPTANCE:
        msg = report.longreprtext.strip().splitlines()[-1] if report.longreprtext else "error"
        ACCEPTANCE[n] = ("errored", False, msg)


def pytest_terminal_summary(terminalreporter):
    if not _ran:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, len(CRITERIA) + 1):
        if n in ACCEPTANCE:
            title, ok, detail = ACCEPTANCE[n]
            terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:2d}. {title}: {detail}")
        else:
            terminalreporter.write_line(f"[----] {n:2d}. not run in this session")
