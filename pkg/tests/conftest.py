import os

# single-threaded BLAS so hash comparisons are meaningful
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

from acceptance_report import CRITERIA, RESULTS  # noqa: E402


def pytest_collection_modifyitems(session, config, items):
    picked = [item.name for item in items if "test_acceptance.py" in item.nodeid]
    config._acceptance_selected = bool(picked)
    config._acceptance_keys = {key for key in CRITERIA
                               if any(name.startswith(f"test_{key.lower()}") for name in picked)}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not getattr(config, "_acceptance_selected", False):
        return
    terminalreporter.section("acceptance criteria")
    for key in CRITERIA:
        parts = RESULTS.get(key)
        if key not in config._acceptance_keys:
            terminalreporter.write_line(f"{key} NOT RUN  (deselected)")
            continue
        if not parts:
            terminalreporter.write_line(f"{key} FAIL  (did not complete)")
            continue
        ok = all(p for p, _ in parts)
        detail = "; ".join(d for _, d in parts)
        terminalreporter.write_line(f"{key} {'PASS' if ok else 'FAIL'}  {detail}")
