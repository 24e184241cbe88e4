import numpy as np
import pytest

from dformer.core import current_tape


@pytest.fixture(autouse=True)
def _fresh_tape():
    current_tape().clear()
    yield
    current_tape().clear()


@pytest.fixture
def rs():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    broken = {r.nodeid for key in ("failed", "error") for r in terminalreporter.stats.get(key, [])}
    for cid in mod.CRITERIA:
        if cid in mod.RESULTS:
            ok, detail = mod.RESULTS[cid]
            status = "PASS" if ok else "FAIL"
        elif any(f"test_c{cid}_" in n for n in broken):
            status, detail = "FAIL", "errored before reporting"
        else:
            status, detail = "----", "not run in this session"
        terminalreporter.write_line(f"criterion {cid:>3}: {status}  {detail}")
