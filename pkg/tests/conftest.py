import numpy as np
import pytest

from mpciot.local import LocalCluster


@pytest.fixture
def rng():
    return np.random.default_rng(20241)


@pytest.fixture(params=["sh", "mal-lite"])
def cluster(request):
    return LocalCluster(request.param, seed=7)


@pytest.fixture
def sh_cluster():
    return LocalCluster("sh", seed=7)


@pytest.fixture
def mal_cluster():
    return LocalCluster("mal-lite", seed=7)


_acceptance: dict[int, list[tuple[str, str, str]]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        detail = dict(item.user_properties).get("detail", "")
        if rep.skipped and not detail:
            detail = str(rep.longrepr[-1]) if isinstance(rep.longrepr, tuple) else "skipped"
        elif rep.failed and not detail:
            detail = rep.longreprtext.strip().splitlines()[-1] if rep.longreprtext else "error"
        _acceptance.setdefault(marker.args[0], []).append((item.name, rep.outcome, detail))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_acceptance):
        runs = _acceptance[n]
        verdict = "FAIL" if any(o == "failed" for _, o, _ in runs) else "PASS"
        if all(o == "skipped" for _, o, _ in runs):
            verdict = "SKIP"
        notes = "; ".join(f"{d} [{o}]" if o != "passed" else d for _, o, d in runs)
        terminalreporter.write_line(f"criterion {n}: {verdict} - {notes}")
