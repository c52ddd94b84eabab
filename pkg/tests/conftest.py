import numpy as np
import pytest

from avtok.bpe import bpe_train
from avtok.dialogue import synth_dialogue, text_corpus


@pytest.fixture(scope="session")
def contexts():
    return [synth_dialogue(i, 3) for i in range(12)]


@pytest.fixture(scope="session")
def bpe(contexts):
    return bpe_train(text_corpus(contexts), 512)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance report -------------------------------------------------------------

ACCEPTANCE_KEY = pytest.StashKey[dict]()
CRITERIA = [f"C{i}" for i in range(1, 11)]


@pytest.fixture
def acceptance(request):
    """Record one criterion outcome; printed in the terminal summary."""
    results = request.config.stash.setdefault(ACCEPTANCE_KEY, {})

    def record(cid, title, ok, detail=""):
        results[cid] = (title, bool(ok), detail)
        return ok

    return record


def _criterion(nodeid):
    name = nodeid.rsplit("::", 1)[-1]
    if "test_acceptance" in nodeid and name.startswith("test_c"):
        return "C" + name[len("test_c"):].split("_", 1)[0]
    return None


def pytest_runtest_logreport(report):
    cid = _criterion(report.nodeid)
    if cid and report.when == "call" or (cid and report.failed):
        _SEEN[cid] = report.outcome


_SEEN = {}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(ACCEPTANCE_KEY, {})
    if not results and not _SEEN:
        return
    terminalreporter.section("acceptance criteria")
    for cid in CRITERIA:
        if cid in results:
            title, ok, detail = results[cid]
            terminalreporter.write_line(f"{cid} {'PASS' if ok else 'FAIL'}  {title}  [{detail}]")
        elif cid in _SEEN:
            terminalreporter.write_line(f"{cid} FAIL  (errored before a verdict)")
        else:
            terminalreporter.write_line(f"{cid} NOT RUN  (deselected)")
