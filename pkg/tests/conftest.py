from __future__ import annotations

import shutil
from pathlib import Path

import pytest

from repro.llm.embed import HashEmbedder
from repro.llm.gateway import Gateway, ScriptedBackend
from repro.run import RunConfig

FIXTURES = Path(__file__).parent / "fixtures"

_acceptance: dict[str, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(cid, title): acceptance criterion covered by a test")


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def scripted():
    """Factory: a gateway over a ScriptedBackend, plus the backend itself."""

    def make(script, **kwargs):
        backend = ScriptedBackend(script)
        kwargs.setdefault("embedder", HashEmbedder())
        kwargs.setdefault("sleep", lambda s: None)
        return Gateway(backend, **kwargs), backend

    return make


@pytest.fixture
def replay_config(tmp_path):
    """Factory: a replay-mode RunConfig over the recorded fixture, in a fresh run dir."""

    def make(name: str = "run", **overrides) -> RunConfig:
        return RunConfig.load(FIXTURES / "config.yaml", run_dir=str(tmp_path / name), **overrides)

    return make


@pytest.fixture
def fixture_copy(tmp_path):
    """A private copy of the fixture directory (for tests that record)."""
    dest = tmp_path / "fixtures"
    shutil.copytree(FIXTURES, dest, ignore=shutil.ignore_patterns("golden"))
    return dest


def pytest_runtest_logreport(report):
    marker = getattr(report, "criterion", None)
    if marker is None:
        return
    cid, title = marker
    rec = _acceptance.setdefault(cid, {"title": title, "passed": True, "ran": False})
    if report.when == "call":
        rec["ran"] = True
    if report.failed:
        rec["passed"] = False


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    m = item.get_closest_marker("criterion")
    if m is not None:
        report.criterion = tuple(m.args)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(_acceptance, key=lambda c: int(c[2:])):
        rec = _acceptance[cid]
        status = "PASS" if rec["passed"] and rec["ran"] else "FAIL"
        terminalreporter.write_line(f"{cid} {status}: {rec['title']}")
