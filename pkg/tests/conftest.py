from __future__ import annotations

from pathlib import Path

import pytest

from metaquery.adapters import Adapter
from metaquery.llm import MockBackend
from metaquery.model import KIND_ORDER, Document, DocumentRepository, OperatorKind

ROOT = Path(__file__).resolve().parents[1]
FIG4 = ROOT / "fixtures" / "fig4"
DATA = Path(__file__).resolve().parent / "data"

FIG4_QUESTION = (
    "When was the last time capital punishment took place in the state whose flag features a bear "
    "and has a major city in the Sun Belt?"
)
FIG4_CITIES = (
    "Anaheim, Bakersfield, Fresno, Long Beach, Los Angeles, Oakland, Riverside, Sacramento, "
    "San Bernardino, San Diego, San Jose, San Francisco"
)


class StubAdapter(Adapter):
    """Answers with a fixed string and no backend call; capability set is configurable."""

    def __init__(self, backend, adapter_id, supported=KIND_ORDER, answer="stub answer"):
        super().__init__(backend, adapter_id)
        self.supported = frozenset(OperatorKind.parse(k) for k in supported)
        self.answer = answer

    def _run(self, kind, text, docs):
        return self.answer, self.answer


def text_doc(doc_id, title="t", body="body", caption="c"):
    return Document(doc_id, "text", title, caption, body)


def table_doc(doc_id, headers, rows, title="tbl", caption="c"):
    return Document(doc_id, "table", title, caption, {"headers": headers, "rows": rows})


def image_doc(doc_id, title="img", caption="a picture", path="x.png"):
    return Document(doc_id, "image", title, caption, {"path": path})


@pytest.fixture
def fig4_repo():
    from metaquery.model import repo_load

    return repo_load(FIG4 / "repository.json")


@pytest.fixture
def fig4_backend():
    return MockBackend.from_file(FIG4 / "script.json")


@pytest.fixture
def small_repo():
    return DocumentRepository(
        [
            text_doc("t1", "Doc one", "The answer is forty two."),
            table_doc("tab1", ["name", "value"], [["a", "1"], ["b", "2"]], title="Values"),
            image_doc("i1", "Picture", "a red square"),
        ]
    )


# --- acceptance reporting -------------------------------------------------------

_ACCEPTANCE: dict[str, list[str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(label): exit criterion reported in the terminal summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    results = _ACCEPTANCE.setdefault(marker.args[0], [])
    if rep.skipped:
        results.append("skipped")
    elif rep.failed:
        results.append("failed")
    elif rep.when == "call":
        results.append("passed")


def _criterion_number(label):
    head = label.split(".")[0]
    return int(head) if head.isdigit() else 99


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_ACCEPTANCE, key=lambda s: (_criterion_number(s), s)):
        results = _ACCEPTANCE[label]
        if "failed" in results:
            status = "FAIL"
        elif "passed" in results:
            status = "PASS"
        else:
            status = "SKIP"
        terminalreporter.write_line(f"{status}  {label}")
