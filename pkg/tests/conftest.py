import os

import pytest
from hypothesis import HealthCheck, settings

from kgfilter.kg import KnowledgeGraph, Triple

settings.register_profile(
    "default", max_examples=100, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile("ci", max_examples=300, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

GOLDEN_DIR = os.path.join(os.path.dirname(__file__), "golden")


@pytest.fixture
def chain_kg():
    return KnowledgeGraph.from_triples(
        [Triple("A", "r1", "B"), Triple("B", "r2", "C"), Triple("C", "r3", "D")]
    )


@pytest.fixture
def madhavan_kg():
    return KnowledgeGraph.from_triples(
        [
            Triple("R.Madhavan", "spouse", "Sarita Birje"),
            Triple("R.Madhavan", "occupation", "actor"),
            Triple("Kangana Ranaut", "occupation", "actor"),
            Triple("Kangana Ranaut", "country of citizenship", "India"),
        ]
    )


# acceptance criteria report: criterion number -> (description, passed, detail)
ACCEPTANCE_RESULTS: dict[int, tuple[str, bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        desc, passed, detail = ACCEPTANCE_RESULTS[number]
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] {number:2d}. {desc}" + (f" ({detail})" if detail else ""))
