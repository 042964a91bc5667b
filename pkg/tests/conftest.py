import pytest

from cirloop import build_index
from cirloop.synth import FailureModeConfig, gen_corpus, gen_queries, oracle_suite

_CRITERIA: dict[int, str] = {}


@pytest.fixture
def record_criterion():
    """Record one acceptance verdict; the lines are repeated in the terminal summary."""

    def record(number: int, title: str, ok: bool, detail: str = ""):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {title}" + (f" ({detail})" if detail else "")
        _CRITERIA[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[number])


class SynthWorld:
    """Small synthetic benchmark bundled with a fresh oracle suite factory."""

    def __init__(self, seed=3, items=120, queries=20, failure=FailureModeConfig(1, 1)):
        self.corpus = gen_corpus(seed, items)
        self.queries = gen_queries(self.corpus, seed, queries)
        self.dim = len(self.corpus.vocabulary.universe)
        self.index = build_index(self.corpus.records(), self.dim)
        self.locators = self.corpus.manifest()
        self.failure = failure

    def suite(self, failure=None, parallelism=4):
        return oracle_suite(self.corpus.world(), failure or self.failure, parallelism=parallelism)


@pytest.fixture(scope="session")
def world():
    return SynthWorld()
