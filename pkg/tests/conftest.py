import pytest

from promptlex.mlm import ModelConfig, MaskedLMModel, PromptTemplate
from promptlex.synthetic import CipherFixture
from promptlex.tokenizer import SPECIAL_TOKENS, SubwordVocabulary


@pytest.fixture(scope="session")
def cipher():
    return CipherFixture(seed=0)


@pytest.fixture(scope="session")
def tiny_vocab():
    # r = 8
    return SubwordVocabulary(SPECIAL_TOKENS + ("a", "b", "c", "ab"))


TINY = dict(layers=1, heads=2, dim=8, ff_dim=16, max_len=16)


@pytest.fixture
def tiny_model(tiny_vocab):
    def make(seed=0, dtype="float64", init_std=0.5):
        return MaskedLMModel(ModelConfig(seed=seed, dtype=dtype, init_std=init_std, **TINY), len(tiny_vocab))

    return make


@pytest.fixture(scope="session")
def empty_template():
    return PromptTemplate(prefix="", infix="")


_CRITERIA: list[str] = []


@pytest.fixture
def criterion():
    """Record one acceptance line; returns ``passed`` so the test can assert on it."""

    def record(number, name, passed, detail=""):
        status = "PASS" if passed else "FAIL"
        line = f"criterion {number:>2} {status}  {name}" + (f"  [{detail}]" if detail else "")
        _CRITERIA.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
