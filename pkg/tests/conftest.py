import numpy as np
import pytest

from mtuning.encoder import FrozenEncoder, PromptContext, TokenTable
from mtuning.lexicon import Vocabulary

# Filled by test_acceptance; printed once at the end of the session.
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


def small_problem(seed, n_d=3, n_o=2, L=2, token_dim=5, out_dim=6, n=7, position="mid"):
    """A random tiny tuning problem for gradient checks."""
    g = np.random.default_rng(seed)
    enc = FrozenEncoder(
        W1=g.normal(size=(4, token_dim)), b1=g.normal(size=4) * 0.1,
        W2=g.normal(size=(out_dim, 4)), b2=g.normal(size=out_dim) * 0.1,
    )
    ctx = PromptContext(g.normal(size=(L, token_dim)) * 0.5, position)
    tokens = g.normal(size=(n_d + n_o, token_dim))
    X = g.normal(size=(n, out_dim))
    y = g.integers(0, n_d, size=n)
    return enc, ctx, tokens, X, y


@pytest.fixture
def tiny_vocab():
    return Vocabulary(("a", "b", "c"), ("x", "y"))


@pytest.fixture
def tiny_tokens():
    g = np.random.default_rng(3)
    return TokenTable(["a", "b", "c", "x", "y"], g.normal(size=(5, 4)))
