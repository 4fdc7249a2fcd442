import numpy as np
import pytest

from qorpred.circuit import parse_graph
from qorpred.datagen import SynthSpec, gen_corpus

# 3 PIs (0-2), AND nodes 3-5, PO 6. Node 5 ANDs two inverted inputs.
GOLDEN_AIG_TEXT = """\
# a, b, c -> not(a.b + b.c)
aig 7 7
node 0 0 0
node 1 0 0
node 2 0 0
node 3 2 0
node 4 2 0
node 5 2 2
node 6 1 0
edge 0 3
edge 1 3
edge 1 4
edge 2 4
edge 3 5
edge 4 5
edge 5 6
"""


@pytest.fixture
def golden():
    return parse_graph(GOLDEN_AIG_TEXT)


@pytest.fixture
def golden_text():
    return GOLDEN_AIG_TEXT


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_corpus():
    return gen_corpus(SynthSpec(circuits=3, seqs=10, min_nodes=12, max_nodes=20, seed=5))


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
