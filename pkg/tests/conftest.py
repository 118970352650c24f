import random
from pathlib import Path

import pytest

from propkit.synth import random_tree
from propkit.tree import PropagationTree, PropNode, make_tree

FIXTURES = Path(__file__).parent / "fixtures"

# criterion number -> PASS/FAIL line, filled in by test_acceptance.py
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])


@pytest.fixture
def fixtures_dir():
    return FIXTURES


@pytest.fixture
def pheme_dir():
    return FIXTURES / "pheme20"


@pytest.fixture
def star4():
    return make_tree("star", [None, 0, 0, 0])


@pytest.fixture
def chain3():
    return make_tree("chain", [None, 0, 1])


@pytest.fixture
def small_tree():
    # root -> A, B ; A -> C
    return PropagationTree(
        "abc",
        1,
        (
            PropNode(0, None, "news", 0),
            PropNode(1, 0, "A says hi", 10),
            PropNode(2, 0, "B says hello", 20),
            PropNode(3, 1, "C replies to A", 30),
        ),
    )


def hundred_trees(seed=7, lo=2, hi=60):
    rng = random.Random(seed)
    return [random_tree(rng, rng.randint(lo, hi), f"r{i:03d}") for i in range(100)]


@pytest.fixture(scope="session")
def random_trees():
    return hundred_trees()
