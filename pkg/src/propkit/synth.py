"""Seeded synthetic trees for smoke tests and sanity corpora."""

from __future__ import annotations

import random
from typing import Optional

from .tree import FAKE_NEWS, TRUE_NEWS, PropagationTree, PropNode

VOCAB = (
    "breaking news police report confirmed fake hoax true source official statement "
    "praying sad unbelievable check facts link share please debunked wow really not sure "
    "video photo witness scene crowd evacuated update live stay safe thoughts families "
    "government denies claims reporters rumor spreading quickly"
).split()


def random_text(rng: random.Random, lo: int = 3, hi: int = 9) -> str:
    return " ".join(rng.choice(VOCAB) for _ in range(rng.randint(lo, hi)))


def random_tree(
    rng: random.Random,
    n: int,
    sample_id: str = "t",
    label: Optional[int] = None,
    timestamps: bool = True,
) -> PropagationTree:
    """Uniform random recursive tree on ``n`` nodes with monotone timestamps.

    Timestamps occasionally tie with the parent so that ordering tiebreaks
    get exercised.
    """
    nodes = [PropNode(0, None, "NEWS " + random_text(rng), 1_000 if timestamps else None)]
    for i in range(1, n):
        p = rng.randrange(i)
        ts = None
        if timestamps:
            ts = nodes[p].timestamp + rng.choice((0, 1, 5, 30, 120, 600))
        nodes.append(PropNode(i, p, random_text(rng) + f" c{i}", ts))
    return PropagationTree(sample_id, label, tuple(nodes))


def chain_tree(rng: random.Random, sample_id: str, length: int, label: int = FAKE_NEWS) -> PropagationTree:
    """A deep reply chain of ``length`` comments, with a couple of stray leaves."""
    nodes = [PropNode(0, None, "NEWS " + random_text(rng), 0)]
    for i in range(1, length + 1):
        nodes.append(PropNode(i, i - 1, random_text(rng), i * 10))
    for _ in range(rng.randint(0, 2)):
        i = len(nodes)
        p = rng.randrange(1, length + 1)
        nodes.append(PropNode(i, p, random_text(rng), nodes[p].timestamp + 1))
    return PropagationTree(sample_id, label, tuple(nodes))


def star_tree(rng: random.Random, sample_id: str, breadth: int, label: int = TRUE_NEWS) -> PropagationTree:
    """A broad star: ``breadth`` direct replies plus at most one depth-2 reply."""
    nodes = [PropNode(0, None, "NEWS " + random_text(rng), 0)]
    for i in range(1, breadth + 1):
        nodes.append(PropNode(i, 0, random_text(rng), i * 10))
    if rng.random() < 0.5:
        i = len(nodes)
        p = rng.randrange(1, breadth + 1)
        nodes.append(PropNode(i, p, random_text(rng), nodes[p].timestamp + 1))
    return PropagationTree(sample_id, label, tuple(nodes))


def separable_corpus(n: int, seed: int = 0) -> list[PropagationTree]:
    """Half deep-chain fakes (depth >= 6), half broad-star reals (breadth >= 6)."""
    rng = random.Random(seed)
    out = []
    for i in range(n):
        if i % 2:
            out.append(chain_tree(rng, f"fake-{i:04d}", rng.randint(6, 14)))
        else:
            out.append(star_tree(rng, f"real-{i:04d}", rng.randint(6, 14)))
    rng.shuffle(out)
    return out
