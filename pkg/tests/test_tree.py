import random
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from propkit.synth import random_tree
from propkit.tree import (
    PropagationTree,
    PropNode,
    arrival_order,
    children_of,
    degree_histogram,
    depth_of,
    make_tree,
    read_jsonl,
    strip_synthetic,
    validate_tree,
    write_jsonl,
)


def naive_is_tree(tree):
    """Independent check: single root, every node reaches the root, no cycles."""
    idx = [n.index for n in tree.nodes]
    if sorted(idx) != list(range(len(idx))):
        return False
    parent = {n.index: n.parent_index for n in tree.nodes}
    if [i for i, p in parent.items() if p is None] != [0]:
        return False
    for i in parent:
        seen = set()
        while i is not None:
            if i in seen or i not in parent:
                return False
            seen.add(i)
            i = parent[i]
    return True


def test_root_only_is_valid():
    assert validate_tree(make_tree("r", [None])) == []


def test_forward_parent_reported():
    t = PropagationTree(
        "bad",
        None,
        (PropNode(0, None, "n"), PropNode(1, 0, "a"), PropNode(2, 5, "b")),
    )
    kinds = [(v.kind, v.index) for v in validate_tree(t)]
    assert ("forward_parent", 2) in kinds


def test_other_violations():
    t = PropagationTree(
        "bad",
        7,
        (
            PropNode(0, 3, "n"),
            PropNode(1, None, "a"),
            PropNode(1, 1, " "),
            PropNode(4, 0, "x", timestamp=5),
        ),
    )
    kinds = {v.kind for v in validate_tree(t)}
    assert {"bad_label", "root_has_parent", "extra_root", "duplicate_index", "index_gap",
            "self_loop", "empty_content"} <= kinds


def test_timestamp_inversion_reported():
    t = make_tree("ts", [None, 0], timestamps=[100, 50])
    assert [v.kind for v in validate_tree(t)] == ["timestamp_inversion"]


def test_fixture_generator_trees_are_valid():
    rng = random.Random(3)
    for i in range(50):
        t = random_tree(rng, 10, f"t{i}")
        assert validate_tree(t) == []
        assert naive_is_tree(t)


def test_validate_is_idempotent(small_tree):
    before = small_tree.to_dict()
    assert validate_tree(small_tree) == validate_tree(small_tree)
    assert small_tree.to_dict() == before


def test_star_histogram(star4):
    assert degree_histogram(star4) == {1: 3, 3: 1}


def test_chain_depth(chain3):
    assert depth_of(chain3, 2) == 2
    assert depth_of(chain3, 0) == 0


def test_out_of_range_index(chain3):
    with pytest.raises(IndexError):
        depth_of(chain3, 3)
    with pytest.raises(IndexError):
        children_of(chain3, -1)


def test_children_order_time_then_index():
    t = PropagationTree(
        "o",
        None,
        (
            PropNode(0, None, "n", 0),
            PropNode(1, 0, "late", 50),
            PropNode(2, 0, "no time", None),
            PropNode(3, 0, "early", 10),
            PropNode(4, 0, "tie", 10),
        ),
    )
    assert children_of(t, 0) == [3, 4, 1, 2]


def test_depth_and_degree_against_brute_force():
    rng = random.Random(11)
    t = random_tree(rng, 20)
    for n in t.nodes:
        # brute force: walk parents
        d, cur = 0, n
        while cur.parent_index is not None:
            cur = next(m for m in t.nodes if m.index == cur.parent_index)
            d += 1
        assert depth_of(t, n.index) == d
    deg = Counter()
    for n in t.nodes:
        k = sum(1 for m in t.nodes if m.parent_index == n.index) + (n.parent_index is not None)
        deg[k] += 1
    assert degree_histogram(t) == dict(deg)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 80), st.integers(0, 10_000))
def test_handshake_and_depth_recursion(n, seed):
    t = random_tree(random.Random(seed), n)
    hist = degree_histogram(t)
    assert sum(k * c for k, c in hist.items()) == 2 * (n - 1)
    for node in t.nodes[1:]:
        assert depth_of(t, node.index) == depth_of(t, node.parent_index) + 1


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 60), st.integers(0, 10_000))
def test_arrival_order_parents_first(n, seed):
    t = random_tree(random.Random(seed), n)
    order = arrival_order(t)
    pos = {i: k for k, i in enumerate(order)}
    assert sorted(order) == list(range(n))
    for node in t.nodes[1:]:
        assert pos[node.parent_index] < pos[node.index]
    keys = [(t.nodes[i].timestamp, i) for i in order]
    assert keys == sorted(keys)  # monotone timestamps: plain global sort


def test_jsonl_round_trip(tmp_path, random_trees):
    p = tmp_path / "t.jsonl"
    write_jsonl(random_trees[:10], p)
    assert read_jsonl(p) == random_trees[:10]


def test_strip_synthetic_recovers_real(small_tree):
    from dataclasses import replace

    from propkit.tree import Origin

    grown = small_tree.with_nodes(
        small_tree.nodes + (PropNode(4, 2, "gen", 21, Origin.SYNTHETIC),)
    )
    assert strip_synthetic(grown) == small_tree
    assert replace(small_tree) == small_tree
