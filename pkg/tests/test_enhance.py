import json

import pytest

from propkit.enhance import (
    ABORTED,
    COMPLETE,
    PARTIAL,
    enhance,
    enhance_many,
    refusal_phrases,
    render_phi2,
    time_ordered_sequence,
    validate_candidate,
)
from propkit.gateway import GenConfig, Gateway, MockBackend, TransportError, build_gateway
from propkit.prompts import TemplateError
from propkit.tree import Origin, PropagationTree, PropNode, make_tree, strip_synthetic, validate_tree


def node(parent, index, content="a perfectly normal reply"):
    return json.dumps({"parent node index": parent, "node index": index, "content": content})


@pytest.fixture
def five():
    return make_tree("five", [None, 0, 0, 1, 2], ["news", "one two", "three four", "five six", "seven eight"])


def verdict(raw, tree):
    v, _ = validate_candidate(raw, tree)
    return v.outcome, v.gate, v.reason


@pytest.mark.parametrize(
    "raw,expected",
    [
        ("not json at all", ("fail", "syntactic", "malformed_json")),
        ("[1, 2]", ("fail", "syntactic", "malformed_json")),
        ('{"parent node index": 0, "content": "x y"}', ("fail", "syntactic", "missing_field")),
        (node(0, "five", "x y z"), ("fail", "syntactic", "missing_field")),
        (node(99, 5, "ok text"), ("fail", "structural", "invalid_parent_ref")),
        (node(None, 5, "ok text"), ("fail", "structural", "invalid_parent_ref")),
        (node(5, 5), ("fail", "structural", "self_loop")),
        (node(4, 2), ("fail", "structural", "cycle")),
        (node(1, 3), ("fail", "structural", "duplicate_index")),
        (node(0, 5, "   "), ("fail", "content", "empty_content")),
        (node(0, 5, "I cannot assist with that request"), ("fail", "content", "refusal_boilerplate")),
        (node(0, 5, "Five Six"), ("fail", "content", "repetitive")),
        (node(0, 5, "no no no no no way"), ("fail", "content", "repetitive")),
        (node(0, 5, "ok"), ("fail", "content", "too_short")),
        (node(3, 5), ("pass", "none", None)),
    ],
)
def test_gate_table(five, raw, expected):
    assert verdict(raw, five) == expected


def test_gate_order(five):
    # both structurally and content-invalid: structural wins
    assert verdict(node(99, 5, ""), five)[1] == "structural"
    # missing field beats bad parent
    assert verdict('{"parent node index": 99, "content": ""}', five)[1] == "syntactic"


def test_refusal_list_membership(five):
    for phrase in refusal_phrases():
        assert verdict(node(0, 5, phrase.capitalize() + " do that for you"), five)[2] == "refusal_boilerplate"


def test_index_rewrite_warns(five):
    v, n = validate_candidate(node(2, 9), five)
    assert v.ok and v.warning and n.index == 5 and n.parent_index == 2


def test_string_indices_accepted(five):
    v, n = validate_candidate(node("1", "5"), five)
    assert v.ok and n.parent_index == 1


def test_synthetic_timestamp():
    t = make_tree("t", [None, 0], timestamps=[100, 150])
    _, n = validate_candidate(node(1, 2), t)
    assert n.timestamp == 151 and n.origin is Origin.SYNTHETIC
    _, n = validate_candidate(node(1, 2), make_tree("u", [None, 0]))
    assert n.timestamp is None


def test_phi2_golden(fixtures_dir):
    t = make_tree("g", [None], ["Breaking: bridge closed downtown"])
    seq = time_ordered_sequence(t)
    for tid in ("P1", "P2", "P3"):
        golden = (fixtures_dir / "golden" / f"phi2_{tid.lower()}_rootonly.txt").read_bytes()
        assert render_phi2(seq, tid).encode("utf-8") == golden


def test_phi2_templates_share_tree(five):
    seq = time_ordered_sequence(five)
    p1, p3 = render_phi2(seq, "P1"), render_phi2(seq, "P3")
    tree_part = p1[len("Given the propagation tree: "):p1.index("], please") + 1]
    assert tree_part in p3 and p1 != p3


def test_phi2_errors():
    with pytest.raises(ValueError):
        render_phi2([], "P1")
    with pytest.raises(TemplateError):
        render_phi2([(None, 0, "x")], "P7")


def test_phi2_time_order():
    t = PropagationTree(
        "t", None,
        (PropNode(0, None, "n", 0), PropNode(1, 0, "late", 90), PropNode(2, 0, "early", 10)),
    )
    assert [e[1] for e in time_ordered_sequence(t)] == [0, 2, 1]


def mock_gw(script, **cfg):
    return Gateway(GenConfig(**cfg), MockBackend(script))


def test_k_zero_identity(five):
    out, tr = enhance(five, 0, mock_gw([]))
    assert out == five and tr.attempts == [] and tr.status == COMPLETE


def test_accepted_node_visible_in_next_prompt(five):
    out, tr = enhance(five, 2, mock_gw([node(0, 5, "brand new reply"), node(5, 6)]))
    assert tr.status == COMPLETE
    assert '"content": "brand new reply"' in tr.attempts[1].attempt.prompt
    assert out.nodes[6].parent_index == 5


def test_retry_then_pass(five):
    bad = "malformed {"
    script = [bad, bad, node(0, 5, "first new one"), bad, bad, node(5, 6, "second new one")]
    out, tr = enhance(five, 2, mock_gw(script, max_retries=3))
    assert tr.status == COMPLETE and len(tr.accepted_nodes) == 2
    for slot in (1, 2):
        atts = tr.attempts_for(slot)
        assert [a.attempt.attempt_no for a in atts] == [1, 2, 3]
        assert atts[-1].verdict.ok
    assert validate_tree(out) == []


def test_slot_exhaustion_partial(five):
    out, tr = enhance(five, 3, mock_gw(["x"] * 4, max_retries=3))
    assert tr.status == PARTIAL and tr.accepted_nodes == []
    assert len(tr.attempts_for(1)) == 4
    assert out == five


def test_slot_exhaustion_abort(five):
    out, tr = enhance(five, 2, mock_gw([node(0, 5, "kept for now"), "x", "x", "x", "x"]), on_exhaustion="abort")
    assert tr.status == ABORTED and out == five


def test_transport_errors_retry(five):
    class Flaky:
        calls = 0

        def complete(self, prompt):
            Flaky.calls += 1
            if Flaky.calls < 3:
                raise TransportError("timeout")
            return node(0, 5, "after two timeouts")

    out, tr = enhance(five, 1, Gateway(GenConfig(), Flaky()))
    assert tr.status == COMPLETE
    assert [a.error is not None for a in tr.attempts] == [True, True, False]


def test_monotone_growth_and_strip(five):
    gw = build_gateway(GenConfig(mode="mock"))
    out, tr = enhance(five, 8, gw)
    assert len(out) == len(five) + len(tr.accepted_nodes)
    assert out.nodes[: len(five)] == five.nodes
    for n in tr.accepted_nodes:
        assert out.nodes[n.index] == n
    assert strip_synthetic(out) == five
    assert validate_tree(out) == []


def test_replay_determinism(tmp_path, random_trees):
    trees = random_trees[:5]
    rec = build_gateway(GenConfig(mode="mock"), record_dir=tmp_path)
    a = enhance_many(trees, 6, rec)
    rep = build_gateway(GenConfig(mode="replay"), record_dir=tmp_path)
    b = enhance_many(trees, 6, rep)
    assert [t for t, _ in a] == [t for t, _ in b]
    assert [tr.to_dict() for _, tr in a] == [tr.to_dict() for _, tr in b]


def test_parallel_matches_serial(random_trees):
    trees = random_trees[:8]
    serial = enhance_many(trees, 4, build_gateway(GenConfig(mode="mock")), jobs=1)
    par = enhance_many(trees, 4, build_gateway(GenConfig(mode="mock")), jobs=4)
    assert [t for t, _ in serial] == [t for t, _ in par]

