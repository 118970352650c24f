import csv
import json
import math
import random
from collections import Counter

import httpx
import numpy as np
import pytest

from propkit.metrics import (
    HashedBowEmbedder,
    LexiconSentiment,
    ProviderError,
    RemoteEmbedder,
    RemoteSentiment,
    cosine,
    histogram,
    majority_sentiment,
    max_breadth,
    max_depth,
    report,
    semantic_consistency,
    semantic_homogeneity,
    sentiment_consistency,
    structural_entropy,
    write_report,
)
from propkit.synth import random_tree
from propkit.tree import PropagationTree, PropNode, make_tree


# naive oracles


def naive_se(tree):
    deg = [0] * len(tree.nodes)
    for n in tree.nodes:
        if n.parent_index is not None:
            deg[n.index] += 1
            deg[n.parent_index] += 1
    counts = Counter(deg)
    return -sum(c / len(deg) * math.log2(c / len(deg)) for c in counts.values())


def naive_levels(tree):
    depth = {}
    for n in tree.nodes:
        d, cur = 0, n
        while cur.parent_index is not None:
            cur = tree.nodes[cur.parent_index]
            d += 1
        depth[n.index] = d
    return Counter(depth.values())


def naive_cos(a, b):
    dot = sum(x * y for x, y in zip(a, b))
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(y * y for y in b))
    return 0.0 if na == 0 or nb == 0 else dot / (na * nb)


def naive_semh(tree, emb):
    vecs = [list(v) for v in emb.embed([n.content for n in tree.nodes[1:]])]
    total, pairs = 0.0, 0
    for i in range(len(vecs)):
        for j in range(len(vecs)):
            if i < j:
                total += naive_cos(vecs[i], vecs[j])
                pairs += 1
    return total / pairs


def naive_mean(vectors):
    dim = len(vectors[0])
    return [sum(v[d] for v in vectors) / len(vectors) for d in range(dim)]


def naive_semc(orig, gen, emb):
    mo = naive_mean([list(v) for v in emb.embed([n.content for n in orig.nodes])])
    mg = naive_mean([list(v) for v in emb.embed([n.content for n in gen.nodes])])
    return naive_cos(mo, mg)


@pytest.fixture(scope="module")
def emb():
    return HashedBowEmbedder()


# structure


def test_star_entropy(star4):
    assert structural_entropy(star4) == pytest.approx(0.8113, abs=1e-4)
    oracle = -(0.75 * math.log2(0.75) + 0.25 * math.log2(0.25))
    assert abs(structural_entropy(star4) - oracle) < 1e-9


@pytest.mark.parametrize("parents", [[None], [None, 0]])
def test_entropy_zero_for_uniform_degree(parents):
    assert structural_entropy(make_tree("u", parents)) == 0.0


def test_chain_entropy(chain3):
    # degrees 1, 2, 1
    assert structural_entropy(chain3) == pytest.approx(-(2 / 3 * math.log2(2 / 3) + 1 / 3 * math.log2(1 / 3)))


def test_structural_against_oracles():
    rng = random.Random(21)
    for i in range(200):
        t = random_tree(rng, rng.randint(1, 50))
        assert abs(structural_entropy(t) - naive_se(t)) < 1e-12
        levels = naive_levels(t)
        assert max_depth(t) == max(levels)
        assert max_breadth(t) == max(levels.values())


def test_depth_breadth_small(small_tree, star4, chain3):
    assert (max_depth(small_tree), max_breadth(small_tree)) == (2, 2)
    assert (max_depth(star4), max_breadth(star4)) == (1, 3)
    assert (max_depth(chain3), max_breadth(chain3)) == (2, 1)
    root = make_tree("r", [None])
    assert (max_depth(root), max_breadth(root), structural_entropy(root)) == (0, 1, 0.0)


def test_structural_invariant_to_sibling_order():
    a = PropagationTree("a", None, (PropNode(0, None, "n"), PropNode(1, 0, "x y"), PropNode(2, 0, "z w"), PropNode(3, 2, "q r")))
    b = PropagationTree("a", None, (PropNode(0, None, "n"), PropNode(1, 0, "z w"), PropNode(2, 1, "q r"), PropNode(3, 0, "x y")))
    for f in (structural_entropy, max_depth, max_breadth):
        assert f(a) == f(b)
    e = HashedBowEmbedder()
    assert semantic_homogeneity(a, e) == pytest.approx(semantic_homogeneity(b, e), abs=1e-12)


# semantic


def test_embedder_unit_norm_and_deterministic(emb):
    v = emb.embed(["the bridge is closed", "", "the bridge is closed"])
    assert v.shape == (3, 256)
    assert np.linalg.norm(v[0]) == pytest.approx(1.0)
    assert np.all(v[1] == 0)
    assert np.array_equal(v[0], v[2])


def test_cosine_edge_cases():
    assert cosine(np.zeros(3), np.ones(3)) == 0.0
    assert cosine(np.ones(3), 2 * np.ones(3)) == pytest.approx(1.0)
    assert cosine(np.array([1.0, 0]), np.array([-1.0, 0])) == pytest.approx(-1.0)


def test_semh_matches_double_sum(emb, random_trees):
    checked = 0
    for t in random_trees[:40]:
        if len(t) >= 3:
            assert abs(semantic_homogeneity(t, emb) - naive_semh(t, emb)) < 1e-9
            checked += 1
    assert checked > 20


def test_semh_undefined_below_two_comments(emb):
    assert semantic_homogeneity(make_tree("r", [None]), emb) is None
    assert semantic_homogeneity(make_tree("r", [None, 0]), emb) is None


def test_semh_identical_comments(emb):
    t = make_tree("s", [None, 0, 0, 0], ["news", "same words here", "same words here", "same words here"])
    assert semantic_homogeneity(t, emb) == pytest.approx(1.0)


def test_semc_matches_oracle(emb, random_trees):
    for o, g in zip(random_trees[:30], random_trees[30:60]):
        assert abs(semantic_consistency([(o, g)], emb) - naive_semc(o, g, emb)) < 1e-9


def test_semc_identity_and_symmetry(emb, random_trees):
    for t in random_trees[:10]:
        assert semantic_consistency([(t, t)], emb) == pytest.approx(1.0, abs=1e-12)
    a, b = random_trees[0], random_trees[1]
    assert semantic_consistency([(a, b)], emb) == pytest.approx(semantic_consistency([(b, a)], emb))


# sentiment


def test_lexicon_labels():
    s = LexiconSentiment()
    assert s.label("this is great and wonderful news") == "positive"
    assert s.label("terrible awful lie") == "negative"
    assert s.label("neutral words only") == "negative"


class Fixed:
    def __init__(self, mapping):
        self.mapping = mapping

    def labels(self, texts):
        return [self.mapping[t] for t in texts]


def test_majority_tie_goes_negative():
    t = make_tree("m", [None, 0, 0], ["n", "a", "b"])
    assert majority_sentiment(t, Fixed({"a": "positive", "b": "negative"})) == "negative"
    assert majority_sentiment(t, Fixed({"a": "positive", "b": "positive"})) == "positive"


def test_senc_fraction():
    s = Fixed({"p": "positive", "q": "negative", "n": "negative"})
    pos = make_tree("1", [None, 0], ["n", "p"])
    neg = make_tree("1", [None, 0], ["n", "q"])
    assert sentiment_consistency([(pos, pos), (pos, neg), (neg, neg), (neg, pos)], s) == 0.5
    assert sentiment_consistency([], s) is None


# remote providers


def test_remote_embedder_batches():
    calls = []

    def handler(request):
        texts = json.loads(request.content)["texts"]
        calls.append(len(texts))
        return httpx.Response(200, json={"vectors": [[len(t), 1.0] for t in texts]})

    e = RemoteEmbedder("http://emb.test", batch_size=2, client=httpx.Client(transport=httpx.MockTransport(handler)))
    v = e.embed(["a", "bb", "ccc"])
    assert calls == [2, 1]
    # vectors come back L2-normalised
    expected = np.array([[1, 1], [2, 1], [3, 1]], dtype=float)
    expected /= np.linalg.norm(expected, axis=1, keepdims=True)
    assert np.allclose(v, expected)


def test_remote_sentiment_and_errors():
    ok = RemoteSentiment(
        "http://s.test",
        client=httpx.Client(transport=httpx.MockTransport(
            lambda r: httpx.Response(200, json={"labels": ["positive"] * len(json.loads(r.content)["texts"])}))),
    )
    assert ok.labels(["x", "y"]) == ["positive", "positive"]
    bad = RemoteSentiment("http://s.test", client=httpx.Client(transport=httpx.MockTransport(lambda r: httpx.Response(503))))
    with pytest.raises(ProviderError):
        bad.labels(["x"])
    wrong = RemoteSentiment(
        "http://s.test",
        client=httpx.Client(transport=httpx.MockTransport(lambda r: httpx.Response(200, json={"labels": ["meh"]}))),
    )
    with pytest.raises(ProviderError):
        wrong.labels(["x"])


def test_provider_error_is_recorded_not_fatal(random_trees):
    class Broken:
        def embed(self, texts):
            raise ProviderError("down")

    rep = report(random_trees[:3], {"m": random_trees[:3]}, embedder=Broken())
    assert len(rep.provider_errors) > 0
    m = rep.method("m")
    assert m.macro["SemC"] is None and m.macro["SE"] is not None


# report


def test_macro_is_mean_of_samples(emb, random_trees):
    orig = random_trees[:20]
    gen = random_trees[20:40]
    gen = [PropagationTree(o.sample_id, o.label, g.nodes) for o, g in zip(orig, gen)]
    rep = report(orig, {"m": gen}, embedder=emb)
    m = rep.method("m")
    for key in ("SE", "MD", "MB", "SemC", "SenC", "SemH"):
        vals = [r[key] for r in m.per_sample if r[key] is not None]
        assert m.macro[key] == pytest.approx(sum(vals) / len(vals), abs=1e-12)
    assert m.macro["n_samples"] == 20
    assert "SemC" not in rep.method("original").macro


def test_report_invariant_to_input_order(emb, random_trees):
    orig = random_trees[:15]
    a = report(orig, {"m": orig}, embedder=emb)
    b = report(list(reversed(orig)), {"m": list(reversed(orig))}, embedder=emb)
    for name in ("original", "m"):
        for k, v in a.method(name).macro.items():
            assert b.method(name).macro[k] == pytest.approx(v, abs=1e-12)


def test_unmatched_reported(random_trees):
    stray = PropagationTree("nobody", 0, random_trees[0].nodes)
    rep = report(random_trees[:2], {"m": [stray]})
    assert rep.unmatched == {"m": ["nobody"]}


def test_histogram_bins():
    h = histogram([0.0, 0.2, 0.25, 10.0], [0, 0.25, 0.5])
    assert h["counts"] == [2, 2]


def test_csv_columns(tmp_path, random_trees):
    paths = write_report(report(random_trees[:3], {"m": random_trees[:3]}), tmp_path)
    with open(paths[1]) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["method", "n_samples", "SE", "MD", "MB", "SemC", "SenC", "SemH"]
    assert [r[0] for r in rows[1:]] == ["original", "m"]
    assert rows[1][5] == "" and rows[2][5] == "1.000000"


# frozen fixture


def _frozen_inputs(pheme_dir):
    from propkit.enhance import enhance_many
    from propkit.gateway import GenConfig, build_gateway
    from propkit.ingest import DatasetManifest, ingest

    trees, _ = ingest(DatasetManifest("pheme20", "pheme_dir", str(pheme_dir)))
    grown = [t for t, _ in enhance_many(trees, 3, build_gateway(GenConfig(mode="mock")))]
    return trees, grown


def test_frozen_report(pheme_dir, fixtures_dir, tmp_path):
    trees, grown = _frozen_inputs(pheme_dir)
    paths = write_report(report(trees, {"mock": grown}), tmp_path, stem="frozen")
    frozen = fixtures_dir / "frozen_report"
    for p in paths:
        assert p.read_bytes() == (frozen / p.name).read_bytes(), p.name


def test_frozen_report_hand_checks(pheme_dir, fixtures_dir):
    # spot check three rows of the frozen file against independent computation
    trees, grown = _frozen_inputs(pheme_dir)
    with open(fixtures_dir / "frozen_report" / "frozen_samples.csv") as fh:
        rows = {(r["method"], r["sample_id"]): r for r in csv.DictReader(fh)}
    emb = HashedBowEmbedder()
    for t in (trees[0], trees[7], trees[19]):
        r = rows[("original", t.sample_id)]
        levels = naive_levels(t)
        assert float(r["SE"]) == pytest.approx(naive_se(t), abs=1e-6)
        assert int(r["MD"]) == max(levels) and int(r["MB"]) == max(levels.values())
        assert float(r["SemH"]) == pytest.approx(naive_semh(t, emb), abs=1e-6)
    g = grown[7]
    r = rows[("mock", g.sample_id)]
    assert float(r["SemC"]) == pytest.approx(naive_semc(trees[7], g, emb), abs=1e-6)
