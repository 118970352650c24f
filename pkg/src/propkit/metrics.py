"""Structural and semantic propagation-quality metrics.

Structural: degree entropy (SE, log base 2), max depth (MD, root depth 0),
max breadth (MB, root level counted). Semantic: SemC (cosine of mean node
embeddings between paired trees), SenC (agreement of majority comment
sentiment), SemH (mean pairwise cosine among comments).
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import httpx
import numpy as np

from .tree import PropagationTree, degree_histogram, level_sizes

SE_LOG_BASE = 2
METRIC_NAMES = ("SE", "MD", "MB", "SemC", "SenC", "SemH")
HISTOGRAM_EDGES = {
    "SE": [i * 0.25 for i in range(17)],
    "MD": list(range(0, 32)),
    "MB": list(range(0, 105, 5)),
    "SemH": [round(-1 + i * 0.1, 10) for i in range(21)],
}
POSITIVE, NEGATIVE = "positive", "negative"


class ProviderError(RuntimeError):
    pass


# providers

_TOKEN = re.compile(r"[^\W_]+")


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def _bucket(token: str, dim: int) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") % dim


class HashedBowEmbedder:
    """Feature-hashed bag of words, L2-normalised. Stable across platforms."""

    def __init__(self, dimension: int = 256):
        self.dimension = dimension

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dimension))
        for row, text in enumerate(texts):
            for tok in tokenize(text):
                out[row, _bucket(tok, self.dimension)] += 1.0
        norms = np.linalg.norm(out, axis=1, keepdims=True)
        np.divide(out, norms, out=out, where=norms > 0)
        return out


class RemoteEmbedder:
    """POST {"texts": [...]} and read back {"vectors": [[...], ...]}."""

    def __init__(self, url: str, batch_size: int = 64, timeout: float = 60.0, client: Optional[httpx.Client] = None):
        self.url = url
        self.batch_size = batch_size
        self.client = client or httpx.Client(timeout=timeout)

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        rows = []
        for i in range(0, len(texts), self.batch_size):
            batch = list(texts[i:i + self.batch_size])
            try:
                resp = self.client.post(self.url, json={"texts": batch})
                resp.raise_for_status()
                vectors = resp.json()["vectors"]
            except (httpx.HTTPError, ValueError, KeyError, TypeError) as exc:
                raise ProviderError(f"embedding endpoint failed: {exc}") from exc
            if len(vectors) != len(batch):
                raise ProviderError(f"expected {len(batch)} vectors, got {len(vectors)}")
            rows.extend(vectors)
        arr = np.asarray(rows, dtype=float).reshape(len(texts), -1) if rows else np.zeros((0, 1))
        if not np.all(np.isfinite(arr)):
            raise ProviderError("embedding endpoint returned non-finite values")
        norms = np.linalg.norm(arr, axis=1, keepdims=True)
        np.divide(arr, norms, out=arr, where=norms > 0)
        return arr


@lru_cache(maxsize=1)
def _lexicon() -> dict[str, str]:
    text = resources.files("propkit").joinpath("data/lexicon.txt").read_text(encoding="utf-8")
    lex = {}
    for line in text.splitlines():
        if line and not line.startswith("#"):
            word, polarity = line.split("\t")
            lex[word] = polarity
    return lex


class LexiconSentiment:
    """Count lexicon hits; more positive than negative words means positive."""

    def label(self, text: str) -> str:
        lex = _lexicon()
        counts = Counter(lex[t] for t in tokenize(text) if t in lex)
        return POSITIVE if counts[POSITIVE] > counts[NEGATIVE] else NEGATIVE

    def labels(self, texts: Sequence[str]) -> list[str]:
        return [self.label(t) for t in texts]


class RemoteSentiment:
    """POST {"texts": [...]} and read back {"labels": ["positive"|"negative", ...]}."""

    def __init__(self, url: str, batch_size: int = 64, timeout: float = 60.0, client: Optional[httpx.Client] = None):
        self.url = url
        self.batch_size = batch_size
        self.client = client or httpx.Client(timeout=timeout)

    def labels(self, texts: Sequence[str]) -> list[str]:
        out = []
        for i in range(0, len(texts), self.batch_size):
            batch = list(texts[i:i + self.batch_size])
            try:
                resp = self.client.post(self.url, json={"texts": batch})
                resp.raise_for_status()
                labels = resp.json()["labels"]
            except (httpx.HTTPError, ValueError, KeyError, TypeError) as exc:
                raise ProviderError(f"sentiment endpoint failed: {exc}") from exc
            if len(labels) != len(batch) or any(lb not in (POSITIVE, NEGATIVE) for lb in labels):
                raise ProviderError(f"bad sentiment labels: {labels!r}")
            out.extend(labels)
        return out


# structural


def structural_entropy(tree: PropagationTree) -> float:
    hist = degree_histogram(tree)
    n = sum(hist.values())
    se = 0.0
    for count in hist.values():
        p = count / n
        se -= p * math.log2(p)
    return max(se, 0.0)


def max_depth(tree: PropagationTree) -> int:
    return len(level_sizes(tree)) - 1


def max_breadth(tree: PropagationTree) -> int:
    return max(level_sizes(tree))


# semantic


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def tree_mean_embedding(tree: PropagationTree, embedder) -> np.ndarray:
    return embedder.embed([n.content for n in tree.nodes]).mean(axis=0)


def pair_semantic_consistency(original: PropagationTree, generated: PropagationTree, embedder) -> float:
    return cosine(tree_mean_embedding(generated, embedder), tree_mean_embedding(original, embedder))


def semantic_consistency(pairs: Sequence[tuple[PropagationTree, PropagationTree]], embedder) -> Optional[float]:
    if not pairs:
        return None
    try:
        return float(np.mean([pair_semantic_consistency(o, g, embedder) for o, g in pairs]))
    except ProviderError:
        return None


def majority_sentiment(tree: PropagationTree, sentiment) -> str:
    texts = [n.content for n in tree.nodes[1:]] or [tree.root.content]
    counts = Counter(sentiment.labels(texts))
    # ties go to negative
    return POSITIVE if counts[POSITIVE] > counts[NEGATIVE] else NEGATIVE


def sentiment_consistency(pairs: Sequence[tuple[PropagationTree, PropagationTree]], sentiment) -> Optional[float]:
    if not pairs:
        return None
    try:
        hits = [majority_sentiment(o, sentiment) == majority_sentiment(g, sentiment) for o, g in pairs]
    except ProviderError:
        return None
    return sum(hits) / len(hits)


def semantic_homogeneity(tree: PropagationTree, embedder) -> Optional[float]:
    comments = [n.content for n in tree.nodes[1:]]
    if len(comments) < 2:
        return None
    vecs = embedder.embed(comments)
    norms = np.linalg.norm(vecs, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    unit = vecs / safe[:, None]
    sims = np.clip(unit @ unit.T, -1.0, 1.0)
    iu = np.triu_indices(len(comments), k=1)
    return float(sims[iu].mean())


# report


@dataclass
class MethodReport:
    method: str
    per_sample: list[dict] = field(default_factory=list)
    macro: dict = field(default_factory=dict)
    histograms: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"method": self.method, "macro": self.macro, "histograms": self.histograms, "per_sample": self.per_sample}


@dataclass
class MetricReport:
    methods: list[MethodReport]
    unmatched: dict[str, list[str]] = field(default_factory=dict)
    provider_errors: list[str] = field(default_factory=list)

    def method(self, name: str) -> MethodReport:
        return next(m for m in self.methods if m.method == name)

    def to_dict(self) -> dict:
        return {
            "se_log_base": SE_LOG_BASE,
            "md_root_depth": 0,
            "methods": [m.to_dict() for m in self.methods],
            "unmatched": self.unmatched,
            "provider_errors": self.provider_errors,
        }


def histogram(values: Sequence[float], edges: Sequence[float]) -> dict:
    """Counts per bin ``[e_i, e_{i+1})``; values beyond the edges land in the end bins."""
    counts = [0] * (len(edges) - 1)
    for v in values:
        i = 0
        while i < len(counts) - 1 and v >= edges[i + 1]:
            i += 1
        counts[i] += 1
    return {"edges": list(edges), "counts": counts}


def _mean(values) -> Optional[float]:
    vals = [v for v in values if v is not None]
    return float(sum(vals) / len(vals)) if vals else None


def _structural_row(tree: PropagationTree, embedder) -> dict:
    return {
        "sample_id": tree.sample_id,
        "SE": structural_entropy(tree),
        "MD": max_depth(tree),
        "MB": max_breadth(tree),
        "SemH": semantic_homogeneity(tree, embedder),
    }


def _method_report(name: str, rows: list[dict], paired: bool) -> MethodReport:
    metrics = METRIC_NAMES if paired else ("SE", "MD", "MB", "SemH")
    macro = {m: _mean(r.get(m) for r in rows) for m in metrics}
    macro["n_samples"] = len(rows)
    hists = {
        m: histogram([r[m] for r in rows if r.get(m) is not None], HISTOGRAM_EDGES[m])
        for m in HISTOGRAM_EDGES
    }
    return MethodReport(name, rows, macro, hists)


def report(
    original: Sequence[PropagationTree],
    generated_by_method: dict[str, Sequence[PropagationTree]],
    embedder=None,
    sentiment=None,
) -> MetricReport:
    embedder = embedder or HashedBowEmbedder()
    sentiment = sentiment or LexiconSentiment()
    errors: list[str] = []

    def safe_row(t):
        try:
            return _structural_row(t, embedder)
        except ProviderError as exc:
            errors.append(f"{t.sample_id}: {exc}")
            row = _structural_row(t, _NullEmbedder())
            row["SemH"] = None
            return row

    methods = [_method_report("original", [safe_row(t) for t in original], paired=False)]
    by_id = {t.sample_id: t for t in original}
    unmatched: dict[str, list[str]] = {}
    for name, trees in generated_by_method.items():
        rows = []
        missing = []
        for g in trees:
            row = safe_row(g)
            o = by_id.get(g.sample_id)
            if o is None:
                missing.append(g.sample_id)
                row["SemC"] = row["SenC"] = None
            else:
                try:
                    row["SemC"] = pair_semantic_consistency(o, g, embedder)
                except ProviderError as exc:
                    errors.append(f"{g.sample_id}: {exc}")
                    row["SemC"] = None
                try:
                    row["SenC"] = float(majority_sentiment(o, sentiment) == majority_sentiment(g, sentiment))
                except ProviderError as exc:
                    errors.append(f"{g.sample_id}: {exc}")
                    row["SenC"] = None
            rows.append(row)
        if missing:
            unmatched[name] = missing
        methods.append(_method_report(name, rows, paired=True))
    return MetricReport(methods, unmatched, errors)


class _NullEmbedder:
    def embed(self, texts):
        return np.zeros((len(texts), 1))


MACRO_COLUMNS = ("method", "n_samples", "SE", "MD", "MB", "SemC", "SenC", "SemH")
SAMPLE_COLUMNS = ("method", "sample_id", "SE", "MD", "MB", "SemH", "SemC", "SenC")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def write_report(rep: MetricReport, out_dir: str | Path, stem: str = "prop_metrics") -> list[Path]:
    """Write ``<stem>.json``, ``<stem>_macro.csv`` and ``<stem>_samples.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / f"{stem}.json", out / f"{stem}_macro.csv", out / f"{stem}_samples.csv"]
    paths[0].write_text(json.dumps(rep.to_dict(), ensure_ascii=False, indent=1) + "\n", encoding="utf-8")
    with open(paths[1], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MACRO_COLUMNS)
        for m in rep.methods:
            w.writerow([m.method] + [_fmt(m.macro.get(c)) for c in MACRO_COLUMNS[1:]])
    with open(paths[2], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SAMPLE_COLUMNS)
        for m in rep.methods:
            for r in m.per_sample:
                w.writerow([m.method] + [_fmt(r.get(c)) for c in SAMPLE_COLUMNS[1:]])
    return paths
