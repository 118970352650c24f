"""Parse offline cascade dumps into canonical trees and split them.

Supported layouts:

``pheme_dir``
    The PHEME release: ``<event>/<rumours|non-rumours>/<thread>/`` with
    ``source-tweets/<id>.json`` and ``reactions/<id>.json``. Reply edges come
    from ``in_reply_to_status_id``. Rumours map to fake news (1), non-rumours to
    true news (0); a thread-level ``annotation.json`` with ``misinformation`` or
    ``true`` flags overrides the directory.

``weibo_json``
    A directory of ``<eid>.json`` files, each a list of posts with ``mid``,
    ``parent``, ``text``, ``t`` and ``uid``; the post whose ``parent`` is null is
    the source. Labels come from an optional ``Weibo.txt`` (``eid:<id> label:<0|1>``)
    or a ``label`` key when the file is an object ``{"label":..,"posts":[..]}``.

``canonical_jsonl``
    The package's own format, one tree per line.
"""

from __future__ import annotations

import heapq
import json
import logging
import random
import re
from dataclasses import dataclass, field, replace
from datetime import datetime
from pathlib import Path
from typing import Optional

from .tree import (
    FAKE_NEWS,
    TRUE_NEWS,
    PropagationTree,
    PropNode,
    read_jsonl,
    validate_tree,
)

log = logging.getLogger(__name__)

SOURCE_FORMATS = ("pheme_dir", "weibo_json", "canonical_jsonl")
DEFAULT_RATIO = (0.7, 0.1, 0.2)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    source_format: str
    path: str = ""
    split_seed: int = 13
    split_ratio: tuple[float, float, float] = DEFAULT_RATIO

    def __post_init__(self):
        if self.source_format not in SOURCE_FORMATS:
            raise ConfigError(f"unknown source format {self.source_format!r}")
        if len(self.split_ratio) != 3 or any(r <= 0 for r in self.split_ratio):
            raise ConfigError(f"split ratio must be three positive fractions, got {self.split_ratio}")
        if abs(sum(self.split_ratio) - 1.0) > 1e-9:
            raise ConfigError(f"split ratio must sum to 1, got {sum(self.split_ratio)}")


@dataclass
class IngestReport:
    trees: int = 0
    comments: int = 0
    true_news: int = 0
    fake_news: int = 0
    dropped: list[dict] = field(default_factory=list)
    repaired: list[dict] = field(default_factory=list)

    def drop(self, sample_id: str, record: str, reason: str) -> None:
        self.dropped.append({"sample_id": sample_id, "record": record, "reason": reason})

    def to_dict(self) -> dict:
        return {
            "trees": self.trees,
            "comments": self.comments,
            "true_news": self.true_news,
            "fake_news": self.fake_news,
            "dropped": self.dropped,
            "repaired": self.repaired,
        }


@dataclass
class RawPost:
    post_id: str
    parent_id: Optional[str]
    content: str
    timestamp: Optional[int]
    author_id: Optional[str] = None


def build_tree(
    sample_id: str,
    label: Optional[int],
    source: RawPost,
    replies: list[RawPost],
    report: IngestReport,
) -> Optional[PropagationTree]:
    """Assemble a canonical tree from raw posts.

    Replies whose parent chain does not reach the source are dropped as
    orphans. Indices follow arrival order (timestamp, then post id), with
    parents always before children.
    """
    if not source.content.strip():
        report.drop(sample_id, source.post_id, "empty source content")
        return None

    posts = {source.post_id: source}
    for r in replies:
        if r.post_id in posts:
            report.drop(sample_id, r.post_id, "duplicate post id")
            continue
        if not r.content.strip():
            report.drop(sample_id, r.post_id, "empty content")
            continue
        posts[r.post_id] = r

    kids: dict[str, list[str]] = {pid: [] for pid in posts}
    for r in posts.values():
        if r is source:
            continue
        if r.parent_id == r.post_id:
            report.drop(sample_id, r.post_id, "self reply")
        elif r.parent_id in posts:
            kids[r.parent_id].append(r.post_id)

    def key(pid: str) -> tuple:
        ts = posts[pid].timestamp
        return (ts is None, ts or 0, _id_key(pid))

    order: list[str] = []
    heap = [(key(source.post_id), source.post_id)]
    while heap:
        _, pid = heapq.heappop(heap)
        order.append(pid)
        for c in kids[pid]:
            heapq.heappush(heap, (key(c), c))

    reached = set(order)
    for r in posts.values():
        if r.post_id not in reached and r.parent_id != r.post_id:
            report.drop(sample_id, r.post_id, "orphan node")

    index = {pid: i for i, pid in enumerate(order)}
    nodes = []
    for pid in order:
        p = posts[pid]
        parent = None if p is source else index[p.parent_id]
        nodes.append(PropNode(index[pid], parent, p.content, p.timestamp, author_id=p.author_id))
    tree = PropagationTree(sample_id, label, tuple(nodes))

    for v in validate_tree(tree):
        if v.kind == "timestamp_inversion":
            report.repaired.append({"sample_id": sample_id, **v.to_dict()})
    if report.repaired and report.repaired[-1]["sample_id"] == sample_id:
        log.warning("%s: clamping timestamps that precede their parent", sample_id)
        tree = clamp_timestamps(tree)
    return tree


def clamp_timestamps(tree: PropagationTree) -> PropagationTree:
    nodes = list(tree.nodes)
    for i, n in enumerate(nodes):
        if n.parent_index is None or n.timestamp is None:
            continue
        pt = nodes[n.parent_index].timestamp
        if pt is not None and n.timestamp < pt:
            nodes[i] = replace(n, timestamp=pt)
    return tree.with_nodes(nodes)


def _id_key(pid: str) -> tuple:
    # numeric ids compare numerically, others lexically
    return (0, int(pid), "") if pid.isdigit() else (1, 0, pid)


# PHEME

_TWITTER_TIME = "%a %b %d %H:%M:%S %z %Y"


def _twitter_ts(value) -> Optional[int]:
    if value is None:
        return None
    if isinstance(value, (int, float)):
        return int(value)
    try:
        return int(datetime.strptime(value, _TWITTER_TIME).timestamp())
    except ValueError:
        return None


def _tweet(d: dict) -> RawPost:
    parent = d.get("in_reply_to_status_id_str") or d.get("in_reply_to_status_id")
    user = d.get("user") or {}
    author = user.get("id_str") or user.get("id")
    return RawPost(
        post_id=str(d.get("id_str") or d["id"]),
        parent_id=None if parent is None else str(parent),
        content=d.get("full_text") or d.get("text") or "",
        timestamp=_twitter_ts(d.get("created_at")),
        author_id=None if author is None else str(author),
    )


def _pheme_label(thread: Path) -> Optional[int]:
    ann = thread / "annotation.json"
    if ann.exists():
        try:
            a = json.loads(ann.read_text(encoding="utf-8"))
        except json.JSONDecodeError:
            a = {}
        if str(a.get("misinformation")) == "1":
            return FAKE_NEWS
        if str(a.get("true")) == "1":
            return TRUE_NEWS
    kind = thread.parent.name
    if kind == "rumours":
        return FAKE_NEWS
    if kind == "non-rumours":
        return TRUE_NEWS
    return None


def _pheme_threads(root: Path) -> list[Path]:
    return sorted(p.parent for p in root.rglob("source-tweets") if p.is_dir())


def _load_json(path: Path, sample_id: str, report: IngestReport):
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        report.drop(sample_id, path.name, f"unparseable record: {exc.__class__.__name__}")
        return None


def ingest_pheme(root: Path, report: IngestReport) -> list[PropagationTree]:
    trees = []
    for thread in _pheme_threads(root):
        sample_id = thread.name
        sources = sorted((thread / "source-tweets").glob("*.json"))
        src_dicts = [d for d in (_load_json(p, sample_id, report) for p in sources) if d]
        if len(src_dicts) != 1:
            report.drop(sample_id, "source-tweets", f"expected one source tweet, found {len(src_dicts)}")
            continue
        try:
            source = _tweet(src_dicts[0])
        except (KeyError, TypeError):
            report.drop(sample_id, "source-tweets", "unparseable record: source lacks id")
            continue
        source.parent_id = None
        replies = []
        for p in sorted((thread / "reactions").glob("*.json")):
            d = _load_json(p, sample_id, report)
            if d is None:
                continue
            try:
                replies.append(_tweet(d))
            except (KeyError, TypeError):
                report.drop(sample_id, p.name, "unparseable record: reply lacks id")
        tree = build_tree(sample_id, _pheme_label(thread), source, replies, report)
        if tree is not None:
            trees.append(tree)
    return trees


# Weibo

_WEIBO_LABEL = re.compile(r"eid:(\S+)\s+label:(\d)")


def _weibo_labels(root: Path) -> dict[str, int]:
    labels = {}
    for name in ("Weibo.txt", "labels.txt"):
        f = root / name
        if f.exists():
            for line in f.read_text(encoding="utf-8").splitlines():
                m = _WEIBO_LABEL.search(line)
                if m:
                    labels[m.group(1)] = int(m.group(2))
    return labels


def _weibo_post(d: dict) -> RawPost:
    parent = d.get("parent")
    t = d.get("t")
    uid = d.get("uid")
    return RawPost(
        post_id=str(d["mid"]),
        parent_id=None if parent in (None, "") else str(parent),
        content=d.get("text") or d.get("original_text") or "",
        timestamp=None if t is None else int(t),
        author_id=None if uid is None else str(uid),
    )


def ingest_weibo(root: Path, report: IngestReport) -> list[PropagationTree]:
    labels = _weibo_labels(root)
    trees = []
    for f in sorted(root.glob("*.json")):
        sample_id = f.stem
        data = _load_json(f, sample_id, report)
        if data is None:
            continue
        label = labels.get(sample_id)
        if isinstance(data, dict):
            label = data.get("label", label)
            data = data.get("posts", [])
        posts = []
        for i, d in enumerate(data):
            try:
                posts.append(_weibo_post(d))
            except (KeyError, TypeError, ValueError):
                report.drop(sample_id, f"post[{i}]", "unparseable record")
        roots = [p for p in posts if p.parent_id is None]
        if len(roots) != 1:
            report.drop(sample_id, f.name, f"expected one source post, found {len(roots)}")
            continue
        replies = [p for p in posts if p is not roots[0]]
        tree = build_tree(sample_id, None if label is None else int(label), roots[0], replies, report)
        if tree is not None:
            trees.append(tree)
    return trees


def ingest_canonical(path: Path, report: IngestReport) -> list[PropagationTree]:
    trees = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                tree = PropagationTree.from_dict(json.loads(line))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                report.drop(f"line {lineno}", f"line {lineno}", f"unparseable record: {exc.__class__.__name__}")
                continue
            violations = [v for v in validate_tree(tree) if v.kind != "timestamp_inversion"]
            if violations:
                report.drop(tree.sample_id, "tree", "invalid tree: " + violations[0].kind)
                continue
            inversions = [v for v in validate_tree(tree) if v.kind == "timestamp_inversion"]
            if inversions:
                report.repaired.extend({"sample_id": tree.sample_id, **v.to_dict()} for v in inversions)
                tree = clamp_timestamps(tree)
            trees.append(tree)
    return trees


def ingest(manifest: DatasetManifest) -> tuple[list[PropagationTree], IngestReport]:
    path = Path(manifest.path)
    if not path.exists():
        raise FileNotFoundError(f"input path not found: {path}")
    report = IngestReport()
    if manifest.source_format == "pheme_dir":
        trees = ingest_pheme(path, report)
    elif manifest.source_format == "weibo_json":
        trees = ingest_weibo(path, report)
    else:
        trees = ingest_canonical(path, report)
    report.trees = len(trees)
    report.comments = sum(len(t) - 1 for t in trees)
    report.true_news = sum(t.label == TRUE_NEWS for t in trees)
    report.fake_news = sum(t.label == FAKE_NEWS for t in trees)
    return trees, report


def load_trees(path: str | Path) -> list[PropagationTree]:
    return read_jsonl(path)


def split(
    trees: list[PropagationTree],
    ratio: tuple[float, float, float] = DEFAULT_RATIO,
    seed: int = 13,
) -> dict[str, list[PropagationTree]]:
    """Seeded shuffle of sample ids into train/val/test.

    Val and test sizes are ``floor(ratio * N)``; the flooring remainder goes
    to train.
    """
    if len(trees) < 10:
        raise ConfigError(f"need at least 10 trees to split, got {len(trees)}")
    if len(ratio) != 3 or any(r <= 0 for r in ratio) or abs(sum(ratio) - 1.0) > 1e-9:
        raise ConfigError(f"bad split ratio {ratio}")
    ids = sorted(t.sample_id for t in trees)
    if len(set(ids)) != len(ids):
        raise ConfigError("duplicate sample_id in input")
    random.Random(seed).shuffle(ids)
    n = len(ids)
    # round before flooring so 0.1*10 lands on 1, not 0.999...
    n_val = int(round(ratio[1] * n, 9) // 1)
    n_test = int(round(ratio[2] * n, 9) // 1)
    n_train = n - n_val - n_test
    by_id = {t.sample_id: t for t in trees}
    parts = {
        "train": ids[:n_train],
        "val": ids[n_train:n_train + n_val],
        "test": ids[n_train + n_val:],
    }
    return {k: [by_id[i] for i in v] for k, v in parts.items()}
