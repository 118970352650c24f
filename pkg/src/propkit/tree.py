"""Propagation tree data model and structural primitives.

A tree is an indexed list of nodes where index 0 is the news post and every
other node points at an earlier index. Everything else in the package
(sampling, generation, metrics, detection) consumes this representation.
"""

from __future__ import annotations

import heapq
import json
from collections import Counter, deque
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Optional


class Origin(str, Enum):
    REAL = "real"
    SYNTHETIC = "synthetic"


TRUE_NEWS = 0
FAKE_NEWS = 1


@dataclass(frozen=True)
class PropNode:
    index: int
    parent_index: Optional[int]
    content: str
    timestamp: Optional[int] = None
    origin: Origin = Origin.REAL
    author_id: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "parent_index": self.parent_index,
            "content": self.content,
            "timestamp": self.timestamp,
            "origin": self.origin.value,
            "author_id": self.author_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PropNode":
        return cls(
            index=int(d["index"]),
            parent_index=None if d.get("parent_index") is None else int(d["parent_index"]),
            content=d.get("content", ""),
            timestamp=None if d.get("timestamp") is None else int(d["timestamp"]),
            origin=Origin(d.get("origin") or "real"),
            author_id=d.get("author_id"),
        )


@dataclass(frozen=True)
class PropagationTree:
    sample_id: str
    label: Optional[int]
    nodes: tuple[PropNode, ...] = field(default_factory=tuple)

    def __post_init__(self):
        # accept any iterable but store an immutable tuple
        if not isinstance(self.nodes, tuple):
            object.__setattr__(self, "nodes", tuple(self.nodes))

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def root(self) -> PropNode:
        return self.nodes[0]

    def node(self, index: int) -> PropNode:
        if not 0 <= index < len(self.nodes):
            raise IndexError(f"node index {index} out of range for tree of size {len(self.nodes)}")
        return self.nodes[index]

    def with_nodes(self, nodes: Iterable[PropNode]) -> "PropagationTree":
        return replace(self, nodes=tuple(nodes))

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "label": self.label,
            "nodes": [n.to_dict() for n in self.nodes],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PropagationTree":
        label = d.get("label")
        nodes = sorted((PropNode.from_dict(n) for n in d.get("nodes", [])), key=lambda n: n.index)
        return cls(str(d["sample_id"]), None if label is None else int(label), tuple(nodes))


@dataclass(frozen=True)
class Violation:
    kind: str
    index: Optional[int]
    detail: str = ""

    def to_dict(self) -> dict:
        return {"kind": self.kind, "index": self.index, "detail": self.detail}


def validate_tree(tree: PropagationTree) -> list[Violation]:
    """Return every invariant violation found in ``tree``; empty means valid."""
    out: list[Violation] = []
    nodes = tree.nodes
    if not nodes:
        return [Violation("empty_tree", None, "tree has no nodes")]
    if tree.label not in (None, TRUE_NEWS, FAKE_NEWS):
        out.append(Violation("bad_label", None, f"label {tree.label!r}"))

    seen: set[int] = set()
    for pos, n in enumerate(nodes):
        if n.index in seen:
            out.append(Violation("duplicate_index", n.index))
        seen.add(n.index)
        if n.index != pos:
            out.append(Violation("index_gap", n.index, f"expected index {pos}"))

    for n in nodes:
        if n.index == 0:
            if n.parent_index is not None:
                out.append(Violation("root_has_parent", 0))
        elif n.parent_index is None:
            out.append(Violation("extra_root", n.index))
        elif n.parent_index == n.index:
            out.append(Violation("self_loop", n.index))
        elif n.parent_index > n.index:
            out.append(Violation("forward_parent", n.index, f"parent {n.parent_index}"))
        elif n.parent_index < 0 or n.parent_index not in seen:
            out.append(Violation("missing_parent", n.index, f"parent {n.parent_index}"))
        if not n.content or not n.content.strip():
            out.append(Violation("empty_content", n.index))

    by_index = {n.index: n for n in nodes}
    for n in nodes:
        if n.parent_index is None or n.timestamp is None:
            continue
        parent = by_index.get(n.parent_index)
        if parent is not None and parent.timestamp is not None and n.timestamp < parent.timestamp:
            out.append(
                Violation("timestamp_inversion", n.index, f"{n.timestamp} < parent {parent.timestamp}")
            )
    return out


def _check_index(tree: PropagationTree, index: int) -> None:
    if not 0 <= index < len(tree.nodes):
        raise IndexError(f"node index {index} out of range for tree of size {len(tree.nodes)}")


def _time_key(node: PropNode) -> tuple:
    # nodes without a timestamp sort after timestamped ones
    return (node.timestamp is None, node.timestamp or 0, node.index)


def children_map(tree: PropagationTree) -> dict[int, list[int]]:
    """Child index lists for every node, ordered by (timestamp, index)."""
    kids: dict[int, list[PropNode]] = {n.index: [] for n in tree.nodes}
    for n in tree.nodes:
        if n.parent_index is not None:
            kids[n.parent_index].append(n)
    return {i: [c.index for c in sorted(cs, key=_time_key)] for i, cs in kids.items()}


def children_of(tree: PropagationTree, index: int) -> list[int]:
    _check_index(tree, index)
    return children_map(tree)[index]


def depths(tree: PropagationTree) -> list[int]:
    out = [0] * len(tree.nodes)
    for n in tree.nodes:  # parents precede children
        if n.parent_index is not None:
            out[n.index] = out[n.parent_index] + 1
    return out


def depth_of(tree: PropagationTree, index: int) -> int:
    _check_index(tree, index)
    d = 0
    node = tree.nodes[index]
    while node.parent_index is not None:
        node = tree.nodes[node.parent_index]
        d += 1
    return d


def degrees(tree: PropagationTree) -> list[int]:
    """Undirected degree of each node."""
    deg = [0] * len(tree.nodes)
    for n in tree.nodes:
        if n.parent_index is not None:
            deg[n.index] += 1
            deg[n.parent_index] += 1
    return deg


def degree_histogram(tree: PropagationTree) -> dict[int, int]:
    return dict(sorted(Counter(degrees(tree)).items()))


def level_sizes(tree: PropagationTree) -> list[int]:
    """Number of nodes at each depth, root level first."""
    counts = Counter(depths(tree))
    return [counts[d] for d in range(max(counts) + 1)] if counts else []


def arrival_order(tree: PropagationTree) -> list[int]:
    """Node indices in time order, never emitting a child before its parent.

    Greedy frontier expansion keyed by (timestamp, index). When timestamps are
    monotone along edges this is exactly the global (timestamp, index) sort.
    """
    if not tree.nodes:
        return []
    kids = children_map(tree)
    order: list[int] = []
    heap = [(_time_key(tree.nodes[0]), 0)]
    while heap:
        _, i = heapq.heappop(heap)
        order.append(i)
        for c in kids[i]:
            heapq.heappush(heap, (_time_key(tree.nodes[c]), c))
    return order


def bfs_order(tree: PropagationTree) -> list[int]:
    kids = children_map(tree)
    order, queue = [], deque([0])
    while queue:
        i = queue.popleft()
        order.append(i)
        queue.extend(kids[i])
    return order


def dfs_order(tree: PropagationTree) -> list[int]:
    kids = children_map(tree)
    order, stack = [], [0]
    while stack:
        i = stack.pop()
        order.append(i)
        stack.extend(reversed(kids[i]))
    return order


def induced_subtree(tree: PropagationTree, keep: Iterable[int]) -> PropagationTree:
    """Keep the given indices (closed under ancestors) and re-compact to 0..M-1."""
    kept = sorted(set(keep))
    remap = {old: new for new, old in enumerate(kept)}
    nodes = []
    for old in kept:
        n = tree.nodes[old]
        parent = None if n.parent_index is None else remap[n.parent_index]
        nodes.append(replace(n, index=remap[old], parent_index=parent))
    return tree.with_nodes(nodes)


def strip_synthetic(tree: PropagationTree) -> PropagationTree:
    real = [n.index for n in tree.nodes if n.origin is Origin.REAL]
    return induced_subtree(tree, real)


# canonical JSONL


def dumps_tree(tree: PropagationTree) -> str:
    return json.dumps(tree.to_dict(), ensure_ascii=False, separators=(", ", ": "))


def write_jsonl(trees: Iterable[PropagationTree], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for t in trees:
            fh.write(dumps_tree(t) + "\n")


def iter_jsonl(path: str | Path) -> Iterator[PropagationTree]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield PropagationTree.from_dict(json.loads(line))


def read_jsonl(path: str | Path) -> list[PropagationTree]:
    return list(iter_jsonl(path))


def make_tree(
    sample_id: str,
    parents: list[Optional[int]],
    contents: Optional[list[str]] = None,
    label: Optional[int] = None,
    timestamps: Optional[list[Optional[int]]] = None,
) -> PropagationTree:
    """Convenience constructor from a parent array (``parents[0]`` is None)."""
    n = len(parents)
    contents = contents or [f"node {i} text" if i else "news post" for i in range(n)]
    timestamps = timestamps or [None] * n
    nodes = [
        PropNode(i, parents[i], contents[i], timestamps[i]) for i in range(n)
    ]
    return PropagationTree(sample_id, label, tuple(nodes))
