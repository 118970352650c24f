"""Bidirectional masked-path sampling for generator fine-tuning.

Each tree is linearised twice (breadth-first and depth-first). For a path
``v_0..v_L`` we emit forward samples that hide ``v_{m+1}`` after the prefix
``v_0..v_m`` (m = 0..L-1) and backward samples that hide ``v_{m-1}`` between
``v_0..v_{m-2}`` and ``v_m`` (m = 2..L). A tree with N >= 2 nodes therefore
yields ``2 * (2(N-1) - 1)`` samples.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

from .prompts import MASK_SLOT, node_json, render_phi1
from .tree import PropagationTree, bfs_order, dfs_order

BREADTH = "breadth"
DEPTH = "depth"
PATH_KINDS = (BREADTH, DEPTH)
FORWARD = 1
BACKWARD = -1

Triple = tuple[Optional[int], int, str]


@dataclass(frozen=True)
class TraversalPath:
    kind: str
    entries: tuple[Triple, ...]

    @property
    def length(self) -> int:
        """L, the index of the last entry."""
        return len(self.entries) - 1


@dataclass(frozen=True)
class MaskedSubpath:
    direction: int
    m: int
    subpath: tuple
    target: Triple


@dataclass(frozen=True)
class MaskedSample:
    sample_id: str
    path_kind: str
    direction: int
    pivot_m: int
    prompt: str
    target: str
    template_id: str

    def to_record(self) -> dict:
        return {
            "instruction": self.prompt,
            "output": self.target,
            "meta": {
                "sample_id": self.sample_id,
                "path_kind": self.path_kind,
                "direction": self.direction,
                "m": self.pivot_m,
            },
        }


def traverse(tree: PropagationTree, kind: str) -> TraversalPath:
    if kind == BREADTH:
        order = bfs_order(tree)
    elif kind == DEPTH:
        order = dfs_order(tree)
    else:
        raise ValueError(f"unknown traversal kind {kind!r}")
    entries = tuple(
        (tree.nodes[i].parent_index, i, tree.nodes[i].content) for i in order
    )
    return TraversalPath(kind, entries)


def reconstruct_edges(path: TraversalPath) -> tuple[set[int], set[tuple[int, int]]]:
    """Aggregate a path's triples back into (node set, parent->child edge set)."""
    nodes = {idx for _, idx, _ in path.entries}
    edges = {(p, idx) for p, idx, _ in path.entries if p is not None}
    return nodes, edges


def mask_subpaths(path: TraversalPath) -> list[MaskedSubpath]:
    v = path.entries
    L = path.length
    if L < 1:
        return []
    out = []
    for m in range(0, L):
        out.append(MaskedSubpath(FORWARD, m, v[: m + 1] + (MASK_SLOT,), v[m + 1]))
    for m in range(2, L + 1):
        out.append(MaskedSubpath(BACKWARD, m, v[: m - 1] + (MASK_SLOT, v[m]), v[m - 1]))
    return out


def sample_tree(tree: PropagationTree, template_id: str = "P1") -> list[MaskedSample]:
    samples = []
    for kind in PATH_KINDS:
        for sp in mask_subpaths(traverse(tree, kind)):
            samples.append(
                MaskedSample(
                    sample_id=tree.sample_id,
                    path_kind=kind,
                    direction=sp.direction,
                    pivot_m=sp.m,
                    prompt=render_phi1(sp.subpath, template_id),
                    target=node_json(sp.target),
                    template_id=template_id,
                )
            )
    return samples


def _order_key(s: MaskedSample) -> tuple:
    return (s.sample_id, s.path_kind, s.direction, s.pivot_m)


def export_samples(samples: Iterable[MaskedSample], path: str | Path) -> int:
    rows = sorted(samples, key=_order_key)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in rows:
            fh.write(json.dumps(s.to_record(), ensure_ascii=False) + "\n")
    return len(rows)
