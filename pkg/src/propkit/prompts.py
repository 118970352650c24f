"""Prompt templates for masked-node prediction and next-node generation.

Both prompts embed the propagation as a JSON array of node objects using the
key strings below. A fine-tuned model learns to emit exactly these keys, so
they must not drift.
"""

from __future__ import annotations

import json
from typing import Optional, Sequence

PARENT_KEY = "parent node index"
INDEX_KEY = "node index"
CONTENT_KEY = "content"
MASK = "[masked]"

TEMPLATE_IDS = ("P1", "P2", "P3")

_FORMAT_HINT = "{parent node index: num, node index: num, content: text}"
_MASK_HINT = "{'parent node index': '[masked]', 'node index': '[masked]', 'content': '[masked]'}"

# masked-node prediction (training)
PHI1 = {
    "P1": (
        "Given the propagation tree: {tree}, please predict the masked comment node ("
        + _MASK_HINT
        + ") in a JSON format as same as other nodes, i.e.,"
        + _FORMAT_HINT
        + "."
    ),
    "P2": "Given the propagation tree: {tree}, please predict the masked comment node (" + _MASK_HINT + ").",
    "P3": (
        "Given the propagation tree: {tree}, please carefully analyze the structural patterns and "
        "semantic context, then predict the masked comment node ("
        + _MASK_HINT
        + ") that maintains both structural consistency and semantic coherence in a JSON format, i.e., "
        + _FORMAT_HINT
        + "."
    ),
}

# next-node generation (enhancement)
PHI2 = {
    "P1": (
        "Given the propagation tree: {tree}, please predict the next comment node in a JSON format "
        "as same as other nodes, i.e., " + _FORMAT_HINT + "."
    ),
    "P2": "Given the propagation tree: {tree}, please predict the next comment node.",
    "P3": (
        "Given the propagation tree: {tree}, please carefully analyze the structural patterns and "
        "semantic context, then predict the next comment node that maintains both structural "
        "consistency and semantic coherence in a JSON format, i.e., " + _FORMAT_HINT + "."
    ),
}


class TemplateError(ValueError):
    pass


class MaskSlot:
    """Placeholder for the node a sub-path asks the model to predict."""

    _instance: Optional["MaskSlot"] = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "MASK"


MASK_SLOT = MaskSlot()

Triple = tuple  # (parent_index | None, index, content)


def node_object(entry) -> dict:
    if entry is MASK_SLOT:
        return {PARENT_KEY: MASK, INDEX_KEY: MASK, CONTENT_KEY: MASK}
    parent, index, content = entry
    return {PARENT_KEY: parent, INDEX_KEY: index, CONTENT_KEY: content}


def node_json(entry) -> str:
    return json.dumps(node_object(entry), ensure_ascii=False)


def tree_json(entries: Sequence) -> str:
    return "[" + ", ".join(node_json(e) for e in entries) + "]"


def _template(table: dict, template_id: str) -> str:
    try:
        return table[template_id]
    except KeyError:
        raise TemplateError(f"unknown template {template_id!r}; expected one of {TEMPLATE_IDS}") from None


def render_phi1(subpath: Sequence, template_id: str = "P1") -> str:
    tmpl = _template(PHI1, template_id)
    n_masks = sum(1 for e in subpath if e is MASK_SLOT)
    if n_masks != 1:
        raise ValueError(f"sub-path must contain exactly one mask slot, found {n_masks}")
    return tmpl.replace("{tree}", tree_json(subpath))


def render_phi2(sequence: Sequence, template_id: str = "P1") -> str:
    tmpl = _template(PHI2, template_id)
    if not sequence:
        raise ValueError("cannot render an empty propagation sequence")
    if any(e is MASK_SLOT for e in sequence):
        raise ValueError("generation prompt cannot contain a mask slot")
    return tmpl.replace("{tree}", tree_json(sequence))
