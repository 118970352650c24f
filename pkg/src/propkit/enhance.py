"""Grow a propagation tree one generated node at a time.

Every candidate goes through three gates in order (syntactic, structural,
content); the first failing gate decides the verdict and the slot is retried
up to ``max_retries`` more times with the same prompt.
"""

from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Optional

from .gateway import Gateway, GenAttempt, TransportError
from .prompts import CONTENT_KEY, INDEX_KEY, PARENT_KEY, render_phi2
from .tree import Origin, PropagationTree, PropNode, arrival_order

log = logging.getLogger(__name__)

MIN_WORDS = 2
MAX_TOKEN_RUN = 5

SYNTACTIC, STRUCTURAL, CONTENT = "syntactic", "structural", "content"
PASS, FAIL = "pass", "fail"

COMPLETE, PARTIAL, ABORTED = "complete", "partial", "aborted"
ON_EXHAUSTION = ("stop", "abort")


@dataclass(frozen=True)
class ValidationVerdict:
    outcome: str
    gate: str = "none"
    reason: Optional[str] = None
    warning: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.outcome == PASS

    def to_dict(self) -> dict:
        d = {"outcome": self.outcome, "gate": self.gate, "reason": self.reason}
        if self.warning:
            d["warning"] = self.warning
        return d


def _fail(gate: str, reason: str) -> ValidationVerdict:
    return ValidationVerdict(FAIL, gate, reason)


@lru_cache(maxsize=1)
def refusal_phrases() -> tuple[str, ...]:
    text = resources.files("propkit").joinpath("data/refusals.txt").read_text(encoding="utf-8")
    return tuple(
        line.strip() for line in text.splitlines() if line.strip() and not line.startswith("#")
    )


def _normalize(text: str) -> str:
    return " ".join(text.replace("’", "'").lower().split())


def _as_int(value) -> Optional[int]:
    if isinstance(value, bool):
        return None
    if isinstance(value, int):
        return value
    if isinstance(value, str) and value.strip().lstrip("-").isdigit():
        return int(value.strip())
    return None


def _has_token_run(text: str, run: int = MAX_TOKEN_RUN) -> bool:
    toks = re.findall(r"\w+", text.lower())
    streak = 1
    for a, b in zip(toks, toks[1:]):
        streak = streak + 1 if a == b else 1
        if streak >= run:
            return True
    return False


def content_reason(content: str, tree: PropagationTree) -> Optional[str]:
    if not content.strip():
        return "empty_content"
    norm = _normalize(content)
    if any(p in norm for p in refusal_phrases()):
        return "refusal_boilerplate"
    if _has_token_run(content) or any(_normalize(n.content) == norm for n in tree.nodes):
        return "repetitive"
    if len(content.split()) < MIN_WORDS:
        return "too_short"
    return None


def validate_candidate(raw_output: str, tree: PropagationTree) -> tuple[ValidationVerdict, Optional[PropNode]]:
    # syntactic
    try:
        obj = json.loads(raw_output)
    except (json.JSONDecodeError, TypeError):
        return _fail(SYNTACTIC, "malformed_json"), None
    if not isinstance(obj, dict):
        return _fail(SYNTACTIC, "malformed_json"), None
    if any(k not in obj for k in (PARENT_KEY, INDEX_KEY, CONTENT_KEY)):
        return _fail(SYNTACTIC, "missing_field"), None
    index = _as_int(obj[INDEX_KEY])
    content = obj[CONTENT_KEY]
    if index is None or not isinstance(content, str):
        return _fail(SYNTACTIC, "missing_field"), None

    # structural
    n = len(tree.nodes)
    parent = _as_int(obj[PARENT_KEY])
    if parent is not None and parent == index:
        return _fail(STRUCTURAL, "self_loop"), None
    if parent is None or not 0 <= parent < n:
        return _fail(STRUCTURAL, "invalid_parent_ref"), None
    if 0 <= index < n and parent > index:
        return _fail(STRUCTURAL, "cycle"), None
    if index < n:
        return _fail(STRUCTURAL, "duplicate_index"), None

    # content
    reason = content_reason(content, tree)
    if reason is not None:
        return _fail(CONTENT, reason), None

    warning = None
    if index != n:
        warning = f"node index {index} rewritten to {n}"
    pt = tree.nodes[parent].timestamp
    node = PropNode(
        index=n,
        parent_index=parent,
        content=content,
        timestamp=None if pt is None else pt + 1,
        origin=Origin.SYNTHETIC,
    )
    return ValidationVerdict(PASS, warning=warning), node


def time_ordered_sequence(tree: PropagationTree) -> list[tuple]:
    return [(tree.nodes[i].parent_index, i, tree.nodes[i].content) for i in arrival_order(tree)]


@dataclass
class AttemptRecord:
    slot: int
    attempt: GenAttempt
    verdict: Optional[ValidationVerdict]
    error: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "slot": self.slot,
            "attempt": self.attempt.to_dict(),
            "verdict": None if self.verdict is None else self.verdict.to_dict(),
            "error": self.error,
        }


@dataclass
class GenerationTranscript:
    sample_id: str
    k_target: int
    accepted_nodes: list[PropNode] = field(default_factory=list)
    attempts: list[AttemptRecord] = field(default_factory=list)
    status: str = COMPLETE

    def attempts_for(self, slot: int) -> list[AttemptRecord]:
        return [a for a in self.attempts if a.slot == slot]

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "k_target": self.k_target,
            "status": self.status,
            "accepted_nodes": [n.to_dict() for n in self.accepted_nodes],
            "attempts": [a.to_dict() for a in self.attempts],
        }


def generate_valid_node(
    tree: PropagationTree,
    gateway: Gateway,
    slot: int,
    transcript: GenerationTranscript,
    template_id: str = "P1",
) -> Optional[PropNode]:
    """One slot of the retry loop; returns None once every attempt failed."""
    prompt = render_phi2(time_ordered_sequence(tree), template_id)
    for attempt_no in range(1, gateway.config.max_retries + 2):
        try:
            attempt = gateway.generate(prompt, attempt_no=attempt_no)
        except TransportError as exc:
            failed = GenAttempt(prompt=prompt, raw_output="", latency_ms=0, attempt_no=attempt_no)
            transcript.attempts.append(AttemptRecord(slot, failed, None, f"transport: {exc}"))
            continue
        verdict, node = validate_candidate(attempt.raw_output, tree)
        transcript.attempts.append(AttemptRecord(slot, attempt, verdict))
        if verdict.warning:
            log.warning("%s slot %d: %s", tree.sample_id, slot, verdict.warning)
        if node is not None:
            return node
    return None


def enhance(
    tree: PropagationTree,
    k: int,
    gateway: Gateway,
    template_id: str = "P1",
    on_exhaustion: str = "stop",
) -> tuple[PropagationTree, GenerationTranscript]:
    if k < 0:
        raise ValueError("k must be non-negative")
    if on_exhaustion not in ON_EXHAUSTION:
        raise ValueError(f"on_exhaustion must be one of {ON_EXHAUSTION}")
    transcript = GenerationTranscript(tree.sample_id, k)
    current = tree
    for slot in range(1, k + 1):
        node = generate_valid_node(current, gateway, slot, transcript, template_id)
        if node is None:
            if on_exhaustion == "abort":
                transcript.status = ABORTED
                return tree, transcript
            transcript.status = PARTIAL
            break
        current = current.with_nodes(current.nodes + (node,))
        transcript.accepted_nodes.append(node)
    return current, transcript


def enhance_many(
    trees: list[PropagationTree],
    k: int,
    gateway: Gateway,
    template_id: str = "P1",
    on_exhaustion: str = "stop",
    jobs: int = 1,
) -> list[tuple[PropagationTree, GenerationTranscript]]:
    """Enhance independent trees, at most ``jobs`` at a time, keeping input order."""

    def run(t):
        return enhance(t, k, gateway, template_id, on_exhaustion)

    if jobs <= 1:
        return [run(t) for t in trees]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(run, trees))


def write_transcript(transcript: GenerationTranscript, directory: str | Path) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    safe = re.sub(r"[^A-Za-z0-9._-]", "_", transcript.sample_id)
    path = d / f"{safe}.json"
    path.write_text(json.dumps(transcript.to_dict(), ensure_ascii=False, indent=1) + "\n", encoding="utf-8")
    return path
