"""Detection harness: structural-feature baseline, external detector adapters,
and the general / early / cross-platform evaluation scenarios."""

from __future__ import annotations

import json
import logging
import math
import select
import shlex
import subprocess
import sys
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Protocol, Sequence

import httpx
import numpy as np

from .ingest import ConfigError
from .metrics import HashedBowEmbedder, max_breadth, max_depth, semantic_homogeneity, structural_entropy
from .tree import PropagationTree, arrival_order, children_map, dumps_tree, induced_subtree

log = logging.getLogger(__name__)

FEATURE_NAMES = (
    "node_count",
    "max_depth",
    "max_breadth",
    "structural_entropy",
    "mean_branching",
    "leaf_fraction",
    "mean_content_length",
    "semantic_homogeneity",
)
EPOCHS = 500
STEP = 0.1


class AdapterError(RuntimeError):
    def __init__(self, message: str, payload: str = ""):
        super().__init__(message)
        self.payload = payload


class Detector(Protocol):
    def predict(self, tree: PropagationTree) -> tuple[int, float]: ...


# early-detection truncation


def retained_count(n_nodes: int, rho: float) -> int:
    # round first so 0.2 * 10 does not become ceil(2.0000000000000004)
    return math.ceil(round(rho * (n_nodes - 1), 9))


def truncate_early(tree: PropagationTree, rho: float) -> PropagationTree:
    """Keep the earliest ``ceil(rho * (N-1))`` comments and re-index.

    Comments are taken in arrival order, which never admits a reply before
    the post it answers, so the kept set is always a connected prefix.
    """
    if not 0 < rho <= 1:
        raise ValueError(f"rho must lie in (0, 1], got {rho}")
    m = retained_count(len(tree.nodes), rho)
    keep = arrival_order(tree)[: m + 1]
    return induced_subtree(tree, keep)


# features


_EMBEDDER = HashedBowEmbedder()


def featurize(tree: PropagationTree) -> np.ndarray:
    kids = children_map(tree)
    n = len(tree.nodes)
    internal = [len(c) for c in kids.values() if c]
    semh = semantic_homogeneity(tree, _EMBEDDER)
    return np.array(
        [
            n,
            max_depth(tree),
            max_breadth(tree),
            structural_entropy(tree),
            float(np.mean(internal)) if internal else 0.0,
            sum(1 for c in kids.values() if not c) / n,
            float(np.mean([len(node.content.split()) for node in tree.nodes])),
            0.0 if semh is None else semh,
        ],
        dtype=float,
    )


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


@dataclass
class BaselineModel:
    """Logistic regression over standardised structural features."""

    mean: list[float]
    scale: list[float]
    kept: list[int]
    weights: list[float]
    bias: float = 0.0

    def score(self, tree: PropagationTree) -> float:
        x = featurize(tree)[self.kept]
        z = (x - np.asarray(self.mean)) / np.asarray(self.scale)
        return float(_sigmoid(z @ np.asarray(self.weights) + self.bias))

    def predict(self, tree: PropagationTree) -> tuple[int, float]:
        s = self.score(tree)
        return int(s >= 0.5), s

    def to_dict(self) -> dict:
        return {"features": [FEATURE_NAMES[i] for i in self.kept], **asdict(self)}

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "BaselineModel":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(d["mean"], d["scale"], d["kept"], d["weights"], d["bias"])

    @classmethod
    def zero(cls) -> "BaselineModel":
        k = len(FEATURE_NAMES)
        return cls([0.0] * k, [1.0] * k, list(range(k)), [0.0] * k, 0.0)


def train_baseline(train_trees: Sequence[PropagationTree], epochs: int = EPOCHS, step: float = STEP) -> BaselineModel:
    labeled = [t for t in train_trees if t.label is not None]
    y = np.array([t.label for t in labeled], dtype=float)
    if len(set(y.tolist())) < 2:
        raise ConfigError("training set must contain both labels")
    X = np.stack([featurize(t) for t in labeled])
    mean = X.mean(axis=0)
    sd = X.std(axis=0)
    kept = [i for i in range(X.shape[1]) if sd[i] > 0]
    Z = (X[:, kept] - mean[kept]) / sd[kept]
    w = np.zeros(len(kept))
    b = 0.0
    n = len(y)
    for _ in range(epochs):
        err = _sigmoid(Z @ w + b) - y
        w -= step * (Z.T @ err) / n
        b -= step * err.sum() / n
    return BaselineModel(mean[kept].tolist(), sd[kept].tolist(), kept, w.tolist(), float(b))


# external adapters


def parse_adapter_reply(line: str) -> tuple[int, float]:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise AdapterError(f"adapter reply is not JSON: {exc}", line) from None
    if not isinstance(obj, dict):
        raise AdapterError("adapter reply is not an object", line)
    label, score = obj.get("label"), obj.get("score")
    if isinstance(label, bool) or label not in (0, 1):
        raise AdapterError(f"adapter label must be 0 or 1, got {label!r}", line)
    if isinstance(score, bool) or not isinstance(score, (int, float)) or not 0.0 <= score <= 1.0:
        raise AdapterError(f"adapter score must be a number in [0, 1], got {score!r}", line)
    return int(label), float(score)


class SubprocessDetector:
    """Long-lived child process speaking one JSON line in, one JSON line out."""

    def __init__(self, command: Sequence[str], timeout: float = 60.0):
        self.command = list(command)
        self.timeout = timeout
        self._lock = threading.Lock()
        self._proc: Optional[subprocess.Popen] = None

    def _ensure(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            self._proc = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                encoding="utf-8",
                bufsize=1,
            )
        return self._proc

    def predict(self, tree: PropagationTree) -> tuple[int, float]:
        with self._lock:
            proc = self._ensure()
            try:
                proc.stdin.write(dumps_tree(tree) + "\n")
                proc.stdin.flush()
                ready, _, _ = select.select([proc.stdout], [], [], self.timeout)
                if not ready:
                    proc.kill()
                    raise AdapterError(f"adapter gave no reply within {self.timeout}s")
                line = proc.stdout.readline()
            except (BrokenPipeError, OSError) as exc:
                raise AdapterError(f"adapter process failed: {exc}") from exc
        if not line:
            raise AdapterError("adapter closed its output", "")
        return parse_adapter_reply(line.strip())

    def close(self) -> None:
        if self._proc is not None:
            if self._proc.stdin:
                self._proc.stdin.close()
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
            self._proc = None


class HttpDetector:
    """POST the canonical tree JSON, expect ``{"label": 0|1, "score": p}``."""

    def __init__(self, url: str, max_in_flight: int = 4, timeout: float = 60.0, client: Optional[httpx.Client] = None):
        self.url = url
        self.client = client or httpx.Client(timeout=timeout)
        self._sem = threading.BoundedSemaphore(max(1, max_in_flight))

    def predict(self, tree: PropagationTree) -> tuple[int, float]:
        with self._sem:
            try:
                resp = self.client.post(
                    self.url, content=dumps_tree(tree).encode("utf-8"), headers={"Content-Type": "application/json"}
                )
                resp.raise_for_status()
            except httpx.HTTPError as exc:
                raise AdapterError(f"adapter endpoint failed: {exc}") from exc
        return parse_adapter_reply(resp.text)

    def close(self) -> None:
        self.client.close()


def external_detector_adapter(target: str | Sequence[str], **kwargs):
    """URL strings give an HTTP adapter; anything else is a subprocess command."""
    if isinstance(target, str) and target.startswith(("http://", "https://")):
        return HttpDetector(target, **kwargs)
    if isinstance(target, str):
        target = shlex.split(target)
    return SubprocessDetector(target, **kwargs)


# scoring


def auc_midrank(labels: Sequence[int], scores: Sequence[float]) -> Optional[float]:
    """Mann-Whitney AUC with tied scores sharing their average rank."""
    n = len(scores)
    n_pos = sum(1 for y in labels if y == 1)
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    order = sorted(range(n), key=lambda i: scores[i])
    ranks = [0.0] * n
    i = 0
    while i < n:
        j = i
        while j + 1 < n and scores[order[j + 1]] == scores[order[i]]:
            j += 1
        mid = (i + j) / 2 + 1
        for t in range(i, j + 1):
            ranks[order[t]] = mid
        i = j + 1
    r_pos = sum(r for r, y in zip(ranks, labels) if y == 1)
    return (r_pos - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg)


def _f1(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def _ratio(a: int, b: int) -> float:
    return a / b if b else 0.0


@dataclass
class DetectionReport:
    scenario: dict
    accuracy: float
    macro_f1: float
    precision: float
    recall: float
    auc: Optional[float]
    confusion: dict
    n_evaluated: int
    excluded: list[dict] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def scores_from_confusion(tp: int, fn: int, fp: int, tn: int) -> dict:
    n = tp + fn + fp + tn
    p_pos, r_pos = _ratio(tp, tp + fp), _ratio(tp, tp + fn)
    p_neg, r_neg = _ratio(tn, tn + fn), _ratio(tn, tn + fp)
    return {
        "accuracy": _ratio(tp + tn, n),
        "precision": p_pos,
        "recall": r_pos,
        "macro_f1": (_f1(p_pos, r_pos) + _f1(p_neg, r_neg)) / 2,
    }


def build_report(scenario: dict, labels: list[int], preds: list[int], scores: list[float], excluded=None, warnings=None) -> DetectionReport:
    tp = sum(1 for y, p in zip(labels, preds) if y == 1 and p == 1)
    fn = sum(1 for y, p in zip(labels, preds) if y == 1 and p == 0)
    fp = sum(1 for y, p in zip(labels, preds) if y == 0 and p == 1)
    tn = sum(1 for y, p in zip(labels, preds) if y == 0 and p == 0)
    s = scores_from_confusion(tp, fn, fp, tn)
    warnings = list(warnings or [])
    auc = auc_midrank(labels, scores)
    if auc is None and labels:
        warnings.append("AUC undefined: test set has a single class")
    return DetectionReport(
        scenario=scenario,
        auc=auc,
        confusion={"tp": tp, "fn": fn, "fp": fp, "tn": tn},
        n_evaluated=len(labels),
        excluded=list(excluded or []),
        warnings=warnings,
        **s,
    )


@dataclass(frozen=True)
class Scenario:
    kind: str = "general"
    rho: Optional[float] = None
    source: Optional[str] = None
    target: Optional[str] = None

    def __post_init__(self):
        if self.kind not in ("general", "early", "cross_platform"):
            raise ConfigError(f"unknown scenario {self.kind!r}")
        if self.kind == "early" and (self.rho is None or not 0 < self.rho <= 1):
            raise ConfigError("early scenario needs rho in (0, 1]")

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


Enhancer = Callable[[list[PropagationTree]], list[PropagationTree]]


def evaluate(
    detector: Detector,
    test_trees: Sequence[PropagationTree],
    scenario: Scenario = Scenario(),
    enhancer: Optional[Enhancer] = None,
    jobs: int = 1,
) -> DetectionReport:
    """Score ``detector`` on labeled trees under the given scenario.

    For the early scenario every tree is truncated to its first ``rho``
    fraction of comments and then, if ``enhancer`` is given, extended before
    prediction. Unlabeled trees and adapter failures are excluded and listed.
    """
    excluded, warnings = [], []
    trees = []
    for t in test_trees:
        if t.label is None:
            excluded.append({"sample_id": t.sample_id, "reason": "unlabeled"})
            warnings.append(f"{t.sample_id}: unlabeled tree excluded")
        else:
            trees.append(t)
    if scenario.kind == "early":
        trees = [truncate_early(t, scenario.rho) for t in trees]
    if enhancer is not None:
        trees = enhancer(trees)

    def run(t):
        try:
            return detector.predict(t)
        except AdapterError as exc:
            return exc

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, trees))
    else:
        results = [run(t) for t in trees]

    labels, preds, scores = [], [], []
    for t, res in zip(trees, results):
        if isinstance(res, AdapterError):
            excluded.append({"sample_id": t.sample_id, "reason": str(res), "payload": res.payload})
            warnings.append(f"{t.sample_id}: adapter error")
            continue
        labels.append(t.label)
        preds.append(res[0])
        scores.append(res[1])
    return build_report(scenario.to_dict(), labels, preds, scores, excluded, warnings)


def serve_stdio(detector: Detector, stdin=None, stdout=None) -> None:
    """Answer adapter requests on stdin/stdout, one tree per line."""
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    for line in stdin:
        if not line.strip():
            continue
        label, score = detector.predict(PropagationTree.from_dict(json.loads(line)))
        stdout.write(json.dumps({"label": label, "score": score}) + "\n")
        stdout.flush()
