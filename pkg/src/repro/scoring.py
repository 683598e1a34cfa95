"""Weighted rubric-tree scoring, leaf pass ratio, and fingerprint/rubric matching."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Iterator, Sequence

from . import prompts
from .errors import DegenerateWeights, EmptyRubric, ParseFailure, RubricError, UngradedLeaf
from .fingerprint.types import Criterion
from .llm.gateway import Gateway, ask
from .llm.structured import extract_structured

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RubricNode:
    id: str
    weight: float = 1.0
    children: tuple["RubricNode", ...] = ()
    requirement: str | None = None
    score: int | None = None

    @property
    def is_leaf(self) -> bool:
        return self.requirement is not None

    def leaves(self) -> Iterator["RubricNode"]:
        if self.is_leaf:
            yield self
        else:
            for c in self.children:
                yield from c.leaves()

    def to_dict(self) -> dict:
        d: dict = {"id": self.id, "weight": self.weight}
        if self.is_leaf:
            d["requirement"] = self.requirement
            if self.score is not None:
                d["score"] = self.score
        else:
            d["children"] = [c.to_dict() for c in self.children]
        return d

    def with_scores(self, scores: dict[str, int]) -> "RubricNode":
        if self.is_leaf:
            return replace(self, score=scores.get(self.id, self.score))
        return replace(self, children=tuple(c.with_scores(scores) for c in self.children))


def rubric_from_dict(d: dict, path: str = "root") -> RubricNode:
    """Build and validate a rubric tree; raises RubricError with the offending path."""
    if not isinstance(d, dict):
        raise RubricError(f"{path}: node must be an object")
    node_id = d.get("id")
    if not isinstance(node_id, str) or not node_id:
        raise RubricError(f"{path}: missing string 'id'")
    where = f"{path} ({node_id})"
    weight = d.get("weight", 1.0)
    if isinstance(weight, bool) or not isinstance(weight, (int, float)) or not math.isfinite(weight) or weight < 0:
        raise RubricError(f"{where}: weight must be a finite nonnegative number, got {weight!r}")
    has_children = "children" in d
    has_req = "requirement" in d
    if has_children == has_req:
        raise RubricError(f"{where}: exactly one of 'children' or 'requirement' is required")
    if has_req:
        req = d["requirement"]
        if not isinstance(req, str) or not req.strip():
            raise RubricError(f"{where}: requirement must be non-empty text")
        score = d.get("score")
        if score is not None and (isinstance(score, bool) or score not in (0, 1)):
            raise RubricError(f"{where}: score must be 0 or 1, got {score!r}")
        return RubricNode(node_id, float(weight), requirement=req, score=score)
    kids = d["children"]
    if not isinstance(kids, list) or not kids:
        raise RubricError(f"{where}: children must be a non-empty list")
    children = tuple(rubric_from_dict(c, f"{path}/{k}") for k, c in enumerate(kids))
    return RubricNode(node_id, float(weight), children=children)


def load_rubric(path: str | Path) -> RubricNode:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise RubricError(f"{path}: not valid JSON: {exc}") from exc
    root = rubric_from_dict(data)
    ids = [n.id for n in _walk(root)]
    dupes = sorted({i for i in ids if ids.count(i) > 1})
    if dupes:
        raise RubricError(f"duplicate node ids: {dupes}")
    return root


def _walk(node: RubricNode) -> Iterator[RubricNode]:
    yield node
    for c in node.children:
        yield from _walk(c)


def _exact_score(node: RubricNode) -> Fraction:
    if node.is_leaf:
        if node.score not in (0, 1):
            raise UngradedLeaf(f"leaf {node.id} has no score")
        return Fraction(node.score)
    weights = [Fraction(c.weight) for c in node.children]
    total = sum(weights)
    if total <= 0:
        raise DegenerateWeights(f"node {node.id}: all child weights are zero")
    return sum(w * _exact_score(c) for w, c in zip(weights, node.children)) / total


def score_rubric(root: RubricNode) -> float:
    """Weighted average of child scores, applied recursively from the leaves.

    Averaging is done in exact rational arithmetic and rounded once, so equal
    sibling weights give exactly the plain pass fraction.
    """
    return float(_exact_score(root))


def pr_leaf(leaf_scores: Sequence[int]) -> float:
    if not leaf_scores:
        raise EmptyRubric("no leaf scores")
    return sum(1 for s in leaf_scores if s == 1) / len(leaf_scores)


# ---------------------------------------------------------------------------
# fingerprint vs rubric


@dataclass
class MatchReport:
    rubric_total: int
    rubric_covered: int
    fp_total: int
    fp_matching: int
    recall: float
    precision: float
    matrix: list[list[bool]] = field(default_factory=list)
    warnings: list[dict] = field(default_factory=list)

    @classmethod
    def from_matrix(cls, matrix: Sequence[Sequence[bool]], rubric_total: int, warnings: list | None = None) -> "MatchReport":
        """Rows are fingerprint criteria, columns are rubric leaves."""
        rows = [list(map(bool, r)) for r in matrix]
        fp_total = len(rows)
        covered = sum(1 for j in range(rubric_total) if any(r[j] for r in rows))
        matching = sum(1 for r in rows if any(r))
        return cls(
            rubric_total, covered, fp_total, matching,
            covered / rubric_total if rubric_total else 0.0,
            matching / fp_total if fp_total else 0.0,
            rows, list(warnings or []),
        )

    def to_dict(self) -> dict:
        return {
            "rubric_total": self.rubric_total,
            "rubric_covered": self.rubric_covered,
            "fp_total": self.fp_total,
            "fp_matching": self.fp_matching,
            "recall": self.recall,
            "precision": self.precision,
            "matrix": self.matrix,
            "warnings": self.warnings,
        }


def _parse_matches(reply: str, n_criteria: int, n_requirements: int) -> list[list[bool]]:
    obj = extract_structured(reply, "json_object")
    entries = obj.get("matches")
    if not isinstance(entries, list):
        raise ParseFailure("'matches' must be a list", reply)
    rows = [[False] * n_requirements for _ in range(n_criteria)]
    for e in entries:
        if not isinstance(e, dict):
            raise ParseFailure("each match entry must be an object", reply)
        ci, reqs = e.get("criterion"), e.get("requirements", [])
        if isinstance(ci, bool) or not isinstance(ci, int) or not 1 <= ci <= n_criteria:
            raise ParseFailure(f"criterion number {ci!r} out of range", reply)
        if not isinstance(reqs, list):
            raise ParseFailure("'requirements' must be a list", reply)
        for r in reqs:
            if isinstance(r, str) and r.upper().startswith("R") and r[1:].isdigit():
                r = int(r[1:])
            if isinstance(r, bool) or not isinstance(r, int) or not 1 <= r <= n_requirements:
                raise ParseFailure(f"requirement number {r!r} out of range", reply)
            rows[ci - 1][r - 1] = True
    return rows


def match_fingerprint_to_rubric(
    criteria: Sequence[Criterion] | Sequence[str],
    requirements: Sequence[str],
    gateway: Gateway,
    *,
    batch_size: int = 20,
    max_reprompts: int = 2,
) -> MatchReport:
    """Judge criteria against all rubric requirements, ``batch_size`` criteria per call."""
    texts = [c.rendered if isinstance(c, Criterion) else str(c) for c in criteria]
    reqs = list(requirements)
    if not texts or not reqs:
        raise EmptyRubric("matching needs a non-empty fingerprint and rubric")
    batches = [texts[i : i + batch_size] for i in range(0, len(texts), batch_size)]

    def run(batch: list[str]):
        messages = [("system", prompts.MATCH_SYSTEM), ("user", prompts.match_user(reqs, batch))]
        try:
            return ask(gateway, "match", messages, lambda r: _parse_matches(r, len(batch), len(reqs)), max_reprompts=max_reprompts), None
        except ParseFailure as exc:
            return [[False] * len(reqs) for _ in batch], str(exc).splitlines()[0]

    matrix: list[list[bool]] = []
    warnings = []
    for b, (rows, err) in enumerate(gateway.map(run, batches), start=1):
        matrix.extend(rows)
        if err:
            warnings.append({"stage": "match", "kind": "batch_unmatched", "detail": err, "batch": b})
    return MatchReport.from_matrix(matrix, len(reqs), warnings)


# ---------------------------------------------------------------------------
# grading


def leaf_criterion(leaf: RubricNode) -> Criterion:
    return Criterion(
        id=leaf.id,
        fact=leaf.requirement or "",
        scope=None,
        rendered=f"<fact>{leaf.requirement}</fact>",
        origin_guide_id=f"rubric:{leaf.id}",
        source=None,
    )


def grade_rubric(root: RubricNode, workspace, gateway: Gateway, *, paper_text: str = "", parallelism: int = 8):
    """Grade every leaf with the verifier; returns (graded tree, verdicts)."""
    from .reflect import LoopConfig, verify_all

    leaves = list(root.leaves())
    verdicts = verify_all(
        workspace, [leaf_criterion(l) for l in leaves], gateway,
        LoopConfig(verify_parallelism=parallelism), paper_text=paper_text, iteration=0,
    )
    return root.with_scores({v.criterion_id: v.score for v in verdicts}), verdicts
