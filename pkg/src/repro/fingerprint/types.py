from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Any

FRAMEWORK = "framework"
CONFIGURATION = "configuration"
EXHAUSTIVE = "exhaustive"
LEVELS = (FRAMEWORK, CONFIGURATION, EXHAUSTIVE)

_TAG_RE = re.compile(r"</?(?:fact|scope)>", re.IGNORECASE)


@dataclass(frozen=True)
class SourceRef:
    paragraph_id: int
    sentence_indices: tuple[int, ...]

    def __post_init__(self) -> None:
        idx = tuple(self.sentence_indices)
        object.__setattr__(self, "sentence_indices", idx)
        if not idx:
            raise ValueError("SourceRef needs at least one sentence")
        if idx[0] < 1 or any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError(f"sentence indices must be 1-based and strictly increasing: {idx}")

    def to_dict(self) -> dict:
        return {"paragraph_id": self.paragraph_id, "sentence_indices": list(self.sentence_indices)}

    @classmethod
    def from_dict(cls, data: dict | None) -> "SourceRef | None":
        if not data:
            return None
        return cls(data["paragraph_id"], tuple(data["sentence_indices"]))


@dataclass
class GuideUnit:
    id: str
    level: str
    text: str
    aspect: str | None = None
    source: SourceRef | None = None
    flags: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.level not in LEVELS:
            raise ValueError(f"unknown guide level {self.level!r}")
        if not self.text.strip():
            raise ValueError("guide unit text is empty")
        if self.level == FRAMEWORK and not self.aspect:
            raise ValueError("framework units need an aspect")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "level": self.level,
            "aspect": self.aspect,
            "text": self.text,
            "source": self.source.to_dict() if self.source else None,
            "flags": list(self.flags),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GuideUnit":
        return cls(
            id=data["id"],
            level=data["level"],
            text=data["text"],
            aspect=data.get("aspect"),
            source=SourceRef.from_dict(data.get("source")),
            flags=list(data.get("flags", [])),
        )


@dataclass(frozen=True)
class Criterion:
    id: str
    fact: str
    scope: str | None
    rendered: str
    origin_guide_id: str
    source: SourceRef | None = None

    @property
    def plain(self) -> str:
        """Rendered text with the span markers removed."""
        return _TAG_RE.sub("", self.rendered)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "fact": self.fact,
            "scope": self.scope,
            "rendered": self.rendered,
            "origin_guide_id": self.origin_guide_id,
            "source": self.source.to_dict() if self.source else None,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Criterion":
        return cls(
            id=data["id"],
            fact=data["fact"],
            scope=data.get("scope"),
            rendered=data["rendered"],
            origin_guide_id=data["origin_guide_id"],
            source=SourceRef.from_dict(data.get("source")),
        )


@dataclass(frozen=True)
class Cluster:
    members: tuple[str, ...]
    threshold: float

    def to_dict(self) -> dict:
        return {"members": list(self.members), "threshold": self.threshold}


@dataclass
class Fingerprint:
    criteria: list[Criterion]
    stage_counts: dict[str, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.criteria)

    def __iter__(self):
        return iter(self.criteria)

    def to_dict(self) -> dict:
        return {
            "stage_counts": dict(self.stage_counts),
            "criteria": [c.to_dict() for c in self.criteria],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Fingerprint":
        return cls(
            criteria=[Criterion.from_dict(c) for c in data["criteria"]],
            stage_counts=dict(data.get("stage_counts", {})),
        )


@dataclass
class FingerprintConfig:
    top_k_paragraphs: int = 3
    dedup_threshold: float = 0.92
    context_window: int = 2
    filter_cap: int = 5
    max_reprompts: int = 2
    paper_context_chars: int = 60000

    @classmethod
    def from_mapping(cls, data: dict[str, Any] | None) -> "FingerprintConfig":
        data = data or {}
        known = {k: data[k] for k in cls.__dataclass_fields__ if k in data}
        return cls(**known)


def warning(stage: str, kind: str, detail: str, **extra: Any) -> dict[str, Any]:
    return {"stage": stage, "kind": kind, "detail": detail, **extra}
