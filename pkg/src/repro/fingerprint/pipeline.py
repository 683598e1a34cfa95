"""End-to-end fingerprint construction."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import EmptyDocument
from ..llm.gateway import Gateway
from ..paper import PaperDoc
from .filtering import dedup, fact_embedding_text, semantic_filter
from .grounding import ground_units
from .guides import exhaustive_scan, extract_configuration_guides, extract_framework_guides
from .standardize import standardize
from .types import Cluster, Criterion, Fingerprint, FingerprintConfig, GuideUnit

logger = logging.getLogger(__name__)

ARTIFACTS = ("guides.json", "criteria_raw.json", "clusters.json", "fingerprint.json", "fingerprint_warnings.json")


@dataclass
class FingerprintResult:
    fingerprint: Fingerprint
    guides: list[GuideUnit] = field(default_factory=list)
    criteria_raw: list[Criterion] = field(default_factory=list)
    clusters: list[Cluster] = field(default_factory=list)
    warnings: list[dict] = field(default_factory=list)


def dump_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def build_fingerprint(
    doc: PaperDoc,
    gateway: Gateway,
    cfg: FingerprintConfig | None = None,
    out_dir: str | Path | None = None,
) -> FingerprintResult:
    """framework -> configuration -> exhaustive -> ground -> standardize -> dedup -> filter.

    Intermediate artifacts are written to ``out_dir`` as soon as each stage
    finishes, so a failure leaves the completed stages inspectable.
    """
    cfg = cfg or FingerprintConfig()
    if doc is None or not doc.paragraphs:
        raise EmptyDocument("paper has no content")
    out = Path(out_dir) if out_dir is not None else None
    notes: list[dict] = []

    def persist(name: str, payload) -> None:
        if out is not None:
            dump_json(out / name, payload)

    try:
        units = extract_framework_guides(doc, gateway, cfg, notes)
        units += extract_configuration_guides(doc, gateway, cfg, notes)
        units += exhaustive_scan(doc, gateway, cfg.context_window, cfg, notes)
        units = ground_units(units, doc, gateway, cfg, notes)
        persist("guides.json", [u.to_dict() for u in units])

        per_unit = gateway.map(lambda u: _standardize_one(u, doc, gateway, cfg), units)
        raw: list[Criterion] = []
        for found, local in per_unit:
            raw.extend(found)
            notes.extend(local)
        persist("criteria_raw.json", [c.to_dict() for c in raw])

        vectors = gateway.embed_many([fact_embedding_text(c) for c in raw]) if raw else []
        clusters, survivors = dedup(raw, cfg.dedup_threshold, vectors)
        persist("clusters.json", [c.to_dict() for c in clusters])

        by_id = {c.id: c for c in survivors}
        groups = [[by_id[m] for m in cl.members if m in by_id] for cl in clusters]
        selections = gateway.map(lambda g: _filter_one(g, gateway, cfg), groups)
        kept: set[str] = set()
        for ids, local in selections:
            kept.update(ids)
            notes.extend(local)
        final = [c for c in survivors if c.id in kept]

        fingerprint = Fingerprint(
            criteria=final,
            stage_counts={
                "guides": len(units),
                "standardized": len(raw),
                "after_dedup": len(survivors),
                "final": len(final),
            },
        )
        persist("fingerprint.json", fingerprint.to_dict())
    finally:
        persist("fingerprint_warnings.json", notes)
    logger.info("fingerprint: %s", fingerprint.stage_counts)
    return FingerprintResult(fingerprint, units, raw, clusters, notes)


def _standardize_one(unit, doc, gateway, cfg):
    local: list[dict] = []
    return standardize(unit, doc, gateway, cfg, local), local


def _filter_one(group, gateway, cfg):
    local: list[dict] = []
    return semantic_filter(group, gateway, cfg, local), local


def load_fingerprint(path: str | Path) -> Fingerprint:
    return Fingerprint.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
