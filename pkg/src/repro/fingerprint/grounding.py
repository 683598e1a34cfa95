"""Source grounding: embed-retrieve the top paragraphs, let the model pick sentences."""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .. import prompts
from ..errors import GroundingMiss, ParseFailure
from ..llm.embed import top_k
from ..llm.gateway import Gateway, ask
from ..paper import HEADING, PaperDoc, normalize_ws
from .types import FingerprintConfig, GuideUnit, SourceRef, warning


class ParagraphIndex:
    """Embedding index over every non-heading paragraph of a paper."""

    def __init__(self, doc: PaperDoc, gateway: Gateway) -> None:
        self.doc = doc
        self.paragraph_ids = [p.id for p in doc.paragraphs if p.kind != HEADING]
        texts = [normalize_ws(doc.paragraph(pid).raw) for pid in self.paragraph_ids]
        self.gateway = gateway
        self.matrix = gateway.embed_many(texts) if texts else np.zeros((0, 1))

    def search(self, text: str, k: int = 3) -> list[int]:
        if not self.paragraph_ids:
            return []
        query = self.gateway.embed(normalize_ws(text))
        return [self.paragraph_ids[i] for i in top_k(query, self.matrix, k)]


def ground(
    unit: GuideUnit,
    doc: PaperDoc,
    index: ParagraphIndex,
    gateway: Gateway,
    cfg: FingerprintConfig | None = None,
    notes: list | None = None,
) -> SourceRef:
    """Attach a single-paragraph :class:`SourceRef` to ``unit``.

    Sentences of the retrieved paragraphs are numbered consecutively in rank
    order. If the selection spans several paragraphs only the highest-ranked
    one is kept.
    """
    cfg = cfg or FingerprintConfig()
    retrieved = index.search(unit.text, cfg.top_k_paragraphs)
    numbering: dict[int, tuple[int, int]] = {}
    blocks: list[tuple[int, str]] = []
    n = 0
    for rank, pid in enumerate(retrieved, start=1):
        lines = []
        for s in doc.paragraph(pid).sentences:
            n += 1
            numbering[n] = (rank, s.index)
            lines.append(f"[{n}]: {s.text}")
        blocks.append((rank, "\n".join(lines)))
    if not numbering:
        raise GroundingMiss(f"no paragraphs to ground unit {unit.id}")

    messages = [("system", prompts.GROUNDING_SYSTEM), ("user", prompts.grounding_user(unit.text, blocks))]

    def on_reprompt(attempt: int, exc: ParseFailure) -> None:
        if notes is not None:
            notes.append(warning("ground", "reprompt", str(exc), unit_id=unit.id, attempt=attempt))

    try:
        picked = ask(gateway, "ground", messages, "int_array", max_reprompts=cfg.max_reprompts, on_reprompt=on_reprompt)
    except ParseFailure as exc:
        raise GroundingMiss(f"unit {unit.id}: unparseable selection") from exc
    hits = [numbering[i] for i in picked if i in numbering]
    if not hits:
        raise GroundingMiss(f"unit {unit.id}: no valid sentence selected ({picked})")
    best_rank = min(rank for rank, _ in hits)
    indices = sorted({idx for rank, idx in hits if rank == best_rank})
    return SourceRef(retrieved[best_rank - 1], tuple(indices))


def ground_units(
    units: list[GuideUnit],
    doc: PaperDoc,
    gateway: Gateway,
    cfg: FingerprintConfig | None = None,
    notes: list | None = None,
) -> list[GuideUnit]:
    """Ground every unit lacking a source. Misses stay in the list, flagged."""
    cfg = cfg or FingerprintConfig()
    pending = [u for u in units if u.source is None]
    if not pending:
        return list(units)
    index = ParagraphIndex(doc, gateway)

    def run(unit: GuideUnit) -> tuple[GuideUnit, list[dict]]:
        local: list[dict] = []
        try:
            ref = ground(unit, doc, index, gateway, cfg, local)
        except GroundingMiss as exc:
            local.append(warning("ground", "grounding_miss", str(exc), unit_id=unit.id))
            return replace(unit, flags=[*unit.flags, "grounding_miss"]), local
        return replace(unit, source=ref), local

    grounded = {}
    for (unit, local) in gateway.map(run, pending):
        grounded[unit.id] = unit
        if notes is not None:
            notes.extend(local)
    return [grounded.get(u.id, u) if u.source is None else u for u in units]
