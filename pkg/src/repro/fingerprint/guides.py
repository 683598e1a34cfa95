"""Three-level guide extraction: framework, configuration, exhaustive scan."""

from __future__ import annotations

import logging
from typing import Any

from .. import prompts
from ..errors import ParseFailure, StageFailure
from ..llm.gateway import Gateway, ask
from ..llm.structured import extract_structured
from ..paper import PROSE, PaperDoc
from .types import CONFIGURATION, EXHAUSTIVE, FRAMEWORK, FingerprintConfig, GuideUnit, SourceRef, warning

logger = logging.getLogger(__name__)


def _reprompt_logger(notes: list | None, stage: str, where: str):
    def log(attempt: int, exc: ParseFailure) -> None:
        if notes is not None:
            notes.append(warning(stage, "reprompt", str(exc), where=where, attempt=attempt))

    return log


def _unit_texts(reply: str) -> list[str]:
    items = extract_structured(reply, "json_list")
    texts = []
    for item in items:
        if isinstance(item, str):
            text = item
        elif isinstance(item, dict):
            text = next((str(item[k]) for k in ("text", "unit", "content", "sentence") if item.get(k)), "")
        else:
            raise ParseFailure(f"unexpected list item {item!r}", reply)
        if text.strip():
            texts.append(text.strip())
    return texts


def _config_texts(reply: str) -> list[str]:
    items = extract_structured(reply, "json_list")
    texts = []
    for item in items:
        if isinstance(item, str):
            text = item.strip()
        elif isinstance(item, dict):
            name = str(item.get("name") or "").strip()
            phrase = str(item.get("phrase") or item.get("value") or item.get("text") or "").strip()
            text = f"{name} = {phrase}" if name and phrase else (name or phrase)
        else:
            raise ParseFailure(f"unexpected list item {item!r}", reply)
        if text:
            texts.append(text)
    return texts


def extract_framework_guides(
    doc: PaperDoc,
    gateway: Gateway,
    cfg: FingerprintConfig | None = None,
    notes: list | None = None,
) -> list[GuideUnit]:
    """One prompt per aspect; units keep the model's wording verbatim."""
    cfg = cfg or FingerprintConfig()
    paper_text = doc.body()[: cfg.paper_context_chars]

    def run(aspect: str) -> tuple[list[str], list[dict]]:
        local: list[dict] = []
        messages = [("system", prompts.FRAMEWORK_SYSTEM), ("user", prompts.framework_user(aspect, paper_text))]
        try:
            texts = ask(gateway, "guide_extract", messages, _unit_texts, max_reprompts=cfg.max_reprompts,
                        on_reprompt=_reprompt_logger(local, FRAMEWORK, aspect))
        except ParseFailure as exc:
            raise StageFailure(FRAMEWORK, f"aspect {aspect}: {exc}") from exc
        return texts, local

    units: list[GuideUnit] = []
    for aspect, (texts, local) in zip(prompts.ASPECTS, gateway.map(run, prompts.ASPECTS)):
        if notes is not None:
            notes.extend(local)
        units.extend(
            GuideUnit(id=f"fw-{aspect}-{k}", level=FRAMEWORK, text=t, aspect=aspect)
            for k, t in enumerate(texts, start=1)
        )
    return units


def extract_configuration_guides(
    doc: PaperDoc,
    gateway: Gateway,
    cfg: FingerprintConfig | None = None,
    notes: list | None = None,
) -> list[GuideUnit]:
    cfg = cfg or FingerprintConfig()
    messages = [
        ("system", prompts.CONFIGURATION_SYSTEM),
        ("user", prompts.configuration_user(doc.body()[: cfg.paper_context_chars])),
    ]
    try:
        texts = ask(gateway, "guide_extract", messages, _config_texts, max_reprompts=cfg.max_reprompts,
                    on_reprompt=_reprompt_logger(notes, CONFIGURATION, "configuration"))
    except ParseFailure as exc:
        raise StageFailure(CONFIGURATION, str(exc)) from exc
    # duplicates are kept on purpose; dedup happens after standardization
    return [GuideUnit(id=f"cfg-{k}", level=CONFIGURATION, text=t) for k, t in enumerate(texts, start=1)]


def exhaustive_scan(
    doc: PaperDoc,
    gateway: Gateway,
    window: int | None = None,
    cfg: FingerprintConfig | None = None,
    notes: list | None = None,
) -> list[GuideUnit]:
    """Paragraph-by-paragraph sentence selection with a sliding context window.

    Every selected sentence becomes one unit grounded at itself.
    """
    cfg = cfg or FingerprintConfig()
    window = cfg.context_window if window is None else window
    targets = [p for p in doc.paragraphs if p.kind == PROSE and p.sentences]

    def run(paragraph) -> tuple[list[GuideUnit], list[dict]]:
        local: list[dict] = []
        context = [q.raw for q in doc.paragraphs[max(0, paragraph.id - window) : paragraph.id]] if window > 0 else []
        messages = [
            ("system", prompts.GUIDE_EXTRACTION_SYSTEM),
            ("user", prompts.guide_extraction_user(context, paragraph.indexed())),
        ]
        try:
            picked = ask(gateway, "guide_extract", messages, "int_array", max_reprompts=cfg.max_reprompts,
                         on_reprompt=_reprompt_logger(local, EXHAUSTIVE, f"paragraph {paragraph.id}"))
        except ParseFailure as exc:
            local.append(warning(EXHAUSTIVE, "unparseable", str(exc), paragraph_id=paragraph.id))
            return [], local
        n = len(paragraph.sentences)
        valid = sorted({i for i in picked if 1 <= i <= n})
        invalid = [i for i in picked if not 1 <= i <= n]
        if invalid and not valid:
            local.append(warning(EXHAUSTIVE, "paragraph_skipped", f"all indices out of range: {invalid}", paragraph_id=paragraph.id))
        elif invalid:
            local.append(warning(EXHAUSTIVE, "index_dropped", f"out-of-range indices dropped: {invalid}", paragraph_id=paragraph.id))
        units = [
            GuideUnit(
                id=f"ex-p{paragraph.id}-s{i}",
                level=EXHAUSTIVE,
                text=paragraph.sentence(i).text,
                source=SourceRef(paragraph.id, (i,)),
            )
            for i in valid
        ]
        return units, local

    units: list[GuideUnit] = []
    for found, local in gateway.map(run, targets):
        units.extend(found)
        if notes is not None:
            notes.extend(local)
    return units


def guide_summary(units: list[GuideUnit]) -> dict[str, Any]:
    out: dict[str, Any] = {level: 0 for level in (FRAMEWORK, CONFIGURATION, EXHAUSTIVE)}
    for u in units:
        out[u.level] += 1
    return out
