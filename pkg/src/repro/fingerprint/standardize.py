"""Standardization of guide units into atomic fact-scope criteria."""

from __future__ import annotations

import re

from .. import prompts
from ..errors import ParseFailure, SpanError
from ..llm.gateway import Gateway, ask
from ..llm.structured import extract_structured
from ..paper import PaperDoc
from .types import Criterion, FingerprintConfig, GuideUnit, warning

_SPAN_TAG_RE = re.compile(r"<(/?)(fact|scope)>", re.IGNORECASE)


def parse_fact_scope(rendered: str) -> tuple[str, str | None]:
    """Return the fact span and the optional scope span of a criterion string.

    Inner text is returned verbatim. Exactly one fact span and at most one
    scope span are allowed, and spans may not nest or overlap.
    """
    spans: dict[str, list[str]] = {"fact": [], "scope": []}
    open_tag: str | None = None
    open_end = 0
    for m in _SPAN_TAG_RE.finditer(rendered):
        closing, tag = m.group(1) == "/", m.group(2).lower()
        if not closing:
            if open_tag is not None:
                raise SpanError(f"<{tag}> opened inside <{open_tag}>: {rendered!r}")
            open_tag, open_end = tag, m.end()
        else:
            if open_tag != tag:
                raise SpanError(f"unexpected </{tag}>: {rendered!r}")
            spans[tag].append(rendered[open_end : m.start()])
            open_tag = None
    if open_tag is not None:
        raise SpanError(f"unclosed <{open_tag}>: {rendered!r}")
    if len(spans["fact"]) != 1:
        raise SpanError(f"expected exactly one fact span, found {len(spans['fact'])}: {rendered!r}")
    if len(spans["scope"]) > 1:
        raise SpanError(f"expected at most one scope span, found {len(spans['scope'])}: {rendered!r}")
    fact = spans["fact"][0]
    if not fact.strip():
        raise SpanError(f"empty fact span: {rendered!r}")
    scope = spans["scope"][0] if spans["scope"] else None
    if scope is not None and not scope.strip():
        scope = None
    return fact, scope


def _criterion_strings(reply: str) -> list:
    items = extract_structured(reply, "json_list")
    if items and all(not isinstance(i, (dict, str)) for i in items):
        raise ParseFailure("list holds neither objects nor strings", reply)
    return items


def criteria_from_items(items: list, unit: GuideUnit, notes: list | None = None) -> list[Criterion]:
    """Turn parsed ``{"criterion": ...}`` items into criteria; malformed entries are dropped."""
    out: list[Criterion] = []
    for pos, item in enumerate(items, start=1):
        rendered = item.get("criterion") if isinstance(item, dict) else item if isinstance(item, str) else None
        if not isinstance(rendered, str) or not rendered.strip():
            if notes is not None:
                notes.append(warning("standardize", "entry_rejected", f"entry {pos} has no criterion string", unit_id=unit.id))
            continue
        try:
            fact, scope = parse_fact_scope(rendered)
        except SpanError as exc:
            if notes is not None:
                notes.append(warning("standardize", "entry_rejected", str(exc), unit_id=unit.id))
            continue
        out.append(
            Criterion(
                id=f"{unit.id}.{len(out) + 1}",
                fact=fact,
                scope=scope,
                rendered=rendered,
                origin_guide_id=unit.id,
                source=unit.source,
            )
        )
    return out


def standardize(
    unit: GuideUnit,
    doc: PaperDoc | None,
    gateway: Gateway,
    cfg: FingerprintConfig | None = None,
    notes: list | None = None,
) -> list[Criterion]:
    cfg = cfg or FingerprintConfig()
    reference = doc.quote(unit.source.paragraph_id, unit.source.sentence_indices) if (doc is not None and unit.source) else None
    messages = [("system", prompts.STANDARDIZE_SYSTEM), ("user", prompts.standardize_user(unit.text, reference))]

    def on_reprompt(attempt: int, exc: ParseFailure) -> None:
        if notes is not None:
            notes.append(warning("standardize", "reprompt", str(exc), unit_id=unit.id, attempt=attempt))

    try:
        items = ask(gateway, "standardize", messages, _criterion_strings, max_reprompts=cfg.max_reprompts, on_reprompt=on_reprompt)
    except ParseFailure as exc:
        if notes is not None:
            notes.append(warning("standardize", "unit_skipped", str(exc), unit_id=unit.id))
        return []
    return criteria_from_items(items, unit, notes)
