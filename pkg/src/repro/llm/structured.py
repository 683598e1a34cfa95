"""Pull structured values out of free-form model replies.

Models wrap JSON in prose and code fences, sometimes leave LaTeX backslashes
unescaped, and format plans loosely. Each extractor returns the first
well-formed candidate of the requested kind or raises :class:`ParseFailure`
carrying the raw text so the caller can decide whether to re-prompt.
"""

from __future__ import annotations

import json
import re
from typing import Any, Iterator

from ..errors import ParseFailure

KINDS = ("int_array", "json_list", "json_object", "plan_document", "code_files")

_FENCE_RE = re.compile(r"^[ \t]*(`{3,}|~{3,})[ \t]*([\w+.-]*)[^\n]*\n(.*?)^[ \t]*\1[ \t]*$", re.M | re.S)
# a backslash followed by 2+ letters is LaTeX (\theta, \hat), never a JSON escape
_LATEX_ESCAPE_RE = re.compile(r'(?<!\\)((?:\\\\)*)\\(?=[A-Za-z]{2,}|[{}_^$%&#, ;!|()\[\]])')
_DECODER = json.JSONDecoder()


def fenced_blocks(text: str) -> list[tuple[str, str]]:
    """All fenced code blocks as ``(language, body)`` in order of appearance."""
    return [(m.group(2).lower(), m.group(3)) for m in _FENCE_RE.finditer(text)]


def _repair(text: str) -> str:
    return _LATEX_ESCAPE_RE.sub(lambda m: m.group(1) + "\\\\", text)


def _scan(text: str, opener: str) -> Iterator[Any]:
    pos = text.find(opener)
    while pos != -1:
        try:
            value, _ = _DECODER.raw_decode(text, pos)
        except json.JSONDecodeError:
            try:
                value, _ = _DECODER.raw_decode(_repair(text[pos:]), 0)
            except json.JSONDecodeError:
                value = _NOTHING
        if value is not _NOTHING:
            yield value
        pos = text.find(opener, pos + 1)


_NOTHING = object()


def _json_candidates(text: str, opener: str) -> Iterator[Any]:
    for _, body in fenced_blocks(text):
        yield from _scan(body, opener)
    yield from _scan(text, opener)


def _is_int_list(value: Any) -> bool:
    return isinstance(value, list) and all(isinstance(v, int) and not isinstance(v, bool) for v in value)


def extract_structured(text: str, kind: str) -> Any:
    if kind == "int_array":
        for value in _json_candidates(text, "["):
            if _is_int_list(value):
                return value
        raise ParseFailure("no JSON array of integers found", text)
    if kind == "json_list":
        for value in _json_candidates(text, "["):
            if isinstance(value, list):
                return value
        raise ParseFailure("no JSON list found", text)
    if kind == "json_object":
        for value in _json_candidates(text, "{"):
            if isinstance(value, dict):
                return value
        raise ParseFailure("no JSON object found", text)
    if kind == "plan_document":
        return parse_plan_document(text)
    if kind == "code_files":
        return parse_code_files(text)
    raise ValueError(f"unknown structured kind {kind!r}")


# ---------------------------------------------------------------------------
# revision plans

_CONFIG_HEAD_RE = re.compile(r"^[ \t]*#{1,6}[ \t]*\**CONFIG[_ ]PLAN\b.*$", re.I | re.M)
_CODE_HEAD_RE = re.compile(r"^[ \t]*#{1,6}[ \t]*\**CODE[_ ]PLAN\b.*$", re.I | re.M)
_FILE_HEAD_RE = re.compile(r"^[ \t]*#{1,6}[ \t]*\**Code[ \t]*:[ \t]*(.+?)[ \t]*$", re.I | re.M)
_ITEM_RE = re.compile(r"^\s*(?:\d+[.)]|[-*•])\s+(.*)$")
_NO_CHANGE_RE = re.compile(r"\bno\s+changes?\b", re.I)


def clean_filename(raw: str) -> str:
    name = raw.strip().strip("*").rstrip(":").strip()
    if name.startswith("[") and name.endswith("]"):
        name = name[1:-1]
    return name.strip().strip("`'\"").rstrip(":").strip()


def parse_steps(section: str) -> list[str]:
    """Numbered or bulleted items; unnumbered lines continue the previous item."""
    steps: list[str] = []
    loose: list[str] = []
    for line in section.splitlines():
        if not line.strip():
            continue
        m = _ITEM_RE.match(line)
        if m:
            steps.append(m.group(1).strip())
        elif steps:
            steps[-1] = f"{steps[-1]} {line.strip()}"
        else:
            loose.append(line.strip())
    if not steps and loose:
        text = " ".join(loose)
        return [] if _NO_CHANGE_RE.search(text) else [text]
    return steps


def parse_plan_document(text: str) -> dict:
    config_m = _CONFIG_HEAD_RE.search(text)
    code_m = _CODE_HEAD_RE.search(text)
    if not config_m or not code_m:
        missing = [h for h, m in (("### CONFIG_PLAN", config_m), ("### CODE_PLAN", code_m)) if not m]
        raise ParseFailure(f"plan lacks heading(s): {', '.join(missing)}", text)
    if config_m.start() < code_m.start():
        config_text = text[config_m.end() : code_m.start()]
        code_text = text[code_m.end() :]
    else:
        code_text = text[code_m.end() : config_m.start()]
        config_text = text[config_m.end() :]

    file_plans: dict[str, list[str]] = {}
    heads = list(_FILE_HEAD_RE.finditer(code_text))
    for k, m in enumerate(heads):
        end = heads[k + 1].start() if k + 1 < len(heads) else len(code_text)
        name = clean_filename(m.group(1))
        steps = parse_steps(code_text[m.end() : end])
        if name and steps:
            file_plans.setdefault(name, []).extend(steps)
    return {
        "config_steps": parse_steps(config_text),
        "file_plans": [(name, steps) for name, steps in file_plans.items()],
    }


# ---------------------------------------------------------------------------
# multi-file code replies


def parse_code_files(text: str) -> dict[str, str]:
    """``## Code: name`` headings, each followed by one fenced block."""
    files: dict[str, str] = {}
    heads = list(_FILE_HEAD_RE.finditer(text))
    for k, m in enumerate(heads):
        end = heads[k + 1].start() if k + 1 < len(heads) else len(text)
        blocks = fenced_blocks(text[m.end() : end])
        name = clean_filename(m.group(1))
        if name and blocks and name not in files:
            files[name] = blocks[0][1]
    if not files:
        raise ParseFailure("no '## Code: <file>' sections with fenced code found", text)
    return files


def extract_code_block(text: str, language: str = "python") -> str:
    """The first fenced block tagged ``language`` (else the first fence, else the text)."""
    blocks = fenced_blocks(text)
    for lang, body in blocks:
        if lang in (language, language[:2]):
            return body
    if blocks:
        return blocks[0][1]
    stripped = text.strip()
    if not stripped:
        raise ParseFailure("empty reply where code was expected", text)
    return stripped + "\n"
