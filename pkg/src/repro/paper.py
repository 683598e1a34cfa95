"""Markdown paper loading and segmentation.

A paper is split into paragraphs (blank-line separated, with fenced code and
display math kept whole) and every paragraph into 1-indexed sentences. Those
``(paragraph_id, sentence_index)`` coordinates are what grounding, criteria
and the audit trail refer to, so segmentation must be deterministic.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

from .errors import EmptyDocument

PROSE = "prose"
CODE_FENCE = "code_fence"
EQUATION_BLOCK = "equation_block"
HEADING = "heading"
KINDS = (PROSE, CODE_FENCE, EQUATION_BLOCK, HEADING)

# Tokens that end in a period but do not end a sentence. Compared lowercased,
# after stripping leading brackets/quotes.
ABBREVIATIONS = frozenset(
    {
        "e.g.", "i.e.", "eq.", "eqs.", "fig.", "figs.", "al.", "sec.", "secs.",
        "tab.", "cf.", "vs.", "resp.", "approx.", "ref.", "refs.", "no.",
        "dr.", "mr.", "ms.", "prof.", "viz.", "ca.",
    }
)

_TERMINALS = ".!?"
_CLOSERS = "\"')]}”’"
_OPENERS = "\"'([$\\“‘"

_HEADING_RE = re.compile(r"^ {0,3}(#{1,6})\s+(.*?)\s*#*\s*$")
_FENCE_RE = re.compile(r"^ {0,3}(`{3,}|~{3,})")
_BEGIN_ENV_RE = re.compile(r"^\s*\\begin\{(equation|align|gather|multline|eqnarray|displaymath)(\*?)\}")


@dataclass(frozen=True)
class Sentence:
    index: int
    text: str


@dataclass(frozen=True)
class Paragraph:
    id: int
    raw: str
    sentences: tuple[Sentence, ...]
    kind: str = PROSE

    def indexed(self) -> str:
        """Sentences rendered as ``[i]: text`` lines, the form prompts address."""
        return "\n".join(f"[{s.index}]: {s.text}" for s in self.sentences)

    def sentence(self, index: int) -> Sentence:
        if not 1 <= index <= len(self.sentences):
            raise IndexError(f"paragraph {self.id} has no sentence {index}")
        return self.sentences[index - 1]


@dataclass(frozen=True)
class PaperDoc:
    paragraphs: tuple[Paragraph, ...]
    title: str = ""
    source_path: str = ""

    def __len__(self) -> int:
        return len(self.paragraphs)

    def __iter__(self) -> Iterator[Paragraph]:
        return iter(self.paragraphs)

    def paragraph(self, pid: int) -> Paragraph:
        if not 0 <= pid < len(self.paragraphs):
            raise IndexError(f"no paragraph {pid}")
        return self.paragraphs[pid]

    def body(self) -> str:
        return "\n\n".join(p.raw for p in self.paragraphs)

    def valid_ref(self, paragraph_id: int, sentence_indices: list[int] | tuple[int, ...]) -> bool:
        if not 0 <= paragraph_id < len(self.paragraphs):
            return False
        n = len(self.paragraphs[paragraph_id].sentences)
        return all(1 <= i <= n for i in sentence_indices)

    def quote(self, paragraph_id: int, sentence_indices) -> str:
        p = self.paragraph(paragraph_id)
        return " ".join(p.sentence(i).text for i in sentence_indices)

    def to_dict(self) -> dict:
        return {
            "title": self.title,
            "source_path": self.source_path,
            "paragraphs": [
                {
                    "id": p.id,
                    "kind": p.kind,
                    "raw": p.raw,
                    "sentences": [{"index": s.index, "text": s.text} for s in p.sentences],
                }
                for p in self.paragraphs
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PaperDoc":
        paragraphs = tuple(
            Paragraph(
                id=p["id"],
                raw=p["raw"],
                kind=p["kind"],
                sentences=tuple(Sentence(s["index"], s["text"]) for s in p["sentences"]),
            )
            for p in data["paragraphs"]
        )
        return cls(paragraphs=paragraphs, title=data.get("title", ""), source_path=data.get("source_path", ""))


def normalize_ws(text: str) -> str:
    return " ".join(text.split())


def _is_abbreviation(text: str, dot: int) -> bool:
    start = dot
    while start > 0 and not text[start - 1].isspace():
        start -= 1
    token = text[start : dot + 1].lstrip(_OPENERS).lower()
    return token in ABBREVIATIONS


def sentence_spans(text: str) -> list[tuple[int, int]]:
    """Character spans ``[start, end)`` of the sentences in ``text``.

    Everything outside the spans is whitespace. A boundary is terminal
    punctuation (plus trailing closing quotes/brackets), then whitespace, then
    an uppercase letter, digit or an opening quote/bracket/math marker.
    """
    spans: list[tuple[int, int]] = []
    n = len(text)
    i = 0
    while i < n and text[i].isspace():
        i += 1
    start = i
    while i < n:
        ch = text[i]
        if ch in _TERMINALS:
            end = i + 1
            while end < n and (text[end] in _TERMINALS or text[end] in _CLOSERS):
                end += 1
            j = end
            while j < n and text[j].isspace():
                j += 1
            if j > end and j < n:
                nxt = text[j]
                starts_sentence = nxt.isupper() or nxt.isdigit() or nxt in _OPENERS
                if starts_sentence and not (ch == "." and _is_abbreviation(text, i)):
                    spans.append((start, end))
                    start = j
                    i = j
                    continue
            i = end
            continue
        i += 1
    tail_end = n
    while tail_end > start and text[tail_end - 1].isspace():
        tail_end -= 1
    if tail_end > start:
        spans.append((start, tail_end))
    return spans


def segment_sentences(paragraph_raw: str) -> list[Sentence]:
    """Split prose into 1-indexed sentences with whitespace collapsed."""
    return [
        Sentence(k, normalize_ws(paragraph_raw[a:b]))
        for k, (a, b) in enumerate(sentence_spans(paragraph_raw), start=1)
    ]


def _math_block_end(lines: list[str], i: int) -> int | None:
    """If a display-math block starts at ``lines[i]``, return its last line index."""
    stripped = lines[i].strip()
    if stripped.startswith("$$"):
        rest = stripped[2:]
        if "$$" in rest:
            return i
        for j in range(i + 1, len(lines)):
            if "$$" in lines[j]:
                return j
        return len(lines) - 1
    if stripped.startswith("\\["):
        if "\\]" in stripped[2:]:
            return i
        for j in range(i + 1, len(lines)):
            if "\\]" in lines[j]:
                return j
        return len(lines) - 1
    m = _BEGIN_ENV_RE.match(lines[i])
    if m:
        closing = f"\\end{{{m.group(1)}{m.group(2)}}}"
        for j in range(i, len(lines)):
            if closing in lines[j]:
                return j
        return len(lines) - 1
    return None


def _blocks(text: str) -> list[tuple[str, str]]:
    lines = text.replace("\r\n", "\n").replace("\r", "\n").split("\n")
    blocks: list[tuple[str, str]] = []
    prose: list[str] = []

    def flush() -> None:
        if prose:
            raw = "\n".join(prose).strip()
            if raw:
                blocks.append((PROSE, raw))
            prose.clear()

    i = 0
    while i < len(lines):
        line = lines[i]
        if not line.strip():
            flush()
            i += 1
            continue
        fence = _FENCE_RE.match(line)
        if fence:
            flush()
            marker = fence.group(1)
            j = i + 1
            while j < len(lines):
                close = lines[j].strip()
                if close.startswith(marker[0] * len(marker)) and not close.strip(marker[0]):
                    break
                j += 1
            end = min(j, len(lines) - 1)
            blocks.append((CODE_FENCE, "\n".join(lines[i : end + 1]).strip("\n")))
            i = end + 1
            continue
        math_end = _math_block_end(lines, i)
        if math_end is not None:
            flush()
            blocks.append((EQUATION_BLOCK, "\n".join(lines[i : math_end + 1]).strip()))
            i = math_end + 1
            continue
        if _HEADING_RE.match(line):
            flush()
            blocks.append((HEADING, line.strip()))
            i += 1
            continue
        prose.append(line)
        i += 1
    flush()
    return blocks


def load_paper(markdown_text: str, source_path: str = "") -> PaperDoc:
    """Segment a Markdown paper into paragraphs and sentences."""
    if not markdown_text or not markdown_text.strip():
        raise EmptyDocument("paper has no content")
    paragraphs: list[Paragraph] = []
    title = ""
    fallback_title = ""
    for kind, raw in _blocks(markdown_text):
        if kind == PROSE:
            sentences = tuple(segment_sentences(raw))
        elif kind == HEADING:
            m = _HEADING_RE.match(raw)
            heading_text = normalize_ws(m.group(2)) if m else normalize_ws(raw.lstrip("#"))
            if not heading_text:
                continue
            if not title and m and len(m.group(1)) == 1:
                title = heading_text
            fallback_title = fallback_title or heading_text
            sentences = (Sentence(1, heading_text),)
        else:
            sentences = (Sentence(1, raw),)
        paragraphs.append(Paragraph(id=len(paragraphs), raw=raw, sentences=sentences, kind=kind))
    if not paragraphs:
        raise EmptyDocument("paper has no content")
    return PaperDoc(paragraphs=tuple(paragraphs), title=title or fallback_title, source_path=source_path)


def read_paper(path: str | Path) -> PaperDoc:
    path = Path(path)
    return load_paper(path.read_text(encoding="utf-8"), source_path=str(path))


_PRIORITY_HEADINGS = re.compile(
    r"method|approach|model|architecture|algorithm|training|implementation|experiment|setup|setting|detail|loss|objective|data",
    re.IGNORECASE,
)


def sections(doc: PaperDoc) -> list[tuple[str, list[Paragraph]]]:
    """Group paragraphs under their nearest preceding heading."""
    out: list[tuple[str, list[Paragraph]]] = [("", [])]
    for p in doc.paragraphs:
        if p.kind == HEADING:
            out.append((p.sentences[0].text, [p]))
        else:
            out[-1][1].append(p)
    return [s for s in out if s[1]]


def paper_context(doc: PaperDoc, max_chars: int) -> str:
    """Paper text cut to ``max_chars``, methods-like sections kept first.

    Selected paragraphs are emitted in document order; truncation happens at
    paragraph granularity.
    """
    if max_chars <= 0:
        return ""
    grouped = sections(doc)
    ranked = sorted(
        range(len(grouped)),
        key=lambda k: (0 if _PRIORITY_HEADINGS.search(grouped[k][0]) else 1, k),
    )
    keep: set[int] = set()
    used = 0
    for k in ranked:
        for p in grouped[k][1]:
            cost = len(p.raw) + 2
            if used + cost > max_chars:
                break
            keep.add(p.id)
            used += cost
    return "\n\n".join(p.raw for p in doc.paragraphs if p.id in keep)
