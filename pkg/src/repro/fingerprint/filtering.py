"""Cluster-based de-duplication and model-driven semantic filtering."""

from __future__ import annotations

import unicodedata
from typing import Sequence

import numpy as np

from .. import prompts
from ..errors import ParseFailure
from ..llm.embed import cosine_matrix
from ..llm.gateway import Gateway, ask
from ..llm.structured import extract_structured
from .types import Cluster, Criterion, FingerprintConfig, warning


def normalize_key(text: str | None) -> str:
    """Lowercase, drop punctuation, collapse whitespace."""
    if not text:
        return ""
    kept = "".join(" " if unicodedata.category(ch).startswith("P") else ch for ch in text.lower())
    return " ".join(kept.split())


def fact_embedding_text(c: Criterion) -> str:
    # identical normalized facts must embed identically so they always share a cluster
    return normalize_key(c.fact) or c.fact.strip() or c.fact


def connected_components(similarity: np.ndarray, threshold: float) -> list[list[int]]:
    """Single-linkage components of the graph ``similarity >= threshold``.

    Components are sorted by their smallest member, members ascending.
    """
    n = len(similarity)
    parent = list(range(n))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    rows, cols = np.nonzero(np.triu(similarity >= threshold, k=1))
    for a, b in zip(rows.tolist(), cols.tolist()):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    return sorted(groups.values(), key=lambda g: g[0])


def dedup(
    criteria: Sequence[Criterion],
    threshold: float,
    vectors: np.ndarray,
) -> tuple[list[Cluster], list[Criterion]]:
    """Cluster by fact embedding, then collapse exact (fact, scope) duplicates.

    ``vectors[i]`` is the fact embedding of ``criteria[i]``. Within a cluster
    the earliest criterion of each normalized (fact, scope) pair survives;
    survivors keep input order.
    """
    criteria = list(criteria)
    if not criteria:
        return [], []
    vectors = np.asarray(vectors, dtype=float)
    if len(vectors) != len(criteria):
        raise ValueError("one embedding per criterion is required")
    groups = connected_components(cosine_matrix(vectors), threshold)
    keep: set[int] = set()
    for group in groups:
        seen: set[tuple[str, str]] = set()
        for i in group:
            key = (normalize_key(criteria[i].fact), normalize_key(criteria[i].scope))
            if key not in seen:
                seen.add(key)
                keep.add(i)
    clusters = [Cluster(tuple(criteria[i].id for i in g), threshold) for g in groups]
    return clusters, [c for i, c in enumerate(criteria) if i in keep]


def _selection(reply: str) -> dict:
    obj = extract_structured(reply, "json_object")
    picked = obj.get("selected_indices")
    if not isinstance(picked, list) or not all(isinstance(i, int) and not isinstance(i, bool) for i in picked):
        raise ParseFailure("selected_indices must be a list of integers", reply)
    return obj


def semantic_filter(
    members: Sequence[Criterion],
    gateway: Gateway,
    cfg: FingerprintConfig | None = None,
    notes: list | None = None,
) -> list[str]:
    """Ids of the cluster members the model keeps (at most ``filter_cap``).

    Singletons pass through without a model call. Returned ids follow member
    order.
    """
    cfg = cfg or FingerprintConfig()
    members = list(members)
    if len(members) < 2:
        return [m.id for m in members]
    messages = [("system", prompts.FILTER_SYSTEM), ("user", prompts.filter_user([m.rendered for m in members]))]
    where = members[0].id

    def note(kind: str, detail: str) -> None:
        if notes is not None:
            notes.append(warning("filter", kind, detail, cluster_head=where))

    try:
        obj = ask(gateway, "filter", messages, _selection, max_reprompts=cfg.max_reprompts,
                  on_reprompt=lambda attempt, exc: note("reprompt", str(exc)))
        picked = obj["selected_indices"]
    except ParseFailure as exc:
        note("keep_first", f"unparseable selection: {exc}")
        return [members[0].id]

    chosen: list[int] = []
    bad = []
    for i in picked:
        if not 1 <= i <= len(members):
            bad.append(i)
        elif i not in chosen:
            chosen.append(i)
    if not chosen:
        note("keep_first", f"empty or out-of-range selection {picked}")
        return [members[0].id]
    if bad:
        note("index_dropped", f"out-of-range indices dropped: {bad}")
    if len(chosen) > cfg.filter_cap:
        note("cap_enforced", f"{len(chosen)} selected, keeping the first {cfg.filter_cap}")
        chosen = chosen[: cfg.filter_cap]
    keep = set(chosen)
    return [m.id for k, m in enumerate(members, start=1) if k in keep]
