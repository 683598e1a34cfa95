"""Markdown run report built from the artifacts in a run directory."""

from __future__ import annotations

import json
from pathlib import Path

STAGE_ORDER = ("paper", "fingerprint", "codegen", "reflect", "score")
STAGE_COUNT_LABELS = (
    ("guides", "Guide units"),
    ("standardized", "Standardized criteria"),
    ("after_dedup", "After de-duplication"),
    ("final", "Final fingerprint"),
)
FLAGGED_KINDS = ("grounding_miss", "carry_forward", "unit_skipped", "keep_first", "cap_enforced", "batch_failed", "batch_unmatched", "file_ignored")


def _load(path: Path):
    return json.loads(path.read_text(encoding="utf-8")) if path.exists() else None


def collect_warnings(run_dir: Path) -> list[dict]:
    out: list[dict] = []
    for w in _load(run_dir / "fingerprint_warnings.json") or []:
        if w.get("kind") in FLAGGED_KINDS:
            out.append(w)
    fill = _load(run_dir / "fill_log.json") or {}
    for t in fill.get("targets", []):
        if t.get("outcome") == "failed":
            out.append({"stage": "fill", "kind": "fill_failed", "detail": f"{t['symbol']}: {t.get('detail', '')}"})
    trace = _load(run_dir / "loop_trace.json") or {}
    for r in trace.get("rounds", []):
        for w in r.get("warnings", []):
            out.append({**w, "round": r["round"]})
    if trace.get("error"):
        out.append({"stage": "reflect", "kind": "loop_error", "detail": trace["error"]})
    return out


def render_report(run_dir: str | Path) -> str:
    run_dir = Path(run_dir)
    manifest = _load(run_dir / "manifest.json") or {}
    paper = _load(run_dir / "paper_doc.json") or {}
    lines = [f"# Run report: {paper.get('title') or 'untitled paper'}", ""]

    lines += ["## Stages", ""]
    recorded = manifest.get("stages", {})
    for name in STAGE_ORDER:
        if name in recorded:
            lines.append(f"- {name}: {recorded[name].get('status', '?')}")
    lines.append("")

    fp = _load(run_dir / "fingerprint.json")
    if fp:
        counts = fp.get("stage_counts", {})
        lines += ["## Fingerprint stage counts", "", "| Stage | Count |", "|---|---|"]
        lines += [f"| {label} | {counts.get(key, '-')} |" for key, label in STAGE_COUNT_LABELS]
        lines.append("")

    costs = _load(run_dir / "costs.json")
    if costs:
        lines += ["## Cost ledger", "", "| Stage | Purpose | Calls | Prompt tokens | Completion tokens | Cost |", "|---|---|---|---|---|---|"]
        recorded_costs = costs.get("stages", {})
        for stage in sorted(recorded_costs, key=lambda s: STAGE_ORDER.index(s) if s in STAGE_ORDER else len(STAGE_ORDER)):
            for purpose, t in recorded_costs[stage].get("per_purpose", {}).items():
                lines.append(f"| {stage} | {purpose} | {t['calls']} | {t['prompt_tokens']} | {t['completion_tokens']} | {t['cost']:.4f} |")
        lines += ["", f"Total: {costs.get('calls', 0)} calls, cost {costs.get('total_cost', 0.0):.4f}", ""]

    trace = _load(run_dir / "loop_trace.json")
    if trace:
        curve = trace.get("pass_curve", [])
        best = trace.get("best_round")
        total = trace["rounds"][0].get("criteria", "?") if trace.get("rounds") else "?"
        lines += ["## Iteration curve", "", "| Round | Passed | Criteria |", "|---|---|---|"]
        for k, passed in enumerate(curve, start=1):
            mark = " (best)" if k == best else ""
            lines.append(f"| {k}{mark} | {passed} | {total} |")
        lines += ["", f"Terminal reason: {trace.get('terminal_reason')}", ""]
        if best is not None and best != len(curve):
            lines += [f"Note: round {best} had the highest pass count; the final workspace comes from the last round.", ""]

    score = _load(run_dir / "score_report.json")
    if score:
        lines += ["## Score", "", f"- PR_root: {100 * score['pr_root']:.2f}%", f"- PR_leaf: {100 * score['pr_leaf']:.2f}%"]
        if score.get("match"):
            m = score["match"]
            lines.append(f"- Matcher recall {100 * m['recall']:.1f}%, precision {100 * m['precision']:.1f}%")
        lines.append("")

    warnings = collect_warnings(run_dir)
    lines += ["## Warnings", ""]
    if warnings:
        for w in warnings:
            where = f" (round {w['round']})" if "round" in w else ""
            lines.append(f"- [{w.get('stage')}/{w.get('kind')}]{where} {w.get('detail', '')}")
    else:
        lines.append("None.")
    return "\n".join(lines).rstrip() + "\n"
