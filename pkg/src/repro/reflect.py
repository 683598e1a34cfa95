"""Verify every criterion, plan revisions from failures, apply them, repeat."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

from . import prompts
from .codegen import CONFIG_FILE, Workspace, check_relative_path
from .errors import GatewayError, ParseFailure, ReplayMiss, StageFailure
from .fingerprint.types import Criterion, Fingerprint
from .llm.gateway import Gateway, ask
from .llm.structured import parse_code_files, parse_plan_document

logger = logging.getLogger(__name__)

ALL_PASS = "all_pass"
MAX_ITERATIONS = "max_iterations"
UNPARSEABLE = "verification unparseable"

_SECTION_RE = re.compile(r"^[ \t]*#{1,6}[ \t]*\**[ \t]*(Expected Implementation|Actual Findings|Verification Result)\b[^\n]*$", re.I | re.M)
_SCORE_RE = re.compile(r"\bscore\**\s*[:=]\s*\**\s*([01])\b", re.I)


@dataclass
class Verdict:
    criterion_id: str
    expected: str
    findings: str
    reasoning: str
    score: int
    iteration: int

    def __post_init__(self) -> None:
        if self.score not in (0, 1):
            raise ValueError(f"score must be 0 or 1, got {self.score!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Verdict":
        return cls(**d)


@dataclass
class RevisionPlan:
    config_steps: list[str] = field(default_factory=list)
    file_plans: list[tuple[str, list[str]]] = field(default_factory=list)
    warnings: list[dict] = field(default_factory=list)

    def __post_init__(self) -> None:
        for name, _ in self.file_plans:
            if not name:
                raise ValueError("file plan with an empty path")

    @property
    def empty(self) -> bool:
        return not self.config_steps and not any(steps for _, steps in self.file_plans)

    def files(self) -> list[str]:
        return [name for name, _ in self.file_plans]

    def render(self) -> str:
        lines = ["### CONFIG_PLAN"]
        lines += [f"{k}. {s}" for k, s in enumerate(self.config_steps, start=1)] or ["No changes needed for config.yaml"]
        lines += ["", "### CODE_PLAN"]
        for name, steps in self.file_plans:
            lines.append(f"## Code: [{name}]")
            lines += [f"{k}. {s}" for k, s in enumerate(steps, start=1)]
            lines.append("")
        return "\n".join(lines).rstrip() + "\n"

    def to_dict(self) -> dict:
        return {
            "config_steps": list(self.config_steps),
            "file_plans": [[name, list(steps)] for name, steps in self.file_plans],
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RevisionPlan":
        return cls(list(d["config_steps"]), [(n, list(s)) for n, s in d["file_plans"]], list(d.get("warnings", [])))


@dataclass
class LoopConfig:
    max_iterations: int = 4
    verify_parallelism: int = 8
    feedback_batch_size: int = 40
    paper_context_chars: int = 60000
    max_reprompts: int = 2

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.feedback_batch_size < 1:
            raise ValueError("feedback_batch_size must be at least 1")

    @classmethod
    def from_mapping(cls, m: dict | None) -> "LoopConfig":
        m = m or {}
        return cls(**{k: m[k] for k in cls.__dataclass_fields__ if k in m})


@dataclass
class LoopTrace:
    rounds: list[dict] = field(default_factory=list)
    terminal_reason: str = ""
    error: str | None = None

    @property
    def pass_curve(self) -> list[int]:
        return [r["pass_count"] for r in self.rounds]

    @property
    def best_round(self) -> int | None:
        """1-based round with the highest pass count (earliest on ties)."""
        if not self.rounds:
            return None
        best = max(self.pass_curve)
        return self.pass_curve.index(best) + 1

    def to_dict(self) -> dict:
        return {
            "rounds": self.rounds,
            "terminal_reason": self.terminal_reason,
            "error": self.error,
            "pass_curve": self.pass_curve,
            "best_round": self.best_round,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LoopTrace":
        return cls(list(d["rounds"]), d["terminal_reason"], d.get("error"))


# ---------------------------------------------------------------------------
# verification


def _section_texts(reply: str) -> dict[str, str]:
    heads = list(_SECTION_RE.finditer(reply))
    out: dict[str, str] = {}
    for k, m in enumerate(heads):
        end = heads[k + 1].start() if k + 1 < len(heads) else len(reply)
        key = m.group(1).lower()
        out.setdefault(key, reply[m.end() : end].strip())
    return out


def parse_verification(reply: str) -> tuple[str, str, str, int]:
    """(expected, findings, reasoning, score) from a three-section verifier reply."""
    sections = _section_texts(reply)
    missing = [h for h in ("expected implementation", "actual findings", "verification result") if not sections.get(h)]
    if missing:
        raise ParseFailure(f"verification lacks section(s): {missing}", reply)
    result = sections["verification result"]
    m = _SCORE_RE.search(result) or _SCORE_RE.search(reply)
    if not m:
        raise ParseFailure("verification has no 'score: 0|1' line", reply)
    reasoning = _SCORE_RE.sub("", result, count=1).strip(" \n*:-") or result
    return sections["expected implementation"], sections["actual findings"], reasoning, int(m.group(1))


def verify_criterion(
    workspace: Workspace,
    criterion: Criterion,
    gateway: Gateway,
    *,
    paper_text: str = "",
    iteration: int = 1,
    max_reprompts: int = 2,
    workspace_text: str | None = None,
) -> Verdict:
    """Judge one criterion. Unparseable output or a gateway error scores 0."""
    if not workspace.files and not workspace.config_doc:
        raise ValueError("cannot verify an empty workspace")
    text = workspace_text if workspace_text is not None else workspace.render()
    messages = [("system", prompts.VERIFY_SYSTEM), ("user", prompts.verify_user(paper_text, text, criterion.rendered))]
    try:
        expected, findings, reasoning, score = ask(gateway, "verify", messages, parse_verification, max_reprompts=max_reprompts)
    except ReplayMiss:
        raise
    except (ParseFailure, GatewayError) as exc:
        logger.warning("verification of %s failed closed: %s", criterion.id, exc)
        return Verdict(criterion.id, criterion.plain, UNPARSEABLE, str(exc).splitlines()[0] if str(exc) else type(exc).__name__, 0, iteration)
    return Verdict(criterion.id, expected, findings, reasoning, score, iteration)


def verify_all(
    workspace: Workspace,
    fingerprint: Fingerprint | Sequence[Criterion],
    gateway: Gateway,
    cfg: LoopConfig | None = None,
    *,
    paper_text: str = "",
    iteration: int = 1,
) -> list[Verdict]:
    """One verdict per criterion, in fingerprint order."""
    cfg = cfg or LoopConfig()
    criteria = list(fingerprint.criteria if isinstance(fingerprint, Fingerprint) else fingerprint)
    text = workspace.render()
    return gateway.map(
        lambda c: verify_criterion(
            workspace, c, gateway, paper_text=paper_text, iteration=iteration,
            max_reprompts=cfg.max_reprompts, workspace_text=text,
        ),
        criteria,
        parallelism=cfg.verify_parallelism,
    )


# ---------------------------------------------------------------------------
# planning


def render_feedback(verdicts: Sequence[Verdict], criteria: dict[str, Criterion]) -> str:
    blocks = []
    for k, v in enumerate(verdicts, start=1):
        c = criteria.get(v.criterion_id)
        blocks.append(
            f"{k}. Requirement: {c.rendered if c else v.criterion_id}\n"
            f"   Expected: {v.expected}\n"
            f"   Findings: {v.findings}\n"
            f"   Result: score {v.score}. {v.reasoning}"
        )
    return "\n\n".join(blocks)


def plan_revision(
    verdicts: Sequence[Verdict],
    workspace: Workspace,
    gateway: Gateway,
    cfg: LoopConfig | None = None,
    *,
    criteria: Sequence[Criterion] = (),
) -> RevisionPlan:
    """Merge plans for failing verdicts, batched ``feedback_batch_size`` at a time."""
    cfg = cfg or LoopConfig()
    failing = [v for v in verdicts if v.score == 0]
    if not failing:
        return RevisionPlan()
    by_id = {c.id: c for c in criteria}
    text = workspace.render()
    plan = RevisionPlan()
    merged: dict[str, list[str]] = {}
    batches = [failing[i : i + cfg.feedback_batch_size] for i in range(0, len(failing), cfg.feedback_batch_size)]
    failures = 0
    for b, batch in enumerate(batches, start=1):
        messages = [("system", prompts.PLAN_SYSTEM), ("user", prompts.plan_user(render_feedback(batch, by_id), text))]
        try:
            parsed = ask(gateway, "plan", messages, parse_plan_document, max_reprompts=cfg.max_reprompts)
        except ParseFailure as exc:
            failures += 1
            plan.warnings.append({"stage": "plan", "kind": "batch_failed", "detail": str(exc).splitlines()[0], "batch": b})
            continue
        plan.config_steps.extend(parsed["config_steps"])
        for name, steps in parsed["file_plans"]:
            merged.setdefault(name, []).extend(steps)
    if failures == len(batches):
        raise StageFailure("plan", f"all {failures} planner batch(es) unparseable")
    plan.file_plans = list(merged.items())
    return plan


# ---------------------------------------------------------------------------
# editing


def _safe_name(name: str) -> bool:
    try:
        check_relative_path(name)
    except ValueError:
        return False
    return True


def apply_revision(
    workspace: Workspace,
    plan: RevisionPlan,
    gateway: Gateway,
    cfg: LoopConfig | None = None,
    *,
    paper_text: str = "",
) -> tuple[Workspace, list[dict]]:
    """Ask the editor for every file revised per ``plan``; returns (workspace, warnings).

    Original files missing from the reply trigger a re-prompt and are carried
    forward unchanged if still missing. New files are accepted only when the
    plan names them.
    """
    cfg = cfg or LoopConfig()
    originals = list(workspace.files)
    messages = [("system", prompts.REFINE_SYSTEM), ("user", prompts.refine_user(paper_text, workspace.render(), plan.render()))]
    warnings: list[dict] = []
    last_files: dict[str, str] = {}

    def parse(reply: str) -> dict[str, str]:
        nonlocal last_files
        files = parse_code_files(reply)
        last_files = files
        missing = [n for n in originals if n not in files]
        if missing:
            raise ParseFailure(f"reply omits file(s) {missing}; return every file in full", reply)
        return files

    try:
        files = ask(gateway, "refine", messages, parse, max_reprompts=cfg.max_reprompts)
    except ParseFailure as exc:
        if not last_files:
            raise StageFailure("apply", str(exc).splitlines()[0]) from exc
        files = last_files
        for name in originals:
            if name not in files:
                warnings.append({"stage": "apply", "kind": "carry_forward", "detail": f"{name} kept unchanged", "file": name})

    planned = set(plan.files())
    out = workspace.copy()
    for name, code in files.items():
        if name == CONFIG_FILE:
            out.config_doc = code
        elif name in workspace.files:
            out.files[name] = code
        elif name in planned and _safe_name(name):
            out.files[name] = code
        else:
            warnings.append({"stage": "apply", "kind": "file_ignored", "detail": f"{name} not named in the plan", "file": name})
    return out, warnings


def changed_files(before: Workspace, after: Workspace) -> list[str]:
    names = sorted(set(before.files) | set(after.files))
    changed = [n for n in names if before.files.get(n) != after.files.get(n)]
    if before.config_doc != after.config_doc:
        changed.append(CONFIG_FILE)
    return changed


# ---------------------------------------------------------------------------
# the loop


def _dump(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def reflect_loop(
    workspace: Workspace,
    fingerprint: Fingerprint | Sequence[Criterion],
    gateway: Gateway,
    cfg: LoopConfig | None = None,
    *,
    paper_text: str = "",
    out_dir: str | Path | None = None,
) -> tuple[Workspace, LoopTrace]:
    """Run verify -> plan -> apply until all criteria pass or the cap is hit.

    Round ``r`` (1-based) writes ``iter_{r-1}/verdicts.json`` and, when it
    revises, ``iter_{r-1}/plan.md`` and ``workspace_iter{r}/``.
    """
    cfg = cfg or LoopConfig()
    criteria = list(fingerprint.criteria if isinstance(fingerprint, Fingerprint) else fingerprint)
    out = Path(out_dir) if out_dir is not None else None
    trace = LoopTrace()
    current = workspace
    for rnd in range(1, cfg.max_iterations + 1):
        verdicts = verify_all(current, criteria, gateway, cfg, paper_text=paper_text, iteration=rnd)
        passed = sum(v.score for v in verdicts)
        entry = {
            "round": rnd,
            "verdicts": [v.to_dict() for v in verdicts],
            "pass_count": passed,
            "criteria": len(criteria),
            "plan": None,
            "changed_files": [],
            "warnings": [],
        }
        trace.rounds.append(entry)
        if out is not None:
            _dump(out / f"iter_{rnd - 1}" / "verdicts.json", entry["verdicts"])
        if passed == len(criteria):
            trace.terminal_reason = ALL_PASS
            break
        if rnd == cfg.max_iterations:
            trace.terminal_reason = MAX_ITERATIONS
            break
        try:
            plan = plan_revision(verdicts, current, gateway, cfg, criteria=criteria)
            entry["plan"] = plan.to_dict()
            entry["warnings"].extend(plan.warnings)
            if out is not None:
                (out / f"iter_{rnd - 1}" / "plan.md").write_text(plan.render(), encoding="utf-8")
            revised, warns = apply_revision(current, plan, gateway, cfg, paper_text=paper_text)
        except StageFailure as exc:
            logger.error("reflection stopped in round %d: %s", rnd, exc)
            trace.terminal_reason = MAX_ITERATIONS
            trace.error = str(exc)
            break
        entry["warnings"].extend(warns)
        entry["changed_files"] = changed_files(current, revised)
        current = revised
        if out is not None:
            current.write(out / f"workspace_iter{rnd}")
    if out is not None:
        _dump(out / "loop_trace.json", trace.to_dict())
    return current, trace
