"""Command-line entry points: fingerprint, reproduce, score, report."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from .codegen import Workspace, initial_implementation
from .errors import EmptyDocument, GatewayError, InputError, ReplayMiss, RubricError, StageFailure
from .fingerprint.pipeline import build_fingerprint, dump_json, load_fingerprint
from .fingerprint.types import GuideUnit
from .paper import PaperDoc, paper_context, read_paper
from .reflect import reflect_loop
from .report import render_report
from .run import MANIFEST, RunConfig, RunContext, RunLock, clear_reflect_outputs, sha256_file
from .scoring import grade_rubric, load_rubric, match_fingerprint_to_rubric, pr_leaf, score_rubric

logger = logging.getLogger("repro")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_REPLAY_MISS = 3
EXIT_STAGE = 4


def _fail(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _guarded(fn):
    """Map pipeline errors onto the exit-code contract."""

    def wrapper(*args, **kwargs) -> int:
        try:
            return fn(*args, **kwargs)
        except ReplayMiss as exc:
            return _fail(EXIT_REPLAY_MISS, str(exc))
        except (InputError, RubricError, EmptyDocument) as exc:
            return _fail(EXIT_INPUT, str(exc))
        except (StageFailure, GatewayError) as exc:
            return _fail(EXIT_STAGE, str(exc))

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


# ---------------------------------------------------------------------------
# stages


def _paper_stage(ctx: RunContext) -> PaperDoc:
    paper = ctx.cfg.paper_path
    out = ctx.run_dir / "paper_doc.json"
    if paper:
        if not Path(paper).is_file():
            raise InputError(f"paper not found: {paper}")
        inputs = {"paper_sha256": sha256_file(Path(paper))}
        doc = read_paper(paper)
        ctx.stage("paper", lambda: dump_json(out, doc.to_dict()), inputs)
    elif not ctx.manifest.is_complete("paper"):
        raise InputError("no paper given (--paper or paper_path in the config)")
    return PaperDoc.from_dict(json.loads(out.read_text(encoding="utf-8")))


def _fingerprint_stage(ctx: RunContext, doc: PaperDoc) -> None:
    ctx.stage("fingerprint", lambda: build_fingerprint(doc, ctx.gateway, ctx.cfg.fingerprint, ctx.run_dir))


def _run_dir_ready(ctx: RunContext) -> None:
    ctx.run_dir.mkdir(parents=True, exist_ok=True)


@_guarded
def cmd_fingerprint(cfg: RunConfig, resume: bool = False, backend=None) -> int:
    """Segment the input document and build its fingerprint."""
    if not cfg.paper_path or not Path(cfg.paper_path).is_file():
        return _fail(EXIT_INPUT, f"paper not found: {cfg.paper_path}")
    ctx = RunContext.open(cfg, resume, backend)
    _run_dir_ready(ctx)
    with RunLock(ctx.run_dir):
        doc = _paper_stage(ctx)
        _fingerprint_stage(ctx, doc)
    fp = load_fingerprint(ctx.run_dir / "fingerprint.json")
    print(f"fingerprint: {len(fp)} criteria {fp.stage_counts} -> {ctx.run_dir / 'fingerprint.json'}")
    return EXIT_OK


@_guarded
def cmd_reproduce(cfg: RunConfig, resume: bool = False, from_scratch: bool = False, backend=None) -> int:
    """Initial implementation, then the reflective loop."""
    ctx = RunContext.open(cfg, resume, backend)
    _run_dir_ready(ctx)
    with RunLock(ctx.run_dir):
        if from_scratch:
            doc = _paper_stage(ctx)
            _fingerprint_stage(ctx, doc)
        elif not ctx.manifest.is_complete("fingerprint"):
            raise InputError(f"no completed fingerprint in {ctx.run_dir}; run `fingerprint` first or pass --from-scratch")
        doc = PaperDoc.from_dict(json.loads((ctx.run_dir / "paper_doc.json").read_text(encoding="utf-8")))
        context = paper_context(doc, cfg.loop.paper_context_chars)

        def codegen() -> None:
            guides = [GuideUnit.from_dict(g) for g in json.loads((ctx.run_dir / "guides.json").read_text(encoding="utf-8"))]
            initial_implementation(guides, ctx.gateway, paper_text=context, max_reprompts=cfg.fingerprint.max_reprompts, out_dir=ctx.run_dir)

        ctx.stage("codegen", codegen)

        def reflect() -> None:
            clear_reflect_outputs(ctx.run_dir)
            workspace = Workspace.read(ctx.run_dir / "workspace_iter0")
            fingerprint = load_fingerprint(ctx.run_dir / "fingerprint.json")
            final, trace = reflect_loop(workspace, fingerprint, ctx.gateway, cfg.loop, paper_text=context, out_dir=ctx.run_dir)
            final.write(ctx.run_dir / "workspace_final")
            if trace.error:
                logger.warning("reflection ended early: %s", trace.error)

        ctx.stage("reflect", reflect, {"max_iterations": cfg.loop.max_iterations})
    trace = json.loads((ctx.run_dir / "loop_trace.json").read_text(encoding="utf-8"))
    print(f"reproduce: {len(trace['rounds'])} round(s), pass curve {trace['pass_curve']}, terminal {trace['terminal_reason']}")
    return EXIT_OK


@_guarded
def cmd_score(
    cfg: RunConfig,
    rubric_path: str | Path,
    resume: bool = False,
    grade: bool = False,
    match: bool = False,
    backend=None,
) -> int:
    """Score a rubric tree (optionally grading it against the final workspace)."""
    rubric_path = Path(rubric_path)
    if not rubric_path.is_file():
        return _fail(EXIT_INPUT, f"rubric not found: {rubric_path}")
    root = load_rubric(rubric_path)
    leaves = list(root.leaves())
    ungraded = [l.id for l in leaves if l.score is None]
    if ungraded and not grade:
        return _fail(EXIT_INPUT, f"rubric has ungraded leaves {ungraded}; pass --grade to grade them against the workspace")
    ctx = RunContext.open(cfg, resume, backend)
    _run_dir_ready(ctx)
    with RunLock(ctx.run_dir):
        inputs = {"rubric_sha256": sha256_file(rubric_path), "grade": grade, "match": match}

        ws_dir = ctx.run_dir / "workspace_final"
        if grade and not ws_dir.is_dir():
            raise InputError(f"--grade needs a completed reproduce run ({ws_dir} missing)")

        def run() -> None:
            graded, verdicts = root, []
            if grade:
                doc_path = ctx.run_dir / "paper_doc.json"
                context = ""
                if doc_path.exists():
                    context = paper_context(PaperDoc.from_dict(json.loads(doc_path.read_text(encoding="utf-8"))), cfg.loop.paper_context_chars)
                graded, verdicts = grade_rubric(root, Workspace.read(ws_dir), ctx.gateway, paper_text=context, parallelism=cfg.loop.verify_parallelism)
            graded_leaves = list(graded.leaves())
            report = {
                "rubric": str(rubric_path.name),
                "pr_root": score_rubric(graded),
                "pr_leaf": pr_leaf([l.score for l in graded_leaves]),
                "leaves": [{"id": l.id, "requirement": l.requirement, "weight": l.weight, "score": l.score} for l in graded_leaves],
                "verdicts": [v.to_dict() for v in verdicts],
                "pass_curve": None,
                "match": None,
            }
            trace_path = ctx.run_dir / "loop_trace.json"
            if trace_path.exists():
                trace = json.loads(trace_path.read_text(encoding="utf-8"))
                report["pass_curve"] = trace["pass_curve"]
                report["best_round"] = trace.get("best_round")
            if match:
                fp_path = ctx.run_dir / "fingerprint.json"
                if not fp_path.exists():
                    raise InputError("--match needs fingerprint.json in the run directory")
                fp = load_fingerprint(fp_path)
                report["match"] = match_fingerprint_to_rubric(fp.criteria, [l.requirement for l in leaves], ctx.gateway).to_dict()
            dump_json(ctx.run_dir / "score_report.json", report)

        ctx.stage("score", run, inputs)
    report = json.loads((ctx.run_dir / "score_report.json").read_text(encoding="utf-8"))
    print(f"PR_root: {100 * report['pr_root']:.2f}%")
    print(f"PR_leaf: {100 * report['pr_leaf']:.2f}%")
    if report.get("pass_curve") is not None:
        print(f"pass curve: {report['pass_curve']}")
    if report.get("match"):
        m = report["match"]
        print(f"matcher: recall {m['recall']:.3f}, precision {m['precision']:.3f}")
    return EXIT_OK


@_guarded
def cmd_report(run_dir: str | Path) -> int:
    """Render report.md for a run directory."""
    run_dir = Path(run_dir)
    if not (run_dir / MANIFEST).is_file():
        return _fail(EXIT_INPUT, f"no {MANIFEST} in {run_dir}")
    with RunLock(run_dir):
        text = render_report(run_dir)
        (run_dir / "report.md").write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="repro", description="Fingerprint-guided paper reproduction pipeline.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="YAML configuration file")
        p.add_argument("--run-dir", help="run directory (overrides the config)")
        p.add_argument("--mode", choices=("live", "record", "replay"), help="gateway mode (overrides the config)")
        p.add_argument("--resume", action="store_true", help="continue an interrupted run")
        p.add_argument("--paper", help="paper Markdown file (overrides the config)")

    p = sub.add_parser("fingerprint", help="build the fingerprint of a paper")
    common(p)
    p = sub.add_parser("reproduce", help="generate code and run the reflective loop")
    common(p)
    p.add_argument("--from-scratch", action="store_true", help="run the fingerprint stage first if needed")
    p.add_argument("--max-iterations", type=int, help="verification round cap")
    p = sub.add_parser("score", help="score a rubric tree")
    common(p)
    p.add_argument("--rubric", required=True, help="rubric.json")
    p.add_argument("--grade", action="store_true", help="grade rubric leaves against the final workspace")
    p.add_argument("--match", action="store_true", help="also match the fingerprint against the rubric")
    p = sub.add_parser("report", help="render report.md for a run directory")
    common(p)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.load(
            args.config,
            run_dir=args.run_dir,
            mode=args.mode,
            paper_path=args.paper,
            max_iterations=getattr(args, "max_iterations", None),
        )
    except InputError as exc:
        return _fail(EXIT_INPUT, str(exc))
    if args.command == "report":
        if not cfg.run_dir:
            return _fail(EXIT_INPUT, "no run directory given")
        return cmd_report(cfg.run_dir)
    if args.command == "fingerprint":
        return cmd_fingerprint(cfg, resume=args.resume)
    if args.command == "reproduce":
        return cmd_reproduce(cfg, resume=args.resume, from_scratch=args.from_scratch)
    return cmd_score(cfg, args.rubric, resume=args.resume, grade=args.grade, match=args.match)


if __name__ == "__main__":
    sys.exit(main())
