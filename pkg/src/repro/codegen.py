"""Initial implementation: skeleton generation, then per-target filling."""

from __future__ import annotations

import ast
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import yaml

from . import prompts
from .errors import ParseFailure, StageFailure
from .fingerprint.types import CONFIGURATION, FRAMEWORK, GuideUnit
from .llm.gateway import Gateway, ask
from .llm.structured import extract_code_block

logger = logging.getLogger(__name__)

MAIN_SCRIPT = "main.py"
CONFIG_FILE = "config.yaml"
MANDATED_CLASSES = ("Data", "Model", "Trainer", "Evaluator")
MANDATED_ORDER = (*MANDATED_CLASSES, "main")
PLACEHOLDER_MARKERS = ("todo", "dummy implementation", "your implementation")


@dataclass
class Workspace:
    files: dict[str, str] = field(default_factory=dict)
    config_doc: str = ""

    def __post_init__(self) -> None:
        for path in self.files:
            check_relative_path(path)

    def copy(self) -> "Workspace":
        return Workspace(dict(self.files), self.config_doc)

    def render(self) -> str:
        """All files as ``## Code: [name]`` blocks, the form editor prompts use."""
        parts = [f"## Code: [{name}]\n```{_lang(name)}\n{_ensure_nl(text)}```" for name, text in self.files.items()]
        parts.append(f"## Code: [{CONFIG_FILE}]\n```yaml\n{_ensure_nl(self.config_doc)}```")
        return "\n\n".join(parts)

    def write(self, directory: str | Path) -> None:
        root = Path(directory)
        root.mkdir(parents=True, exist_ok=True)
        for name, text in sorted(self.files.items()):
            target = root / name
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_text(text, encoding="utf-8")
        (root / CONFIG_FILE).write_text(self.config_doc, encoding="utf-8")

    @classmethod
    def read(cls, directory: str | Path) -> "Workspace":
        root = Path(directory)
        files = {}
        for path in sorted(p for p in root.rglob("*") if p.is_file()):
            rel = path.relative_to(root).as_posix()
            if rel != CONFIG_FILE:
                files[rel] = path.read_text(encoding="utf-8")
        config = (root / CONFIG_FILE).read_text(encoding="utf-8") if (root / CONFIG_FILE).exists() else ""
        ordered = {MAIN_SCRIPT: files.pop(MAIN_SCRIPT)} if MAIN_SCRIPT in files else {}
        ordered.update(files)
        return cls(ordered, config)


def _lang(name: str) -> str:
    return "python" if name.endswith(".py") else ("yaml" if name.endswith((".yaml", ".yml")) else "")


def _ensure_nl(text: str) -> str:
    return text if text.endswith("\n") or not text else text + "\n"


def check_relative_path(path: str) -> str:
    p = Path(path)
    if not path or p.is_absolute() or ".." in p.parts or path.startswith(("/", "\\")):
        raise ValueError(f"workspace paths must be relative and inside the workspace: {path!r}")
    return path


@dataclass
class FillTarget:
    file: str
    symbol: str
    kind: str  # "class" | "function"
    body_state: str = "stub"


# ---------------------------------------------------------------------------
# static analysis


def _is_docstring(stmt: ast.stmt) -> bool:
    return isinstance(stmt, ast.Expr) and isinstance(stmt.value, ast.Constant) and isinstance(stmt.value.value, str)


def _is_stub_marker(stmt: ast.stmt) -> bool:
    if isinstance(stmt, ast.Pass):
        return True
    if isinstance(stmt, ast.Expr) and isinstance(stmt.value, ast.Constant) and stmt.value.value is Ellipsis:
        return True
    if isinstance(stmt, ast.Raise) and stmt.exc is not None:
        exc = stmt.exc.func if isinstance(stmt.exc, ast.Call) else stmt.exc
        return isinstance(exc, ast.Name) and exc.id == "NotImplementedError"
    return False


def function_is_stub(node: ast.FunctionDef | ast.AsyncFunctionDef) -> bool:
    return all(_is_docstring(s) or _is_stub_marker(s) for s in node.body)


def _functions(node: ast.AST):
    for child in ast.walk(node):
        if isinstance(child, (ast.FunctionDef, ast.AsyncFunctionDef)):
            yield child


def symbol_is_stub(node: ast.AST) -> bool:
    if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)):
        return function_is_stub(node)
    if isinstance(node, ast.ClassDef):
        return all(function_is_stub(f) for f in _functions(node)) and all(
            _is_docstring(s) or _is_stub_marker(s) or isinstance(s, (ast.FunctionDef, ast.AsyncFunctionDef, ast.ClassDef))
            for s in node.body
        )
    return False


def skeleton_violations(code: str) -> list[str]:
    """Reasons ``code`` is not a valid skeleton; empty when it is."""
    try:
        tree = ast.parse(code)
    except SyntaxError as exc:
        return [f"not valid Python: {exc}"]
    problems = []
    top = {n.name: n for n in tree.body if isinstance(n, (ast.ClassDef, ast.FunctionDef, ast.AsyncFunctionDef))}
    for name in MANDATED_CLASSES:
        if not isinstance(top.get(name), ast.ClassDef):
            problems.append(f"missing class {name}")
    if not isinstance(top.get("main"), (ast.FunctionDef, ast.AsyncFunctionDef)):
        problems.append("missing main() function")

    def check_class_body(cls: ast.ClassDef) -> None:
        for stmt in cls.body:
            if isinstance(stmt, ast.ClassDef):
                check_class_body(stmt)
            elif isinstance(stmt, (ast.FunctionDef, ast.AsyncFunctionDef)):
                if not function_is_stub(stmt):
                    problems.append(f"{cls.name}.{stmt.name} has an implemented body")
            elif not (_is_docstring(stmt) or _is_stub_marker(stmt)):
                problems.append(f"class {cls.name} body contains code at line {stmt.lineno}")

    for node in tree.body:
        if isinstance(node, ast.ClassDef):
            check_class_body(node)
        elif isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)) and not function_is_stub(node):
            problems.append(f"{node.name}() has an implemented body")
    return problems


def skeleton_symbols(code: str) -> list[str]:
    tree = ast.parse(code)
    return [n.name for n in tree.body if isinstance(n, (ast.ClassDef, ast.FunctionDef, ast.AsyncFunctionDef))]


_IMPORT_LINE_RE = re.compile(r"^(?:import\s+\S|from\s+\S+\s+import\s)")


def import_set(code: str) -> set[str]:
    """Module-level imports, one canonical string per imported name."""
    try:
        tree = ast.parse(code)
    except SyntaxError:
        return {" ".join(line.split("#")[0].split()) for line in code.splitlines() if _IMPORT_LINE_RE.match(line)}
    out: set[str] = set()
    for node in tree.body:
        if isinstance(node, ast.Import):
            for a in node.names:
                out.add(f"import {a.name}" + (f" as {a.asname}" if a.asname else ""))
        elif isinstance(node, ast.ImportFrom):
            mod = "." * node.level + (node.module or "")
            for a in node.names:
                out.add(f"from {mod} import {a.name}" + (f" as {a.asname}" if a.asname else ""))
    return out


def find_placeholders(code: str) -> list[str]:
    low = code.lower()
    return [m for m in PLACEHOLDER_MARKERS if m in low]


# ---------------------------------------------------------------------------
# operations


def synthesize_config(configuration: Sequence[GuideUnit]) -> str:
    """A ``config.yaml`` built from configuration-level guides (name -> phrase)."""
    entries: dict[str, str] = {}
    for unit in configuration:
        name, sep, phrase = unit.text.partition(" = ")
        key = re.sub(r"[^0-9a-z]+", "_", name.lower()).strip("_") or unit.id
        base, k = key, 2
        while key in entries:
            key, k = f"{base}_{k}", k + 1
        entries[key] = phrase.strip() if sep else unit.text
    if not entries:
        return ""
    return yaml.safe_dump({"paper_configuration": entries}, sort_keys=False, allow_unicode=True, width=100)


def _skeleton_parser(reply: str) -> str:
    code = extract_code_block(reply)
    problems = skeleton_violations(code)
    if problems:
        raise ParseFailure("invalid skeleton: " + "; ".join(problems), reply)
    return code


def generate_skeleton(
    guides: Sequence[GuideUnit],
    gateway: Gateway,
    *,
    max_reprompts: int = 2,
    notes: list | None = None,
) -> Workspace:
    """Ask for a stub-only script with Data/Model/Trainer/Evaluator and main()."""
    framework: dict[str, list[str]] = {}
    configuration: list[GuideUnit] = []
    for g in guides:
        if g.level == FRAMEWORK:
            framework.setdefault(g.aspect or "", []).append(g.text)
        elif g.level == CONFIGURATION:
            configuration.append(g)
    if not framework and not configuration:
        raise StageFailure("skeleton", "no framework or configuration guides")
    messages = [
        ("system", prompts.SKELETON_SYSTEM),
        ("user", prompts.skeleton_user(framework, [g.text for g in configuration])),
    ]

    def on_reprompt(attempt: int, exc: ParseFailure) -> None:
        if notes is not None:
            notes.append({"stage": "skeleton", "kind": "reprompt", "detail": str(exc), "attempt": attempt})

    try:
        code = ask(gateway, "skeleton", messages, _skeleton_parser, max_reprompts=max_reprompts, on_reprompt=on_reprompt)
    except ParseFailure as exc:
        raise StageFailure("skeleton", str(exc)) from exc
    return Workspace({MAIN_SCRIPT: _ensure_nl(code)}, synthesize_config(configuration))


def list_fill_targets(workspace: Workspace) -> list[FillTarget]:
    """Stubbed top-level classes/functions: mandated order first, then file order."""
    mandated: dict[str, FillTarget] = {}
    extras: list[FillTarget] = []
    files = sorted(workspace.files, key=lambda n: (n != MAIN_SCRIPT, n))
    for name in files:
        if not name.endswith(".py"):
            continue
        try:
            tree = ast.parse(workspace.files[name])
        except SyntaxError:
            continue
        for node in tree.body:
            if not isinstance(node, (ast.ClassDef, ast.FunctionDef, ast.AsyncFunctionDef)) or not symbol_is_stub(node):
                continue
            target = FillTarget(name, node.name, "class" if isinstance(node, ast.ClassDef) else "function")
            if node.name in MANDATED_ORDER and node.name not in mandated:
                mandated[node.name] = target
            else:
                extras.append(target)
    return [mandated[n] for n in MANDATED_ORDER if n in mandated] + extras


def _node_span(code: str, symbol: str) -> tuple[int, int] | None:
    tree = ast.parse(code)
    for node in tree.body:
        if isinstance(node, (ast.ClassDef, ast.FunctionDef, ast.AsyncFunctionDef)) and node.name == symbol:
            start = min([node.lineno] + [d.lineno for d in node.decorator_list])
            return start, node.end_lineno
    return None


def symbol_source(code: str, symbol: str) -> str:
    span = _node_span(code, symbol)
    if span is None:
        raise KeyError(symbol)
    lines = code.splitlines()
    return "\n".join(lines[span[0] - 1 : span[1]])


def _insert_imports(code: str, new_imports: Sequence[str]) -> str:
    if not new_imports:
        return code
    lines = code.splitlines()
    tree = ast.parse(code)
    last = 0
    for node in tree.body:
        if isinstance(node, (ast.Import, ast.ImportFrom)):
            last = node.end_lineno
        elif not _is_docstring(node) and not (isinstance(node, ast.ImportFrom) and node.module == "__future__"):
            break
    merged = lines[:last] + list(new_imports) + lines[last:]
    return "\n".join(merged) + "\n"


def splice_fill(code: str, target: FillTarget, reply_code: str, imports_so_far: Sequence[str]) -> str:
    """Merge a fill reply into ``code``.

    The reply holds new imports plus the target's full definition. Raises
    ParseFailure when the reply is unusable: missing target, non-stub check
    failed, placeholder markers, or an import header that omits existing
    imports.
    """
    try:
        reply_tree = ast.parse(reply_code)
    except SyntaxError as exc:
        raise ParseFailure(f"fill is not valid Python: {exc}", reply_code) from exc
    markers = find_placeholders(reply_code)
    if markers:
        raise ParseFailure(f"fill contains placeholder markers: {markers}", reply_code)
    span = _node_span(reply_code, target.symbol)
    if span is None:
        raise ParseFailure(f"fill does not define {target.symbol}", reply_code)
    node = next(n for n in reply_tree.body if getattr(n, "name", None) == target.symbol)
    if symbol_is_stub(node):
        raise ParseFailure(f"fill leaves {target.symbol} as a stub", reply_code)

    existing = set(imports_so_far) | import_set(code)
    reply_imports = import_set(reply_code)
    restated = reply_imports & existing
    if restated and not existing <= reply_imports:
        missing = sorted(existing - reply_imports)
        raise ParseFailure(f"fill rewrote the import header and dropped existing imports: {missing}", reply_code)

    new_definition = symbol_source(reply_code, target.symbol)
    old_span = _node_span(code, target.symbol)
    if old_span is None:
        raise ParseFailure(f"{target.symbol} not found in {target.file}", reply_code)
    lines = code.splitlines()
    updated = "\n".join(lines[: old_span[0] - 1] + new_definition.splitlines() + lines[old_span[1] :]) + "\n"

    reply_lines = reply_code.splitlines()
    new_import_lines = []
    for n in reply_tree.body:
        if isinstance(n, (ast.Import, ast.ImportFrom)) and not (import_set(ast.unparse(n)) <= existing):
            new_import_lines.extend(reply_lines[n.lineno - 1 : n.end_lineno])
    updated = _insert_imports(updated, new_import_lines)
    if not import_set(code) <= import_set(updated):
        raise ParseFailure("existing imports lost while splicing", reply_code)
    return updated


def fill_target(
    workspace: Workspace,
    target: FillTarget,
    imports_so_far: Sequence[str],
    gateway: Gateway,
    *,
    paper_text: str = "",
    configuration: Sequence[str] = (),
    max_reprompts: int = 2,
    notes: list | None = None,
) -> Workspace:
    """Fill one stubbed target; the file's import set may only grow."""
    code = workspace.files[target.file]
    messages = [
        ("system", prompts.FILL_SYSTEM),
        (
            "user",
            prompts.fill_user(
                paper_text, configuration, _ensure_nl(workspace.config_doc), _ensure_nl(code),
                symbol_source(code, target.symbol), sorted(imports_so_far),
            ),
        ),
    ]

    def parse(reply: str) -> str:
        return splice_fill(code, target, extract_code_block(reply), imports_so_far)

    def on_reprompt(attempt: int, exc: ParseFailure) -> None:
        if notes is not None:
            notes.append({"stage": "fill", "kind": "reprompt", "detail": str(exc), "target": target.symbol, "attempt": attempt})

    try:
        updated = ask(gateway, "fill", messages, parse, max_reprompts=max_reprompts, on_reprompt=on_reprompt)
    except ParseFailure as exc:
        raise StageFailure("fill", f"{target.symbol}: {exc}") from exc
    out = workspace.copy()
    out.files[target.file] = updated
    target.body_state = "filled"
    return out


def initial_implementation(
    guides: Sequence[GuideUnit],
    gateway: Gateway,
    *,
    paper_text: str = "",
    max_reprompts: int = 2,
    out_dir: str | Path | None = None,
) -> tuple[Workspace, list[dict]]:
    """Skeleton, then sequential fills. Returns the workspace and the fill log."""
    notes: list[dict] = []
    workspace = generate_skeleton(guides, gateway, max_reprompts=max_reprompts, notes=notes)
    configuration = [g.text for g in guides if g.level == CONFIGURATION]
    log: list[dict] = []
    for target in list_fill_targets(workspace):
        imports = sorted(import_set(workspace.files[target.file]))
        try:
            workspace = fill_target(
                workspace, target, imports, gateway,
                paper_text=paper_text, configuration=configuration, max_reprompts=max_reprompts, notes=notes,
            )
            outcome = "filled"
            detail = ""
        except StageFailure as exc:
            logger.warning("fill failed for %s: %s", target.symbol, exc)
            outcome = "failed"
            detail = exc.detail
        log.append({"file": target.file, "symbol": target.symbol, "kind": target.kind, "outcome": outcome, "detail": detail})
    if out_dir is not None:
        out = Path(out_dir)
        workspace.write(out / "workspace_iter0")
        (out / "fill_log.json").write_text(json.dumps({"targets": log, "notes": notes}, indent=2) + "\n", encoding="utf-8")
    return workspace, log
