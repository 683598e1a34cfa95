"""Run directory lifecycle: configuration, manifest, locking and stage execution."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import shutil
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable

import yaml

from .errors import InputError, ReplayMiss
from .fingerprint.types import FingerprintConfig
from .llm.embed import HashEmbedder, HTTPEmbedder
from .llm.gateway import MODES, CostLedger, Gateway, HTTPChatBackend, Routing, TranscriptStore
from .reflect import LoopConfig

logger = logging.getLogger(__name__)

STAGES = ("paper", "fingerprint", "codegen", "reflect", "score")
MANIFEST = "manifest.json"
LOCK = ".lock"
TRANSCRIPTS = "transcripts.jsonl"
COSTS = "costs.json"


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


# ---------------------------------------------------------------------------
# configuration


@dataclass
class RunConfig:
    paper_path: str | None = None
    run_dir: str | None = None
    mode: str = "live"
    transcripts_path: str | None = None
    analysis_model: str = "gpt-4o"
    coding_model: str = "o3-mini"
    embed_model: str = "text-embedding-3-small"
    embedder: str = "http"
    embedding_dim: int = 256
    api_base: str | None = None
    api_key: str | None = None
    embed_base: str | None = None
    embed_key: str | None = None
    prices: dict = field(default_factory=dict)
    parallelism: int = 8
    retry_limit: int = 3
    backoff_base: float = 1.0
    max_output_tokens: dict = field(default_factory=dict)
    fingerprint: FingerprintConfig = field(default_factory=FingerprintConfig)
    loop: LoopConfig = field(default_factory=LoopConfig)

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise InputError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.embedder not in ("hash", "http"):
            raise InputError(f"embedder must be 'hash' or 'http', got {self.embedder!r}")

    @classmethod
    def load(cls, path: str | Path | None = None, env: dict | None = None, **overrides: Any) -> "RunConfig":
        """YAML file, then environment secrets, then non-None ``overrides``.

        Relative paths in the file resolve against the file's directory.
        """
        env = os.environ if env is None else env
        data: dict = {}
        base = Path.cwd()
        if path is not None:
            p = Path(path)
            if not p.is_file():
                raise InputError(f"config file not found: {p}")
            try:
                data = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
            except yaml.YAMLError as exc:
                raise InputError(f"config file {p} is not valid YAML: {exc}") from exc
            if not isinstance(data, dict):
                raise InputError(f"config file {p} must hold a mapping")
            base = p.resolve().parent
        models = data.pop("models", {}) or {}
        fp = FingerprintConfig.from_mapping(data.pop("fingerprint", None))
        try:
            loop = LoopConfig.from_mapping(data.pop("loop", None))
        except ValueError as exc:
            raise InputError(str(exc)) from exc
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        unknown = sorted(set(data) - set(known))
        if unknown:
            logger.warning("ignoring unknown config keys: %s", unknown)
        for key in ("paper_path", "run_dir", "transcripts_path"):
            if known.get(key):
                known[key] = str((base / known[key]).resolve()) if not Path(known[key]).is_absolute() else known[key]
        for short, full in (("analysis", "analysis_model"), ("coding", "coding_model"), ("embed", "embed_model")):
            if short in models:
                known[full] = models[short]
        known.setdefault("api_base", env.get("REPRO_API_BASE"))
        known.setdefault("api_key", env.get("REPRO_API_KEY"))
        known.setdefault("embed_base", env.get("REPRO_EMBED_BASE"))
        known.setdefault("embed_key", env.get("REPRO_EMBED_KEY"))
        max_iterations = overrides.pop("max_iterations", None)
        if max_iterations is not None:
            if max_iterations < 1:
                raise InputError("max_iterations must be at least 1")
            loop.max_iterations = max_iterations
        known.update({k: v for k, v in overrides.items() if v is not None})
        return cls(fingerprint=fp, loop=loop, **known)

    def snapshot(self) -> dict:
        """Configuration without secrets, for the manifest."""
        out = {}
        for k in self.__dataclass_fields__:
            if k in ("api_key", "embed_key"):
                continue
            v = getattr(self, k)
            out[k] = v.__dict__.copy() if k in ("fingerprint", "loop") else v
        return out

    def transcript_file(self) -> Path:
        if self.transcripts_path:
            return Path(self.transcripts_path)
        if not self.run_dir:
            raise InputError("no run directory")
        return Path(self.run_dir) / TRANSCRIPTS


def build_gateway(cfg: RunConfig, backend=None) -> Gateway:
    """Gateway for ``cfg.mode``; replay needs an existing transcript file.

    ``backend`` replaces the HTTP chat client (scripted models, tests).
    """
    store = None
    if cfg.mode in ("record", "replay"):
        path = cfg.transcript_file()
        if cfg.mode == "replay" and not path.is_file():
            raise ReplayMiss(str(path), "transcripts file missing")
        store = TranscriptStore(path, readonly=cfg.mode == "replay")
    if backend is None and cfg.mode != "replay":
        if not cfg.api_base or not cfg.api_key:
            raise InputError("live/record mode needs REPRO_API_BASE and REPRO_API_KEY")
        backend = HTTPChatBackend(cfg.api_base, cfg.api_key)
    if cfg.embedder == "hash":
        embedder = HashEmbedder(cfg.embedding_dim)
    else:
        base = cfg.embed_base or cfg.api_base
        key = cfg.embed_key or cfg.api_key
        if cfg.mode != "replay" and (not base or not key):
            raise InputError("http embedder needs REPRO_EMBED_BASE/REPRO_EMBED_KEY (or the chat endpoint)")
        embedder = HTTPEmbedder(base or "http://unused.invalid", key or "", cfg.embed_model, dim=cfg.embedding_dim)
    return Gateway(
        backend,
        mode=cfg.mode,
        store=store,
        ledger=CostLedger(cfg.prices),
        routing=Routing(cfg.analysis_model, cfg.coding_model, dict(cfg.max_output_tokens)),
        embedder=embedder,
        retry_limit=cfg.retry_limit,
        backoff_base=cfg.backoff_base,
        parallelism=cfg.parallelism,
    )


# ---------------------------------------------------------------------------
# manifest


class Manifest:
    """Stage flags with artifact hashes; persisted atomically after each change."""

    def __init__(self, run_dir: Path, data: dict | None = None) -> None:
        self.run_dir = run_dir
        self.data = data or {"created_at": _now(), "stages": {}, "config": {}}

    @classmethod
    def load(cls, run_dir: Path) -> "Manifest":
        path = run_dir / MANIFEST
        if not path.exists():
            return cls(run_dir)
        try:
            return cls(run_dir, json.loads(path.read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise InputError(f"{path} is not valid JSON: {exc}") from exc

    @property
    def stages(self) -> dict:
        return self.data.setdefault("stages", {})

    def save(self) -> None:
        self.data["updated_at"] = _now()
        self.run_dir.mkdir(parents=True, exist_ok=True)
        tmp = self.run_dir / (MANIFEST + ".tmp")
        tmp.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        os.replace(tmp, self.run_dir / MANIFEST)

    def interrupted(self) -> list[str]:
        return [s for s in STAGES if self.stages.get(s, {}).get("status") == "running"]

    def is_complete(self, stage: str, inputs: dict | None = None) -> bool:
        rec = self.stages.get(stage)
        if not rec or rec.get("status") != "complete":
            return False
        if inputs is not None and rec.get("inputs") != inputs:
            return False
        return self.verify(stage)

    def verify(self, stage: str) -> bool:
        for rel, digest in self.stages.get(stage, {}).get("artifacts", {}).items():
            path = self.run_dir / rel
            if not path.is_file() or sha256_file(path) != digest:
                return False
        return True

    def start(self, stage: str, inputs: dict | None = None) -> None:
        # anything downstream of a re-run stage is stale
        for later in STAGES[STAGES.index(stage) + 1 :]:
            self.stages.pop(later, None)
        self.stages[stage] = {"status": "running", "started_at": _now(), "inputs": inputs or {}}
        self.save()

    def finish(self, stage: str, artifacts: list[Path]) -> None:
        rec = self.stages[stage]
        rec["status"] = "complete"
        rec["completed_at"] = _now()
        rec["artifacts"] = {p.relative_to(self.run_dir).as_posix(): sha256_file(p) for p in sorted(artifacts)}
        self.save()


def stage_artifacts(run_dir: Path, stage: str) -> list[Path]:
    from .fingerprint.pipeline import ARTIFACTS

    def tree(name: str) -> list[Path]:
        root = run_dir / name
        return [p for p in root.rglob("*") if p.is_file()] if root.is_dir() else []

    if stage == "paper":
        names = ["paper_doc.json"]
    elif stage == "fingerprint":
        names = list(ARTIFACTS)
    elif stage == "codegen":
        return [run_dir / "fill_log.json", *tree("workspace_iter0")]
    elif stage == "reflect":
        out = [run_dir / "loop_trace.json", *tree("workspace_final")]
        for d in sorted(run_dir.iterdir()):
            if d.is_dir() and (d.name.startswith("iter_") or (d.name.startswith("workspace_iter") and d.name != "workspace_iter0")):
                out.extend(tree(d.name))
        return out
    elif stage == "score":
        names = ["score_report.json"]
    else:
        raise ValueError(stage)
    return [run_dir / n for n in names if (run_dir / n).exists()]


def clear_reflect_outputs(run_dir: Path) -> None:
    for d in run_dir.iterdir():
        if d.is_dir() and (d.name.startswith("iter_") or d.name == "workspace_final" or (d.name.startswith("workspace_iter") and d.name != "workspace_iter0")):
            shutil.rmtree(d)
    (run_dir / "loop_trace.json").unlink(missing_ok=True)


# ---------------------------------------------------------------------------
# locking


class RunLock:
    """Exclusive pid lock file; stale locks from dead processes are replaced."""

    def __init__(self, run_dir: Path) -> None:
        self.path = run_dir / LOCK
        self.held = False

    def __enter__(self) -> "RunLock":
        self.path.parent.mkdir(parents=True, exist_ok=True)
        for _ in range(2):
            try:
                fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
            except FileExistsError:
                if self._stale():
                    self.path.unlink(missing_ok=True)
                    continue
                raise InputError(f"run directory {self.path.parent} is in use by another command ({self.path})")
            with os.fdopen(fd, "w") as fh:
                fh.write(str(os.getpid()))
            self.held = True
            return self
        raise InputError(f"could not acquire {self.path}")

    def _stale(self) -> bool:
        try:
            pid = int(self.path.read_text().strip() or "0")
        except (OSError, ValueError):
            return True
        if pid <= 0:
            return True
        try:
            os.kill(pid, 0)
        except ProcessLookupError:
            return True
        except PermissionError:
            return False
        return False

    def __exit__(self, *exc) -> None:
        if self.held:
            self.path.unlink(missing_ok=True)
            self.held = False


# ---------------------------------------------------------------------------
# stage runner


@dataclass
class RunContext:
    cfg: RunConfig
    run_dir: Path
    manifest: Manifest
    resume: bool = False
    backend: Any = None
    _gateway: Gateway | None = None
    _ledger: CostLedger | None = None
    ran: list[str] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)

    @classmethod
    def open(cls, cfg: RunConfig, resume: bool = False, backend=None) -> "RunContext":
        if not cfg.run_dir:
            raise InputError("no run directory given (--run-dir or run_dir in the config)")
        run_dir = Path(cfg.run_dir)
        manifest = Manifest.load(run_dir)
        broken = manifest.interrupted()
        if broken and not resume:
            raise InputError(f"run in {run_dir} was interrupted during {broken}; pass --resume to continue it")
        return cls(cfg, run_dir, manifest, resume, backend)

    @property
    def gateway(self) -> Gateway:
        if self._gateway is None:
            self._gateway = build_gateway(self.cfg, self.backend)
            if self._ledger is not None:
                self._gateway.ledger = self._ledger
        return self._gateway

    def stage(self, name: str, fn: Callable[[], None], inputs: dict | None = None) -> bool:
        """Run ``fn`` unless ``name`` is complete with matching artifacts. True if it ran."""
        if self.manifest.is_complete(name, inputs):
            logger.info("stage %s already complete; skipping", name)
            self.skipped.append(name)
            return False
        self.manifest.data["config"] = self.cfg.snapshot()
        self.manifest.start(name, inputs)
        self._ledger = CostLedger(self.cfg.prices)
        if self._gateway is not None:
            self._gateway.ledger = self._ledger
        try:
            fn()
        except Exception as exc:
            # a clean failure is recorded; only a killed process leaves "running" behind
            self.manifest.stages[name].update(status="failed", error=f"{type(exc).__name__}: {exc}")
            self.manifest.save()
            raise
        self.manifest.finish(name, stage_artifacts(self.run_dir, name))
        self._record_costs(name, self._ledger)
        self.ran.append(name)
        return True

    def _record_costs(self, stage: str, stage_ledger: CostLedger) -> None:
        path = self.run_dir / COSTS
        data = json.loads(path.read_text(encoding="utf-8")) if path.exists() else {}
        stages = data.get("stages", {})
        stages[stage] = stage_ledger.to_dict()
        for later in STAGES[STAGES.index(stage) + 1 :]:
            stages.pop(later, None)
        data = {
            "stages": dict(sorted(stages.items(), key=lambda kv: STAGES.index(kv[0]))),
            "total_cost": math.fsum(s["total_cost"] for s in stages.values()),
            "calls": sum(len(s["entries"]) for s in stages.values()),
        }
        path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
