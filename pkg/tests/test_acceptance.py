"""Acceptance criteria AC1-AC8. The terminal summary prints one PASS/FAIL line per criterion."""

from __future__ import annotations

import difflib
import json
import math
import random
import socket
import time
from collections import deque
from dataclasses import replace

import numpy as np
import pytest

from conftest import FIXTURES
from loop_scripts import echo_files, loop_script, verdict_text
from repro.cli import EXIT_OK, cmd_fingerprint, cmd_reproduce
from repro.codegen import Workspace
from repro.fingerprint.filtering import connected_components, dedup, normalize_key, semantic_filter
from repro.fingerprint.standardize import standardize
from repro.fingerprint.types import EXHAUSTIVE, Criterion, FingerprintConfig, GuideUnit
from repro.llm.embed import cosine_matrix
from repro.reflect import ALL_PASS, MAX_ITERATIONS, UNPARSEABLE, LoopConfig, RevisionPlan, apply_revision, changed_files, plan_revision, reflect_loop
from repro.run import RunConfig
from repro.scoring import RubricNode, pr_leaf, score_rubric
from rubric_trees import brute_force_score, random_tree

pytestmark = pytest.mark.acceptance


def _leaves_with_paths(node: RubricNode, path=()):
    if node.requirement is not None:
        yield node, path
    for k, c in enumerate(node.children):
        yield from _leaves_with_paths(c, path + (k,))


def _set_leaf(node: RubricNode, path: tuple, score: int) -> RubricNode:
    if not path:
        return replace(node, score=score)
    kids = list(node.children)
    kids[path[0]] = _set_leaf(kids[path[0]], path[1:], score)
    return replace(node, children=tuple(kids))


def _scale(node: RubricNode, factor: float) -> RubricNode:
    return replace(node, weight=node.weight * factor, children=tuple(_scale(c, factor) for c in node.children))


# -- AC1 ---------------------------------------------------------------------------


@pytest.mark.criterion("AC1", "scoring oracle equivalence, monotonicity and weight-scaling invariance on 200 random trees")
def test_ac1_scoring_oracle():
    rng = random.Random(20240601)
    started = time.perf_counter()
    for _ in range(200):
        root = random_tree(rng, max_nodes=20)
        got = score_rubric(root)
        assert abs(got - brute_force_score(root)) <= 1e-9

        for leaf, path in _leaves_with_paths(root):
            if leaf.score == 0:
                assert score_rubric(_set_leaf(root, path, 1)) >= got - 1e-12

        factor = rng.choice([1e-3, 0.5, 3.0, 1e4])
        assert abs(score_rubric(_scale(root, factor)) - got) <= 1e-9
    assert time.perf_counter() - started < 5.0


# -- AC2 ---------------------------------------------------------------------------


@pytest.mark.criterion("AC2", "PR_leaf 30/36 = 0.8333 and flat equal-weight PR_root == PR_leaf")
def test_ac2_pr_formulas():
    assert abs(pr_leaf([1] * 30 + [0] * 6) - 0.8333) <= 1e-4
    rng = random.Random(5)
    for n in range(1, 60):
        scores = [rng.randint(0, 1) for _ in range(n)]
        weight = rng.uniform(0.1, 5.0)
        flat = RubricNode("root", children=tuple(RubricNode(f"l{i}", weight, requirement=f"r{i}", score=s) for i, s in enumerate(scores)))
        assert score_rubric(flat) == pr_leaf(scores)


# -- AC3 ---------------------------------------------------------------------------


@pytest.fixture
def no_network(monkeypatch):
    def refuse(*args, **kwargs):
        raise AssertionError("network access attempted")

    monkeypatch.setattr(socket.socket, "connect", refuse)
    monkeypatch.setattr(socket, "create_connection", refuse)


@pytest.mark.criterion("AC3", "replay fingerprint byte-identical over 3 runs, monotone stage counts, < 10 s, no network")
def test_ac3_fingerprint_determinism(tmp_path, no_network):
    started = time.perf_counter()
    outputs = []
    for k in range(3):
        cfg = RunConfig.load(FIXTURES / "config.yaml", run_dir=str(tmp_path / f"run{k}"))
        assert cmd_fingerprint(cfg) == EXIT_OK
        outputs.append((tmp_path / f"run{k}" / "fingerprint.json").read_bytes())
    elapsed = time.perf_counter() - started
    assert outputs[0] == outputs[1] == outputs[2]
    counts = json.loads(outputs[0])["stage_counts"]
    assert counts["standardized"] >= counts["after_dedup"] >= counts["final"]
    assert elapsed < 10.0


# -- AC4 ---------------------------------------------------------------------------


@pytest.mark.criterion("AC4", "the two standardization examples parse to 5 and 1 criteria with verbatim spans")
@pytest.mark.parametrize("name,count", [("standardize_1", 5), ("standardize_2", 1)])
def test_ac4_standardization_examples(scripted, name, count):
    ex = json.loads((FIXTURES / "prompt_examples.json").read_text())[name]
    gw, _ = scripted({"standardize": [ex["reply"]]})
    got = standardize(GuideUnit("u", EXHAUSTIVE, ex["note"]), None, gw, FingerprintConfig())
    assert len(got) == count
    assert [[c.fact, c.scope] for c in got] == ex["expected"]


# -- AC5 ---------------------------------------------------------------------------


def _bfs_clusters(sim: np.ndarray, threshold: float) -> list[list[int]]:
    n = len(sim)
    seen, out = set(), []
    for s in range(n):
        if s in seen:
            continue
        comp, queue = [], deque([s])
        seen.add(s)
        while queue:
            v = queue.popleft()
            comp.append(v)
            for w in range(n):
                if w not in seen and w != v and sim[v, w] >= threshold:
                    seen.add(w)
                    queue.append(w)
        out.append(sorted(comp))
    return sorted(out)


def _random_set(rng: random.Random, dim: int = 8):
    """Criteria over a small fact/scope vocabulary; equal normalized facts share a vector."""
    n = rng.randint(1, 50)
    facts = [f"fact {k}" for k in range(rng.randint(1, 12))]
    variants = lambda f: [f, f.upper(), f + ".", f"  {f}!"]
    scopes = [None, "for training", "For training.", "on Cora"]
    centers = {normalize_key(f): np.array([rng.gauss(0, 1) for _ in range(dim)]) for f in facts}
    crits, vecs = [], []
    for i in range(n):
        base = rng.choice(facts)
        fact = rng.choice(variants(base))
        scope = rng.choice(scopes)
        rendered = f"<fact>{fact}</fact>" + (f" <scope>{scope}</scope>" if scope else "")
        crits.append(Criterion(f"c{i}", fact, scope, rendered, f"g{i}"))
        vecs.append(centers[normalize_key(fact)])
    return crits, np.array(vecs)


@pytest.mark.criterion("AC5", "dedup clusters equal brute-force components, unique survivors, filter keeps at most 5 per cluster")
def test_ac5_dedup_and_filter(scripted):
    rng = random.Random(99)
    threshold = FingerprintConfig().dedup_threshold
    for _ in range(100):
        crits, vecs = _random_set(rng)
        clusters, survivors = dedup(crits, threshold, vecs)
        sim = cosine_matrix(vecs)
        index = {c.id: i for i, c in enumerate(crits)}
        got = sorted(sorted(index[m] for m in cl.members) for cl in clusters)
        assert got == _bfs_clusters(sim, threshold)
        assert connected_components(sim, threshold) == sorted(got, key=lambda g: g[0])

        keys = [(normalize_key(c.fact), normalize_key(c.scope)) for c in survivors]
        assert len(keys) == len(set(keys))

        by_id = {c.id: c for c in survivors}
        for cl in clusters:
            members = [by_id[m] for m in cl.members if m in by_id]
            if len(members) < 2:
                continue
            picks = rng.sample(range(1, len(members) + 1), rng.randint(1, len(members)))
            gw, _ = scripted({"filter": [json.dumps({"selected_indices": picks, "reason": "r"})]})
            kept = semantic_filter(members, gw, FingerprintConfig())
            assert 1 <= len(kept) <= 5
            assert set(kept) <= {m.id for m in members}


# -- AC6 ---------------------------------------------------------------------------

WS = Workspace({"main.py": "import os\n\n\ndef main():\n    return os.getcwd()\n", "model.py": "class Model:\n    layers = 2\n"}, "lr: 0.01\n")
CRITERIA = [Criterion(f"c{i}", f"fact {i}", None, f"<fact>fact {i}</fact>.", f"g{i}") for i in range(1, 6)]


@pytest.mark.criterion("AC6", "loop contract: all-pass 1 round, fail-then-pass 2 rounds, never-pass 4 rounds, fail-closed verdicts")
def test_ac6_loop_contract(scripted):
    gw, backend = scripted(loop_script("import os"))
    _, trace = reflect_loop(WS, CRITERIA, gw)
    assert (len(trace.rounds), trace.terminal_reason) == (1, ALL_PASS)
    assert not backend.calls_for("refine")

    gw, backend = scripted(loop_script("# fixed"))
    _, trace = reflect_loop(WS, CRITERIA, gw)
    assert (len(trace.rounds), trace.terminal_reason) == (2, ALL_PASS)
    assert len(backend.calls_for("refine")) == 1

    gw, backend = scripted(loop_script(None))
    _, trace = reflect_loop(WS, CRITERIA, gw)
    assert LoopConfig().max_iterations == 4
    assert (len(trace.rounds), trace.terminal_reason) == (4, MAX_ITERATIONS)
    assert all(len(r["verdicts"]) == len(CRITERIA) for r in trace.rounds)

    replies = iter(["no sections here"] * 3 + [verdict_text(1)] * 4)
    gw, _ = scripted(lambda r: next(replies) if r.purpose == "verify" else loop_script(None)(r), parallelism=1)
    _, trace = reflect_loop(WS, CRITERIA, gw, LoopConfig(max_iterations=1, verify_parallelism=1))
    first = trace.rounds[0]["verdicts"]
    assert len(first) == len(CRITERIA)
    assert (first[0]["score"], first[0]["findings"]) == (0, UNPARSEABLE)
    assert [v["score"] for v in first[1:]] == [1, 1, 1, 1]


# -- AC7 ---------------------------------------------------------------------------


@pytest.mark.criterion("AC7", "plan example gives 2 config steps and 2 file plans; one-line edit changes one file; omitted files carried forward")
def test_ac7_plan_and_patch(scripted):
    from repro.reflect import Verdict

    ex = json.loads((FIXTURES / "prompt_examples.json").read_text())["plan"]
    gw, _ = scripted({"plan": [ex["reply"]]})
    plan = plan_revision([Verdict("c1", "e", "f", "r", 0, 1)], WS, gw)
    assert len(plan.config_steps) == 2
    assert [name for name, _ in plan.file_plans] == ["model.py", "main.py"]

    edited = "class Model:\n    layers = 12\n"
    gw, _ = scripted(lambda r: echo_files(r.messages[1][1], {"model.py": edited}))
    out, _ = apply_revision(WS, RevisionPlan([], [("model.py", ["More layers."])]), gw)
    assert changed_files(WS, out) == ["model.py"]
    for name in WS.files:
        diff = [l for l in difflib.unified_diff(WS.files[name].splitlines(), out.files[name].splitlines(), lineterm="") if l[:1] in "+-" and l[:3] not in ("+++", "---")]
        assert diff == (["-    layers = 2", "+    layers = 12"] if name == "model.py" else [])

    gw, _ = scripted(lambda r: echo_files(r.messages[1][1], {"model.py": edited}, drop=("main.py",)))
    out, warns = apply_revision(WS, RevisionPlan([], [("model.py", ["More layers."])]), gw)
    assert out.files["main.py"] == WS.files["main.py"]
    assert out.files["model.py"] == edited
    assert any(w["kind"] == "carry_forward" and w["file"] == "main.py" for w in warns)


# -- AC8 ---------------------------------------------------------------------------


def _tree_bytes(root) -> dict[str, bytes]:
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.mark.criterion("AC8", "replay reproduce byte-identical trace and workspace; ledger equals recomputation")
def test_ac8_gateway_determinism(tmp_path, no_network):
    runs = []
    for k in range(2):
        run_dir = tmp_path / f"run{k}"
        cfg = RunConfig.load(FIXTURES / "config.yaml", run_dir=str(run_dir))
        assert cmd_reproduce(cfg, from_scratch=True) == EXIT_OK
        runs.append(run_dir)
    a, b = runs
    assert (a / "loop_trace.json").read_bytes() == (b / "loop_trace.json").read_bytes()
    assert _tree_bytes(a / "workspace_final") == _tree_bytes(b / "workspace_final")

    cfg = RunConfig.load(FIXTURES / "config.yaml")
    for run_dir in runs:
        costs = json.loads((run_dir / "costs.json").read_text())
        per_call = []
        for ledger in costs["stages"].values():
            stage_calls = [
                (e["prompt_tokens"] * cfg.prices[e["model"]]["input"] + e["completion_tokens"] * cfg.prices[e["model"]]["output"]) / 1000
                for e in ledger["entries"]
            ]
            assert ledger["total_cost"] == pytest.approx(math.fsum(stage_calls), abs=1e-12)
            per_call += stage_calls
        assert costs["total_cost"] == pytest.approx(math.fsum(per_call), abs=1e-12)
        assert costs["calls"] == len(per_call)
