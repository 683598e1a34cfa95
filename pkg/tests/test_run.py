from __future__ import annotations

import json
from pathlib import Path

import pytest

from conftest import FIXTURES
from repro.errors import InputError, ReplayMiss
from repro.llm.embed import HashEmbedder, HTTPEmbedder
from repro.run import Manifest, RunConfig, build_gateway, sha256_file


def test_load_fixture_config():
    cfg = RunConfig.load(FIXTURES / "config.yaml", env={})
    assert cfg.mode == "replay"
    assert Path(cfg.paper_path) == (FIXTURES / "paper.md").resolve()
    assert Path(cfg.transcripts_path) == (FIXTURES / "transcripts.jsonl").resolve()
    assert (cfg.analysis_model, cfg.coding_model) == ("fixture-analysis", "fixture-coding")
    assert cfg.loop.verify_parallelism == 4 and cfg.fingerprint.filter_cap == 5


def test_env_secrets_and_overrides(tmp_path):
    env = {"REPRO_API_BASE": "http://x/v1", "REPRO_API_KEY": "sk-zq81"}
    cfg = RunConfig.load(None, env=env, run_dir=str(tmp_path), mode="record", max_iterations=2, paper_path=None)
    assert (cfg.api_base, cfg.api_key, cfg.mode, cfg.loop.max_iterations) == ("http://x/v1", "sk-zq81", "record", 2)
    snap = cfg.snapshot()
    assert "api_key" not in snap and "sk-zq81" not in json.dumps(snap)
    assert cfg.transcript_file() == tmp_path / "transcripts.jsonl"


@pytest.mark.parametrize(
    "text,message",
    [("mode: cached\n", "mode"), ("embedder: word2vec\n", "embedder"), ("- a\n", "mapping"), ("a: [\n", "YAML"), ("loop: {max_iterations: 0}\n", "max_iterations")],
)
def test_bad_config(tmp_path, text, message):
    p = tmp_path / "c.yaml"
    p.write_text(text)
    with pytest.raises(InputError, match=message):
        RunConfig.load(p, env={})


def test_max_iterations_override_validated():
    with pytest.raises(InputError):
        RunConfig.load(None, env={}, max_iterations=0)


def test_build_gateway_modes(tmp_path):
    with pytest.raises(ReplayMiss):
        build_gateway(RunConfig(mode="replay", run_dir=str(tmp_path), embedder="hash"))
    with pytest.raises(InputError):
        build_gateway(RunConfig(mode="live", embedder="hash"))
    gw = build_gateway(RunConfig(mode="live", embedder="http", api_base="http://x/v1", api_key="k"))
    assert isinstance(gw.embedder, HTTPEmbedder) and gw.mode == "live"
    gw = build_gateway(RunConfig.load(FIXTURES / "config.yaml", env={}))
    assert isinstance(gw.embedder, HashEmbedder) and gw.store is not None and gw.store.readonly
    assert gw.routing.model_for("fill") == "fixture-coding" and gw.routing.model_for("verify") == "fixture-analysis"


def test_manifest_lifecycle(tmp_path):
    m = Manifest(tmp_path)
    art = tmp_path / "a.json"
    art.write_text("{}")
    m.start("paper", {"paper_sha256": "x"})
    assert m.interrupted() == ["paper"]
    m.finish("paper", [art])
    m.start("fingerprint")
    m.finish("fingerprint", [])
    reloaded = Manifest.load(tmp_path)
    assert reloaded.is_complete("paper", {"paper_sha256": "x"})
    assert not reloaded.is_complete("paper", {"paper_sha256": "y"})
    assert reloaded.stages["paper"]["artifacts"] == {"a.json": sha256_file(art)}

    art.write_text('{"changed": true}')
    assert not reloaded.is_complete("paper")

    reloaded.start("paper", {"paper_sha256": "z"})
    assert "fingerprint" not in reloaded.stages


def test_corrupt_manifest(tmp_path):
    (tmp_path / "manifest.json").write_text("{oops")
    with pytest.raises(InputError):
        Manifest.load(tmp_path)
