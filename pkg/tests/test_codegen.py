from __future__ import annotations

import json

import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

import fixture_model
from repro.codegen import (
    FillTarget,
    Workspace,
    check_relative_path,
    find_placeholders,
    generate_skeleton,
    import_set,
    initial_implementation,
    list_fill_targets,
    skeleton_violations,
    splice_fill,
    symbol_source,
    synthesize_config,
)
from repro.errors import ParseFailure, StageFailure
from repro.fingerprint.types import CONFIGURATION, FRAMEWORK, GuideUnit

SKELETON = fixture_model.SKELETON
GUIDES = [
    GuideUnit("fw-model-1", FRAMEWORK, "A gated residual layer.", aspect="model"),
    GuideUnit("cfg-1", CONFIGURATION, "learning_rate = learning rate of 0.005"),
    GuideUnit("cfg-2", CONFIGURATION, "epochs = for 200 epochs"),
]


def test_fixture_skeleton_is_valid():
    assert skeleton_violations(SKELETON) == []


def test_missing_evaluator_rejected():
    code = SKELETON.replace("class Evaluator:", "class Scorer:")
    assert skeleton_violations(code) == ["missing class Evaluator"]


def test_implemented_body_rejected():
    code = SKELETON.replace('"""Run the training loop."""\n        pass', '"""Run the training loop."""\n        return 1')
    assert skeleton_violations(code) == ["Trainer.train has an implemented body"]


def test_class_level_code_and_syntax_errors():
    code = SKELETON.replace('class Model:\n    """Gated residual message-passing network."""', 'class Model:\n    """Gated residual message-passing network."""\n    size = 4')
    assert any("body contains code" in p for p in skeleton_violations(code))
    assert skeleton_violations("def broken(:\n")[0].startswith("not valid Python")
    assert "missing main() function" in skeleton_violations(SKELETON.replace("def main():", "def run():"))


def test_stub_markers_accepted():
    code = SKELETON.replace('"""Return class logits."""\n        pass', '"""Return class logits."""\n        raise NotImplementedError').replace(
        '"""Run the training loop."""\n        pass', '"""Run the training loop."""\n        ...'
    )
    assert skeleton_violations(code) == []


def test_generate_skeleton_reprompts(scripted):
    bad = "```python\n" + SKELETON.replace("class Evaluator:", "class Scorer:") + "```"
    good = "```python\n" + SKELETON + "```"
    gw, backend = scripted({"skeleton": [bad, good]})
    notes: list = []
    ws = generate_skeleton(GUIDES, gw, notes=notes)
    assert ws.files == {"main.py": SKELETON}
    assert yaml.safe_load(ws.config_doc) == {"paper_configuration": {"learning_rate": "learning rate of 0.005", "epochs": "for 200 epochs"}}
    assert len(backend.calls) == 2 and notes[0]["kind"] == "reprompt"


def test_generate_skeleton_gives_up(scripted):
    gw, _ = scripted({"skeleton": ["no code"] * 3})
    with pytest.raises(StageFailure) as info:
        generate_skeleton(GUIDES, gw)
    assert info.value.stage == "skeleton"
    with pytest.raises(StageFailure):
        generate_skeleton([], gw)


def test_synthesize_config_deduplicates_keys():
    units = [GuideUnit(f"cfg-{i}", CONFIGURATION, t) for i, t in enumerate(["Batch Size = 32", "batch size = 64", "seed 0"], start=1)]
    assert yaml.safe_load(synthesize_config(units)) == {"paper_configuration": {"batch_size": "32", "batch_size_2": "64", "seed_0": "seed 0"}}
    assert synthesize_config([]) == ""


def test_fill_targets_canonical_order():
    targets = list_fill_targets(Workspace({"main.py": SKELETON}))
    assert [t.symbol for t in targets] == ["Data", "Model", "Trainer", "Evaluator", "main"]
    assert [t.kind for t in targets] == ["class"] * 4 + ["function"]


def test_fill_targets_helper_goes_last():
    code = "def helper():\n    pass\n\n\n" + SKELETON
    ws = Workspace({"main.py": code, "utils.py": "def util():\n    ...\n", "notes.txt": "def x(): pass"})
    assert [(t.file, t.symbol) for t in list_fill_targets(ws)] == [
        ("main.py", "Data"), ("main.py", "Model"), ("main.py", "Trainer"), ("main.py", "Evaluator"), ("main.py", "main"),
        ("main.py", "helper"), ("utils.py", "util"),
    ]


def test_no_targets_once_filled(scripted):
    gw, _ = scripted(fixture_model.respond)
    ws, log = initial_implementation(GUIDES, gw)
    assert [e["outcome"] for e in log] == ["filled"] * 5
    assert list_fill_targets(ws) == []


def _target(symbol: str, kind: str = "class") -> FillTarget:
    return FillTarget("main.py", symbol, kind)


def test_splice_replaces_only_target():
    out = splice_fill(SKELETON, _target("Model"), "import numpy as np\nimport yaml\n\n" + fixture_model.FILLS["Model"], sorted(import_set(SKELETON)))
    assert symbol_source(out, "Model") == fixture_model.FILLS["Model"].rstrip("\n")
    assert symbol_source(out, "Data") == symbol_source(SKELETON, "Data")
    assert import_set(out) == import_set(SKELETON)


def test_splice_adds_new_imports_after_header():
    reply = "import math\n\n" + fixture_model.FILLS["Data"]
    out = splice_fill(SKELETON, _target("Data"), reply, [])
    assert out.splitlines()[:3] == ["import numpy as np  # feature arrays", "import yaml", "import math"]
    assert import_set(out) == import_set(SKELETON) | {"import math"}


def test_fill_dropping_import_rejected():
    reply = "import numpy as np\nimport math\n\n" + fixture_model.FILLS["Data"]
    with pytest.raises(ParseFailure, match="dropped existing imports"):
        splice_fill(SKELETON, _target("Data"), reply, sorted(import_set(SKELETON)))


def test_fill_with_todo_rejected():
    reply = fixture_model.FILLS["Data"].replace("self.config = config", "self.config = config  # TODO tune")
    with pytest.raises(ParseFailure, match="placeholder"):
        splice_fill(SKELETON, _target("Data"), reply, [])


@pytest.mark.parametrize(
    "reply,message",
    [
        ("def broken(:\n", "not valid Python"),
        ("class Other:\n    x = 1\n", "does not define"),
        ('class Data:\n    """Still a stub."""\n    def load(self):\n        pass\n', "stub"),
    ],
)
def test_fill_reply_rejections(reply, message):
    with pytest.raises(ParseFailure, match=message):
        splice_fill(SKELETON, _target("Data"), reply, [])


def test_fill_target_persistent_failure(scripted):
    from repro.codegen import fill_target

    gw, backend = scripted({"fill": ["```python\n# TODO\nclass Data:\n    x = 1\n```"] * 3})
    with pytest.raises(StageFailure) as info:
        fill_target(Workspace({"main.py": SKELETON}), _target("Data"), [], gw)
    assert info.value.stage == "fill" and len(backend.calls) == 3


def test_decorated_target_is_replaced_whole():
    code = "import functools\n\n\n@functools.lru_cache\ndef cached():\n    pass\n"
    out = splice_fill(code, FillTarget("main.py", "cached", "function"), "@functools.cache\ndef cached():\n    return 3\n", [])
    assert out == "import functools\n\n\n@functools.cache\ndef cached():\n    return 3\n"


def test_initial_implementation_writes_artifacts(scripted, tmp_path):
    gw, _ = scripted(fixture_model.respond)
    ws, log = initial_implementation(GUIDES, gw, out_dir=tmp_path)
    assert Workspace.read(tmp_path / "workspace_iter0") == ws
    saved = json.loads((tmp_path / "fill_log.json").read_text())
    assert saved["targets"] == log
    compile(ws.files["main.py"], "main.py", "exec")


def test_workspace_roundtrip_and_render(tmp_path):
    ws = Workspace({"main.py": "print(1)\n", "pkg/util.py": "x = 1"}, "a: 1\n")
    ws.write(tmp_path)
    back = Workspace.read(tmp_path)
    assert back == Workspace({"main.py": "print(1)\n", "pkg/util.py": "x = 1"}, "a: 1\n")
    assert list(back.files) == ["main.py", "pkg/util.py"]
    rendered = ws.render()
    assert rendered.startswith("## Code: [main.py]\n```python\nprint(1)\n```")
    assert rendered.endswith("## Code: [config.yaml]\n```yaml\na: 1\n```")


@pytest.mark.parametrize("path", ["/etc/passwd", "../x.py", "a/../../b.py", ""])
def test_workspace_paths_must_stay_inside(path):
    with pytest.raises(ValueError):
        check_relative_path(path)
    with pytest.raises(ValueError):
        Workspace({path: "x"})


def test_placeholder_scan():
    assert find_placeholders("# Your implementation here") == ["your implementation"]
    assert find_placeholders("x = 1") == []


def test_import_set_fallback_on_syntax_error():
    assert import_set("import os\nfrom a import b  # c\ndef (:\n") == {"import os", "from a import b"}
    assert import_set("from . import x as y\nimport os.path") == {"from . import x as y", "import os.path"}


_modules = st.sampled_from(["os", "sys", "math", "json", "re", "random", "itertools", "functools"])


@settings(max_examples=100, deadline=None)
@given(st.lists(_modules, unique=True, max_size=4), st.lists(_modules, unique=True, max_size=4), st.booleans())
def test_import_monotonicity(existing, offered, restate_all):
    header = "".join(f"import {m}\n" for m in existing)
    code = header + "\n\ndef main():\n    pass\n"
    reply_mods = list(dict.fromkeys((existing if restate_all else []) + offered))
    reply = "".join(f"import {m}\n" for m in reply_mods) + "\n\ndef main():\n    return 0\n"
    try:
        out = splice_fill(code, FillTarget("main.py", "main", "function"), reply, [])
    except ParseFailure:
        restated = set(offered) & set(existing)
        assert restated and not restate_all
        return
    assert import_set(code) <= import_set(out)
    assert import_set(out) == {f"import {m}" for m in set(existing) | set(reply_mods)}
