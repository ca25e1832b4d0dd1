import hashlib
import json
from pathlib import Path

import numpy as np

from atomotion import matfile
from atomotion.cli import main

from conftest import FIXTURES
from pipeline import run_pipeline, tree_bytes, working_dir

WALK = FIXTURES / "motions" / "walk_00.motion"


def _err(capsys) -> dict:
    lines = [l for l in capsys.readouterr().err.splitlines() if l.startswith("{")]
    return json.loads(lines[-1])


def _sha(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def test_unknown_subcommand_exit_2(capsys):
    assert main(["teleport"]) == 2
    captured = capsys.readouterr()
    assert "usage:" in captured.err
    assert json.loads(captured.err.splitlines()[-1])["error"] == "usage"


def test_no_subcommand_exit_2(capsys):
    assert main([]) == 2


def test_missing_seed_is_usage_error(tmp_path, capsys):
    code = main(["tokenize-train", "--dataset", str(FIXTURES / "dataset.json"), "--output", str(tmp_path / "m")])
    assert code == 2
    assert "seed" in _err(capsys)["message"]
    assert not (tmp_path / "m").exists()


def test_decompose_writes_output_and_manifest(tmp_path):
    with working_dir(tmp_path):
        assert main(["decompose", "--input", str(WALK), "--periods", "4", "--output", "walk.json"]) == 0
        desc = json.loads(Path("walk.json").read_text())
        assert sorted(desc) == ["0", "1", "2", "3"]
        man = json.loads(Path("walk.json.manifest.json").read_text())
    assert man["output"] == "walk.json"
    assert man["command"] == "decompose"
    assert man["outputs"] == {"walk.json": _sha(tmp_path / "walk.json")}
    (inp, digest), = man["inputs"].items()
    assert inp.endswith("fixtures/motions/walk_00.motion") and digest == _sha(WALK)
    assert man["config"]["periods"] == 4
    assert set(man["versions"]) == {"atomotion", "numpy", "python"}
    assert man["config_sha256"] == hashlib.sha256(json.dumps(man["config"], sort_keys=True).encode()).hexdigest()


def test_motion_error_exit_3(tmp_path, capsys):
    bad = tmp_path / "bad.motion"
    bad.write_text("not a motion file\n")
    assert main(["decompose", "--input", str(bad), "--output", str(tmp_path / "o.json")]) == 3
    assert _err(capsys)["exit"] == 3


def test_missing_input_exit_9(tmp_path, capsys):
    assert main(["decompose", "--input", str(tmp_path / "nope.motion"), "--output", str(tmp_path / "o")]) == 9
    assert _err(capsys)["error"] == "config-error"


def test_tokenizer_error_exit_5(tmp_path, capsys):
    with working_dir(tmp_path):
        assert main(["tokenize-train", "--dataset", str(FIXTURES / "dataset.json"), "--codebook-size", "4",
                     "--residual-layers", "1", "--iters", "3", "--seed", "0", "--output", "rvq.atmx"]) == 0
        Path("bad.csv").write_text("0,9\n")
        assert main(["detokenize", "--model", "rvq.atmx", "--input", "bad.csv", "--output", "f.atmx"]) == 5
    assert _err(capsys)["error"] == "index-out-of-range"


def test_atomizer_fixture_miss_exit_8(tmp_path, capsys):
    code = main(["atomize", "--mode", "replay", "--examples", str(FIXTURES / "examples.json"),
                 "--fixtures", str(FIXTURES / "llm" / "replay"), "--text", "a person does a backflip",
                 "--output", str(tmp_path / "a.json")])
    assert code == 8
    err = _err(capsys)
    assert err["error"] == "fixture-miss" and len(err["message"].split()[-1]) == 64


def test_metrics_errors_exit_9(tmp_path, capsys):
    rng = np.random.default_rng(0)
    matfile.save_features(tmp_path / "a.atmx", rng.normal(size=(5, 3)))
    matfile.save_features(tmp_path / "b.atmx", rng.normal(size=(5, 4)))
    args = ["metrics", "--real", str(tmp_path / "a.atmx"), "--gen", str(tmp_path / "b.atmx"),
            "--seed", "0", "--output", str(tmp_path / "m.json")]
    assert main(args) == 9
    assert _err(capsys)["error"] == "dimension-mismatch"
    args[4] = str(tmp_path / "a.atmx")
    assert main(args + ["--text", str(tmp_path / "a.atmx"), "--rprecision-k", "5"]) == 9
    assert _err(capsys)["error"] == "k-out-of-range"


def test_config_overrides_flags(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"periods": 2}))
    with working_dir(tmp_path):
        assert main(["decompose", "--input", str(WALK), "--periods", "4", "--config", "cfg.json",
                     "--output", "walk.json"]) == 0
        assert sorted(json.loads(Path("walk.json").read_text())) == ["0", "1"]
        man = json.loads(Path("walk.json.manifest.json").read_text())
    assert man["config"]["periods"] == 2
    assert man["inputs"]["cfg.json"] == _sha(cfg)


def test_config_unknown_key_rejected(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"colour": "blue"}))
    code = main(["decompose", "--input", str(WALK), "--config", str(cfg), "--output", str(tmp_path / "o")])
    assert code == 9 and "colour" in _err(capsys)["message"]


def test_config_may_supply_seed(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"seed": 3, "codebook_size": 4, "residual_layers": 1, "iters": 2}))
    with working_dir(tmp_path):
        assert main(["tokenize-train", "--dataset", str(FIXTURES / "dataset.json"), "--config", "cfg.json",
                     "--output", "rvq.atmx"]) == 0
        man = json.loads(Path("rvq.atmx.manifest.json").read_text())
    assert man["seeds"] == {"seed": 3}


def test_full_pipeline_outputs_and_manifests(tmp_path):
    out = run_pipeline(tmp_path)
    files = tree_bytes(out)
    # prompts.json is written by the test harness, not the CLI
    outputs = [name for name in files if not name.endswith(".manifest.json") and name != "prompts.json"]
    for name in outputs:
        assert name + ".manifest.json" in files, name
        man = json.loads(files[name + ".manifest.json"])
        assert man["outputs"]["out/" + name] == hashlib.sha256(files[name]).hexdigest()
        for rel, digest in man["inputs"].items():
            assert _sha(tmp_path / rel) == digest
    metrics = json.loads(files["metrics.json"])
    assert set(metrics) == {"fid", "diversity", "diversity_pairs", "r_precision"}
    assert metrics["fid"] >= 0 and metrics["diversity"] > 0
    samples = json.loads(files["gen/samples.json"])
    assert len(samples) == 10
    tokens = np.loadtxt(out / "gen" / "sample_000_00.tokens.csv", delimiter=",", dtype=int)
    assert tokens.shape == (10, 3) and tokens[:, 0].max() < 16


def test_pipeline_is_byte_identical_across_runs(tmp_path):
    a = tree_bytes(run_pipeline(tmp_path / "a"))
    b = tree_bytes(run_pipeline(tmp_path / "b"))
    assert sorted(a) == sorted(b)
    assert [k for k in a if a[k] != b[k]] == []


def test_pipeline_depends_on_seed(tmp_path):
    a = tree_bytes(run_pipeline(tmp_path / "a", seed=0))
    b = tree_bytes(run_pipeline(tmp_path / "b", seed=1))
    assert a["rvq.atmx"] != b["rvq.atmx"]
    assert a["atomic_00.json"] == b["atomic_00.json"]
