import json
import re
from pathlib import Path

import pytest
import yaml

from iqarobust.attacks import KINDS, render_markdown
from iqarobust.cli import main

DOCS = Path(__file__).resolve().parents[1] / "docs"
FAST = [{"kind": "fgsm"}, {"kind": "uap-cumulative", "amplitudes": [0.2]}]


def run_cli(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    lines = out.strip().splitlines()
    assert len(lines) == 1, f"stdout must be one JSON document, got {out!r}"
    return code, json.loads(lines[0]), err


def test_validate_fixture(capsys):
    from iqarobust.harness import fixture_config_path

    code, out, _ = run_cli(capsys, "validate-config", fixture_config_path())
    assert code == 0 and out["valid"] and len(out["config_digest"]) == 64
    assert (out["training_jobs"], out["cells"]) == (81, 99)


def test_unknown_attack_kind_exits_2_naming_the_key(capsys, make_run):
    path = make_run(FAST)
    raw = yaml.safe_load(path.read_text())
    raw["attacks"].append({"kind": "pgd"})
    path.write_text(yaml.safe_dump(raw))
    code, out, err = run_cli(capsys, "validate-config", path)
    assert code == 2 and out["key"] == "attacks[2].kind"
    assert "attacks[2].kind" in err and "pgd" in err


def test_unknown_flag_exits_2(capsys):
    with pytest.raises(SystemExit) as info:
        main(["validate-config", "x.yaml", "--no-such-flag"])
    assert info.value.code == 2


def test_run_resume_and_report(capsys, make_run, tmp_path):
    path = make_run(FAST)
    code, out, err = run_cli(capsys, "-v", "run", path)
    assert code == 0 and out["executed"] == out["jobs"] == 2 + 4
    assert out["config_digest"] in err  # progress and digest go to stderr
    by_kind = (tmp_path / "run" / "report" / "by_kind.csv").read_bytes()
    code, out, _ = run_cli(capsys, "run", path)
    assert code == 0 and out["executed"] == 0 and out["reused"] == 6
    code, out, _ = run_cli(capsys, "report", path, "--out", tmp_path / "again")
    assert code == 0 and (tmp_path / "again" / "by_kind.csv").read_bytes() == by_kind


def test_attack_runs_one_cell(capsys, make_run, tmp_path):
    path = make_run(FAST)
    code, out, _ = run_cli(capsys, "attack", path, "--metric", "tiny-cnn-nr",
                           "--attack", "uap-cumulative/train-a/a0.2", "--dataset", "test")
    assert code == 0 and out["executed"] == 2  # the training job it needs, then the cell
    cells = list((tmp_path / "run" / "cells").rglob("results.json"))
    assert [c.parent.parent.name for c in cells] == ["a0.2"]


def test_attack_unknown_metric_exits_2(capsys, make_run):
    code, out, _ = run_cli(capsys, "attack", make_run(FAST), "--metric", "nope",
                           "--attack", "fgsm", "--dataset", "test")
    assert code == 2 and out["key"] == "--metric"


def test_train_uap(capsys, make_run):
    code, out, _ = run_cli(capsys, "train-uap", make_run(FAST), "--metric", "patch-weighted",
                           "--attack", "uap-cumulative")
    assert code == 0 and out["executed"] == 1
    assert len(out["perturbations"]) == 1 and Path(out["perturbations"][0]).exists()


def test_evaluate_writes_cell_rows(capsys, make_run, tmp_path):
    path = make_run(FAST)
    run_cli(capsys, "run", path, "--no-report")
    code, out, _ = run_cli(capsys, "evaluate", path)
    assert code == 0 and out["files"] == ["cells.csv", "cells.json"]


def test_report_without_results_exits_1(capsys, make_run):
    code, out, _ = run_cli(capsys, "report", make_run(FAST))
    assert code == 1 and out["error"] == "report"


def test_partial_failure_exits_3(capsys, make_run, tmp_path):
    datasets = {"calibration": ("calibration", "calibration", 8), "test": ("test", "test", 2),
                "broken": ("test", "test", 0)}
    path = make_run(FAST[:1], datasets=datasets)
    (tmp_path / "data" / "broken" / "x.png").write_bytes(b"corrupt")
    code, out, _ = run_cli(capsys, "run", path)
    assert code == 3 and len(out["failed"]) == 2
    assert out["report"]["partial"] is True


def test_env_overrides(capsys, make_run, tmp_path, monkeypatch):
    monkeypatch.setenv("IQAROBUST_OUTPUT_DIR", str(tmp_path / "from-env"))
    code, out, _ = run_cli(capsys, "validate-config", make_run(FAST))
    assert out["output_dir"] == str(tmp_path / "from-env")


def test_attack_catalog_doc_is_in_sync():
    assert (DOCS / "ATTACKS.md").read_text() == render_markdown()


def test_catalog_command(capsys, tmp_path):
    code, out, _ = run_cli(capsys, "catalog", "--output", tmp_path / "a.md")
    assert code == 0 and (tmp_path / "a.md").read_text() == render_markdown()
    code, out, _ = run_cli(capsys, "catalog")
    assert set(out["catalog"]) == set(KINDS)


def test_metric_authoring_guide_examples_run():
    blocks = re.findall(r"```python\n(.*?)```", (DOCS / "metric_authoring.md").read_text(), re.S)
    namespace = {}
    for block in blocks[:2]:  # build function, gradient check
        exec(compile(block, "metric_authoring.md", "exec"), namespace)
    assert namespace["report"].error < 1e-3
