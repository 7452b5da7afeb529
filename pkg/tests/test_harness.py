import json
import shutil

import numpy as np
import pytest
import yaml
from PIL import Image

from iqarobust.harness import (
    ConfigError,
    DatasetError,
    DatasetManifest,
    LedgerError,
    RunLedger,
    build_report,
    fixture_config_path,
    fixture_set,
    ingest,
    load_config,
    load_image,
    load_raw_cells,
    parse_config,
    plan_jobs,
    run_matrix,
    write_report,
)
from iqarobust.harness.datasets import FIXTURE_DIR
from iqarobust.metrics import calibrate_range, get_metric, score

FAST = [{"kind": "fgsm"}, {"kind": "ifgsm", "iterations": 2}]


def write_png(path, array):
    Image.fromarray(np.asarray(array, dtype=np.uint8), "RGB").save(path)


class TestIngest:
    def test_normalisation_endpoints(self, tmp_path):
        arr = np.zeros((4, 4, 3), np.uint8)
        arr[0, 0] = 255
        write_png(tmp_path / "a.png", arr)
        img = load_image(tmp_path / "a.png")
        assert img.dtype == np.float64 and img.shape == (4, 4, 3)
        assert img[0, 0, 0] == 1.0 and img[1, 1, 1] == 0.0

    def test_calibration_set_size(self):
        assert len(fixture_set("calibration", "calibration")) == 32

    def test_frame_gap_names_first_missing_index(self, tmp_path):
        clip = tmp_path / "clips" / "clip0"
        clip.mkdir(parents=True)
        for i in (1, 2, 4, 6):
            write_png(clip / f"frame{i:03d}.png", np.zeros((4, 4, 3)))
        with pytest.raises(DatasetError, match="missing frame index 3"):
            ingest(DatasetManifest("clips", "test", tmp_path / "clips", kind="frame-sequence"))

    def test_frames_are_ordered(self, tmp_path):
        clip = tmp_path / "clips" / "c"
        clip.mkdir(parents=True)
        for i in (10, 8, 9):
            write_png(clip / f"f{i}.png", np.full((4, 4, 3), i))
        items = ingest(DatasetManifest("clips", "test", tmp_path / "clips", kind="frame-sequence")).items
        assert [f[0, 0, 0] * 255 for f in items[0].frames] == pytest.approx([8, 9, 10])

    def test_corrupt_file(self, tmp_path):
        (tmp_path / "bad.png").write_bytes(b"not an image")
        with pytest.raises(DatasetError, match="cannot decode"):
            ingest(DatasetManifest("d", "test", tmp_path))


class TestConfig:
    def test_fixture_is_valid(self):
        config = load_config(fixture_config_path())
        trains, cells = plan_jobs(config)
        assert len(cells) == 3 * (6 + 3 * 3 * 3)
        assert len(trains) == 3 * 3 * 3 * 3

    def test_uap_training_job_count(self, make_run):
        attacks = [{"kind": k, "amplitudes": [0.2, 0.4, 0.8]}
                   for k in ("uap-cumulative", "uap-optimized", "uap-generative")]
        datasets = {"calibration": ("calibration", "calibration", 4),
                    "train-a": ("train", "train-a", 2), "train-b": ("train", "train-b", 2),
                    "train-c": ("train", "train-c", 2), "test": ("test", "test", 2),
                    "test-2": ("test", "calibration", 2)}
        config = load_config(make_run(attacks, datasets=datasets))
        trains, cells = plan_jobs(config)
        assert len(trains) == 2 * 3 * 3 * 3 == 54
        assert len(cells) == 54 * 2  # each perturbation is applied to both test sets

    @pytest.mark.parametrize("mutate, key", [
        (lambda r: r["attacks"].append({"kind": "pgd"}), "attacks[2].kind"),
        (lambda r: r.update(bogus=1), "bogus"),
        (lambda r: r["metrics"].append("no-such-metric"), "metrics[2].name"),
        (lambda r: r["attacks"][0].update(epsilon="big"), "attacks[0].epsilon"),
        (lambda r: r["attacks"].append({"kind": "madc"}), "attacks[2]"),
        (lambda r: r["attacks"].append({"kind": "fgsm", "amplitudes": [0.2]}), "attacks[2].amplitudes"),
        (lambda r: r.update(calibration="test"), "calibration"),
        (lambda r: r.update(workers=0), "workers"),
        (lambda r: r["attacks"].append({"kind": "fgsm"}), "attacks"),
    ])
    def test_errors_name_the_key(self, make_run, mutate, key):
        path = make_run(FAST)
        raw = yaml.safe_load(path.read_text())
        mutate(raw)
        with pytest.raises(ConfigError) as info:
            parse_config(raw, path.parent)
        assert info.value.key == key

    def test_leakage_is_rejected(self, make_run, tmp_path):
        path = make_run(FAST)
        leaked = sorted((tmp_path / "data" / "test").glob("*.png"))[0]
        shutil.copy(leaked, tmp_path / "data" / "train-a" / "copy.png")
        with pytest.raises(ConfigError, match="leakage"):
            load_config(path)

    def test_environment_overrides_keep_digest(self, make_run, tmp_path):
        path = make_run(FAST)
        base = load_config(path, env={})
        env = {"IQAROBUST_OUTPUT_DIR": str(tmp_path / "elsewhere"), "IQAROBUST_WORKERS": "3",
               "IQAROBUST_DATA_ROOT": str(tmp_path / "data")}
        moved = load_config(path, env=env)
        assert moved.output_dir == tmp_path / "elsewhere" and moved.workers == 3
        assert moved.digest == base.digest
        explicit = load_config(path, env=env, overrides={"workers": 1})
        assert explicit.workers == 1

    def test_digest_tracks_semantics(self, make_run):
        path = make_run(FAST)
        raw = yaml.safe_load(path.read_text())
        base = parse_config(raw, path.parent).digest
        raw["attacks"][0]["epsilon"] = 0.01
        assert parse_config(raw, path.parent).digest != base

    def test_sweep_expands(self, make_run):
        config = load_config(make_run([{"kind": "fgsm", "sweep": {"epsilon": [0.01, 0.02]}}]))
        assert [a.id for a in config.attacks] == ["fgsm[epsilon=0.01]", "fgsm[epsilon=0.02]"]
        assert [a.spec.epsilon for a in config.attacks] == [0.01, 0.02]


def result_files(run_dir):
    return {p.relative_to(run_dir): p.read_bytes() for p in sorted(run_dir.rglob("*"))
            if p.is_file() and p.name != "ledger.json" and ".lock" not in p.name}


class TestRunMatrix:
    def test_run_then_resume(self, make_run, tmp_path):
        config = load_config(make_run(FAST + [{"kind": "uap-cumulative", "amplitudes": [0.2]}]))
        first = run_matrix(config)
        assert first.ok and first.executed == first.jobs == 2 * 1 + 2 * 3
        before = result_files(tmp_path / "run")
        again = run_matrix(config)
        assert again.executed == 0 and again.reused == again.jobs
        assert result_files(tmp_path / "run") == before

    def test_deleted_cell_is_the_only_one_recomputed(self, make_run, tmp_path):
        config = load_config(make_run(FAST))
        run_matrix(config)
        _, cells = plan_jobs(config)
        victim = cells[1]
        original = victim.path(config.output_dir).read_bytes()
        victim.path(config.output_dir).unlink()
        done = []
        summary = run_matrix(config, on_job_done=lambda job, status: done.append(job))
        assert done == [victim] and summary.executed == 1
        assert victim.path(config.output_dir).read_bytes() == original

    def test_ledger_is_append_only(self, make_run):
        config = load_config(make_run(FAST[:1]))
        run_matrix(config)
        ledger_path = config.output_dir / "ledger.json"
        first = RunLedger.load(ledger_path).events
        _, cells = plan_jobs(config)
        cells[0].path(config.output_dir).unlink()
        run_matrix(config)
        second = RunLedger.load(ledger_path).events
        assert second[:len(first)] == first and len(second) == len(first) + 1
        assert [e["seq"] for e in second] == list(range(len(second)))

    def test_other_config_refuses_the_directory(self, make_run):
        path = make_run(FAST[:1])
        run_matrix(load_config(path))
        raw = yaml.safe_load(path.read_text())
        raw["seed"] = 7
        with pytest.raises(LedgerError, match="fresh output directory"):
            run_matrix(parse_config(raw, path.parent))

    def test_failures_are_isolated(self, make_run, tmp_path):
        datasets = {"calibration": ("calibration", "calibration", 8),
                    "test": ("test", "test", 3), "broken": ("test", "test", 0)}
        path = make_run(FAST[:1], datasets=datasets)
        (tmp_path / "data" / "broken" / "x.png").write_bytes(b"corrupt")
        config = load_config(path)
        summary = run_matrix(config)
        assert sorted(summary.failed) == ["cell:patch-weighted|fgsm|broken",
                                          "cell:tiny-cnn-nr|fgsm|broken"]
        assert all("cannot decode" in r for r in summary.failed.values())
        assert summary.executed == 2
        report = write_report(config)
        assert report["partial"] and report["cells"] == 2

    def test_failed_training_fails_its_cells_only(self, make_run, tmp_path):
        attacks = [{"kind": "fgsm"}, {"kind": "uap-cumulative", "amplitudes": [0.2]}]
        datasets = {"calibration": ("calibration", "calibration", 8),
                    "train-a": ("train", "train-a", 0), "test": ("test", "test", 2)}
        path = make_run(attacks, metrics=["tiny-cnn-nr"], datasets=datasets)
        (tmp_path / "data" / "train-a" / "x.png").write_bytes(b"corrupt")
        summary = run_matrix(load_config(path))
        assert sorted(summary.failed) == ["cell:tiny-cnn-nr|uap-cumulative/train-a/a0.2|test",
                                          "train:tiny-cnn-nr|uap-cumulative/train-a/a0.2"]
        assert "perturbation unavailable" in summary.failed[
            "cell:tiny-cnn-nr|uap-cumulative/train-a/a0.2|test"]

    def test_parallel_workers_match_serial(self, make_run, tmp_path):
        attacks = FAST + [{"kind": "uap-cumulative", "amplitudes": [0.2, 0.4]}]
        path = make_run(attacks)
        serial = load_config(path, overrides={"output_dir": str(tmp_path / "serial")})
        parallel = load_config(path, overrides={"output_dir": str(tmp_path / "parallel"),
                                                "workers": 2})
        assert run_matrix(serial).ok and run_matrix(parallel).ok
        write_report(serial)
        write_report(parallel)
        assert result_files(tmp_path / "serial") == result_files(tmp_path / "parallel")

    def test_frame_sequences_average_per_clip(self, make_run, tmp_path):
        path = make_run(FAST[:1], metrics=["tiny-cnn-nr"])
        raw = yaml.safe_load(path.read_text())
        clips = tmp_path / "data" / "clips"
        frames = sorted((FIXTURE_DIR / "test").glob("*.png"))
        for c in range(2):
            (clips / f"clip{c}").mkdir(parents=True)
            for k in range(3):
                shutil.copy(frames[3 * c + k], clips / f"clip{c}" / f"frame{k}.png")
        raw["datasets"].append({"id": "clips", "role": "test", "path": "clips",
                                "kind": "frame-sequence"})
        config = parse_config(raw, path.parent)
        assert run_matrix(config).ok
        payload = json.loads((config.output_dir / "cells" / "tiny-cnn-nr" / "fgsm" / "clips"
                              / "results.json").read_text())
        assert [r["image_id"] for r in payload["results"]] == ["clip0", "clip1"]
        metric = get_metric("tiny-cnn-nr")
        calibrate_range(metric, fixture_set("calibration", "calibration").images()[:8])
        clip0 = payload["results"][0]
        expected = np.mean([score(metric, load_image(frames[k])) for k in range(3)])
        assert clip0["score_before"] == pytest.approx(expected, rel=1e-12)
        assert len(clip0["frames"]) == 3 and clip0["extra"] == {"frames": 3}
        assert sorted(payload["attacked_sha256"])[:3] == ["clip0#0", "clip0#1", "clip0#2"]

    def test_persisted_images(self, make_run):
        config = load_config(make_run(FAST[:1], metrics=["tiny-cnn-nr"], persist_images=True))
        run_matrix(config)
        images = sorted((config.output_dir / "cells" / "tiny-cnn-nr" / "fgsm" / "test"
                         / "images").glob("*.png"))
        assert len(images) == 4


class TestReport:
    def test_no_op_attack_rows_are_zero(self, make_run):
        config = load_config(make_run([{"kind": "fgsm", "epsilon": 0.0}]))
        run_matrix(config)
        write_report(config)
        rows = json.loads((config.output_dir / "report" / "cells.json").read_text())["rows"]
        rows += json.loads((config.output_dir / "report" / "overall.json").read_text())["rows"]
        assert rows
        for row in rows:
            assert row["abs_gain"] == 0 and row["rel_gain"] == 0
            assert row["w_score"] == 0 and row["e_score"] == 0
            assert row["r_score"] is None and row["r_excluded"] == row["n"]

    def test_wilcoxon_orientations_complement(self, make_run):
        config = load_config(make_run(FAST, metrics=["tiny-cnn-nr", "patch-weighted",
                                                     "naturalness-lite"]))
        run_matrix(config)
        report = build_report(load_raw_cells(config), "tiny-cnn-nr", 100, 11)
        rows = {(r["domain"], r["metric_a"], r["metric_b"]): r for r in report["wilcoxon"]}
        assert len(rows) == 2 * 6
        for (domain, a, b), row in rows.items():
            assert row["method"] == "exact" and row["pairs"] == 8
            assert row["p_value"] == pytest.approx(rows[(domain, b, a)]["p_opposite"], abs=1e-12)

    def test_rows_trace_to_cells(self, make_run):
        config = load_config(make_run(FAST + [{"kind": "uap-cumulative", "amplitudes": [0.2]}]))
        run_matrix(config)
        summary = write_report(config)
        out = config.output_dir / "report"
        assert summary["config_digest"] == config.digest
        for name in ("by_kind", "overall", "cells", "wilcoxon", "curves", "uap_versions"):
            assert json.loads((out / f"{name}.json").read_text())["config_digest"] == config.digest
            header, *lines = (out / f"{name}.csv").read_text().splitlines()
            assert header.endswith(",config_digest") and lines
            assert all(line.endswith(config.digest) for line in lines)
        cells = json.loads((out / "cells.json").read_text())["rows"]
        ids = {f"{r['metric']}|{r['attack']}|{r['dataset']}" for r in cells}
        for job in plan_jobs(config)[1]:
            payload = json.loads(job.path(config.output_dir).read_text())
            assert payload["config_digest"] == config.digest
            assert job.key.removeprefix("cell:") in ids

    def test_by_kind_table_shape(self, make_run):
        config = load_config(make_run(FAST))
        run_matrix(config)
        write_report(config)
        header, *lines = (config.output_dir / "report" / "by_kind.csv").read_text().splitlines()
        assert header.split(",") == ["domain", "metric", "fgsm", "ifgsm", "complete",
                                     "config_digest"]
        assert len(lines) == 2 * 2

    def test_uap_nesting_orders(self, make_run):
        attacks = [{"kind": "uap-cumulative", "amplitudes": [0.2, 0.8]}]
        datasets = {"calibration": ("calibration", "calibration", 8),
                    "train-a": ("train", "train-a", 2), "train-b": ("train", "train-b", 2),
                    "test": ("test", "test", 4)}
        config = load_config(make_run(attacks, metrics=["tiny-cnn-nr"], datasets=datasets))
        run_matrix(config)
        report = build_report(load_raw_cells(config), "tiny-cnn-nr", 100, 11)
        rows = {r["nesting"]: r for r in report["uap_versions"] if r["domain"] == "native"}
        assert set(rows) == {"pooled", "cell_first", "amplitude_then_trainset",
                             "trainset_then_amplitude"}
        # gains are plain means over a full grid, so every order agrees on them
        for row in rows.values():
            assert row["versions"] == 4
            assert row["abs_gain"] == pytest.approx(rows["pooled"]["abs_gain"], abs=1e-12)

    def test_empty_run(self, make_run):
        from iqarobust.harness import ReportError

        config = load_config(make_run(FAST))
        with pytest.raises(ReportError):
            write_report(config)
