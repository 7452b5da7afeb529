import json
from pathlib import Path

import numpy as np
import pytest

from iqarobust.harness.datasets import fixture_set

GOLDEN_DIR = Path(__file__).parent / "golden"


@pytest.fixture(scope="session")
def golden():
    return json.loads((GOLDEN_DIR / "metrics.json").read_text())


@pytest.fixture(scope="session")
def test_images():
    return fixture_set("test").images()


@pytest.fixture(scope="session")
def calibration_images():
    return fixture_set("calibration", "calibration").images()


@pytest.fixture(scope="session")
def reference_image(test_images):
    return test_images[0]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def make_run(tmp_path):
    """Factory for small runs: copies fixture images into ``tmp_path`` and writes a config.

    ``datasets`` maps dataset id -> (role, fixture set, number of images).
    Returns the config path.
    """
    import shutil

    import yaml

    from iqarobust.harness.datasets import FIXTURE_DIR

    def make(attacks, metrics=("tiny-cnn-nr", "patch-weighted"), datasets=None, **top):
        datasets = datasets or {
            "calibration": ("calibration", "calibration", 8),
            "train-a": ("train", "train-a", 4),
            "test": ("test", "test", 4),
        }
        entries = []
        for did, (role, source, count) in datasets.items():
            target = tmp_path / "data" / did
            target.mkdir(parents=True, exist_ok=True)
            for src in sorted((FIXTURE_DIR / source).glob("*.png"))[:count]:
                shutil.copy(src, target / src.name)
            entries.append({"id": did, "role": role, "path": did})
        raw = {"name": "small", "output_dir": str(tmp_path / "run"), "data_root": "data",
               "calibration": "calibration", "metrics": list(metrics), "datasets": entries,
               "attacks": attacks, "report": {"bootstrap_resamples": 200, "transport_grid": 11}}
        raw.update(top)
        path = tmp_path / "config.yaml"
        path.write_text(yaml.safe_dump(raw, sort_keys=False))
        return path

    return make


ACCEPTANCE_LINES = "_iqarobust_acceptance_lines"


@pytest.fixture
def criterion(request):
    """``criterion(number, title, passed, detail)``: record a pass/fail line, then assert."""

    def record(number, title, passed, detail=""):
        line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        lines = getattr(request.config, ACCEPTANCE_LINES, None)
        if lines is None:
            lines = []
            setattr(request.config, ACCEPTANCE_LINES, lines)
        lines.append((number, line))
        print(line)
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, ACCEPTANCE_LINES, None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines, key=lambda item: item[0]):
            terminalreporter.write_line(line)
