"""Freeze reference values used by the test-suite (run once, commit the output)."""

import json
from pathlib import Path

from iqarobust.harness.datasets import fixture_set
from iqarobust.metrics import NaturalnessEpsilon, calibrate_range, get_metric, score

GOLDEN = Path(__file__).resolve().parents[1] / "tests" / "golden" / "metrics.json"


def main():
    reference = fixture_set("test").items[0].image
    calibration = fixture_set("calibration", "calibration").images()
    out = {"reference_image": "test/test-000.png", "score": {}, "calibration_range": {}}
    for name in ("tiny-cnn-nr", "patch-weighted", "naturalness-lite"):
        m = get_metric(name)
        out["score"][name] = score(m, reference)
        out["calibration_range"][name] = list(calibrate_range(m, calibration))
    out["amifgsm_epsilon"] = 1.0 / NaturalnessEpsilon()(reference)
    GOLDEN.write_text(json.dumps(out, indent=2) + "\n")
    print(json.dumps(out, indent=2))


if __name__ == "__main__":
    main()
