"""Run the bundled fixture end to end and freeze its Table-3/Table-4 report files.

Usage: python tools/freeze_reports.py [run-dir]
"""

import shutil
import sys
import tempfile
from pathlib import Path

from iqarobust.harness import fixture_config_path, load_config, run_matrix, write_report

GOLDEN = Path(__file__).resolve().parents[1] / "tests" / "golden"
FROZEN = ("by_kind.csv", "overall.csv")


def main(run_dir=None):
    run_dir = Path(run_dir or tempfile.mkdtemp(prefix="iqarobust-fixture-"))
    config = load_config(fixture_config_path(), overrides={"output_dir": str(run_dir)})
    summary = run_matrix(config)
    if not summary.ok:
        raise SystemExit(f"fixture run had failures: {summary.failed}")
    report = write_report(config)
    for name in FROZEN:
        shutil.copy(Path(report["out_dir"]) / name, GOLDEN / f"fixture_{name}")
        print(f"froze {GOLDEN / f'fixture_{name}'}")


if __name__ == "__main__":
    main(*sys.argv[1:])
