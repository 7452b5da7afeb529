"""Pipeline orchestration: datasets, run configuration, attack matrix, ledger and reports."""

from iqarobust.harness.config import (
    AttackEntry,
    ConfigError,
    MetricEntry,
    RunConfig,
    fixture_config_path,
    load_config,
    parse_config,
)
from iqarobust.harness.datasets import (
    DatasetError,
    DatasetManifest,
    ImageSet,
    Item,
    fixture_set,
    ingest,
    load_frames,
    load_image,
)
from iqarobust.harness.ledger import LedgerError, RunLedger
from iqarobust.harness.report import ReportError, RawCell, build_report, load_raw_cells, write_report
from iqarobust.harness.runner import CellJob, RunSummary, TrainJob, plan_jobs, run_matrix

__all__ = [
    "AttackEntry",
    "CellJob",
    "ConfigError",
    "DatasetError",
    "DatasetManifest",
    "ImageSet",
    "Item",
    "LedgerError",
    "MetricEntry",
    "RawCell",
    "ReportError",
    "RunConfig",
    "RunLedger",
    "RunSummary",
    "TrainJob",
    "build_report",
    "fixture_config_path",
    "fixture_set",
    "ingest",
    "load_config",
    "load_frames",
    "load_image",
    "load_raw_cells",
    "parse_config",
    "plan_jobs",
    "run_matrix",
    "write_report",
]
