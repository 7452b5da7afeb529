"""Command-line front end.

Progress and logs go to stderr; stdout carries one JSON document per call.
Exit codes: 0 success, 1 runtime error (e.g. nothing to report),
2 configuration error, 3 partial failure (some jobs failed).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from iqarobust.attacks import CATALOG, render_markdown
from iqarobust.harness.config import ConfigError, load_config
from iqarobust.harness.ledger import LedgerError
from iqarobust.harness.report import TABLES, ReportError, write_report
from iqarobust.harness.runner import CellJob, TrainJob, run_matrix

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_PARTIAL = 3

log = logging.getLogger("iqarobust")


def _emit(obj):
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")
    sys.stdout.flush()


def _config_args(p):
    p.add_argument("config", help="run configuration (YAML)")
    p.add_argument("--output-dir", help="run directory (overrides config and IQAROBUST_OUTPUT_DIR)")
    p.add_argument("--data-root", help="dataset root (overrides config and IQAROBUST_DATA_ROOT)")
    p.add_argument("--workers", type=int, help="worker processes (overrides config and IQAROBUST_WORKERS)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="iqarobust",
        description="Adversarial robustness benchmark for differentiable no-reference IQA metrics.",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging on stderr")
    parser.add_argument("-q", "--quiet", action="store_true", help="only errors on stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("validate-config", help="check a config and print its digest and job counts")
    _config_args(p)

    p = sub.add_parser("run", help="run (or resume) the whole attack matrix, then write the report")
    _config_args(p)
    p.add_argument("--no-report", action="store_true", help="skip writing report files")

    p = sub.add_parser("attack", help="run one metric x attack x test-dataset cell")
    _config_args(p)
    p.add_argument("--metric", required=True)
    p.add_argument("--attack", required=True,
                   help="attack id, or a UAP version id such as uap-optimized/train-a/a0.4")
    p.add_argument("--dataset", required=True, help="test dataset id")

    p = sub.add_parser("train-uap", help="train UAP perturbations without applying them")
    _config_args(p)
    p.add_argument("--metric", required=True)
    p.add_argument("--attack", required=True, help="id of a UAP attack in the config")
    p.add_argument("--trainset", help="train dataset id (default: all of the attack's trainsets)")
    p.add_argument("--amplitude", type=float, help="amplitude (default: all of the attack's amplitudes)")

    p = sub.add_parser("evaluate", help="recompute per-cell robustness measures from persisted results")
    _config_args(p)
    p.add_argument("--out", help="output directory (default: <run dir>/report)")

    p = sub.add_parser("report", help="write all report tables (CSV + JSON) from persisted results")
    _config_args(p)
    p.add_argument("--out", help="output directory (default: <run dir>/report)")

    p = sub.add_parser("catalog", help="the attack catalog as Markdown")
    p.add_argument("--output", help="write the Markdown here (default: print the catalog as JSON)")
    return parser


def _load(args):
    overrides = {"output_dir": args.output_dir, "data_root": args.data_root, "workers": args.workers}
    config = load_config(args.config, overrides={k: v for k, v in overrides.items() if v is not None})
    log.info("config %s digest %s", args.config, config.digest)
    return config


def _check_choice(value, choices, key):
    if value not in choices:
        raise ConfigError(key, f"unknown {key.lstrip('-')} {value!r}; configured: {', '.join(choices)}")


def _run(config, select=None, report=True):
    summary = run_matrix(config, select)
    out = summary.to_dict()
    if report and summary.executed + summary.reused > 0:
        try:
            out["report"] = write_report(config)
        except ReportError as exc:
            out["report_error"] = str(exc)
    _emit(out)
    return EXIT_OK if summary.ok else EXIT_PARTIAL


def cmd_validate(args):
    from iqarobust.harness.runner import plan_jobs

    config = _load(args)
    trains, cells = plan_jobs(config)
    _emit({"valid": True, "config_digest": config.digest, "training_jobs": len(trains),
           "cells": len(cells), "output_dir": str(config.output_dir)})
    return EXIT_OK


def cmd_run(args):
    return _run(_load(args), report=not args.no_report)


def cmd_attack(args):
    config = _load(args)
    _check_choice(args.metric, [m.name for m in config.metrics], "--metric")
    tests = [d.id for d in config.datasets_with_role("test")]
    _check_choice(args.dataset, tests, "--dataset")
    attacks = {a.id for a in config.attacks} | {v for a in config.attacks for v, _, _ in a.versions()}
    _check_choice(args.attack, sorted(attacks), "--attack")

    def select(job):
        return (isinstance(job, CellJob) and job.metric == args.metric and job.dataset == args.dataset
                and args.attack in (job.attack, job.attack_id))

    return _run(config, select, report=False)


def cmd_train_uap(args):
    config = _load(args)
    _check_choice(args.metric, [m.name for m in config.metrics], "--metric")
    uaps = [a.id for a in config.attacks if a.trainable]
    _check_choice(args.attack, uaps, "--attack")
    entry = config.attack(args.attack)
    if args.trainset is not None:
        _check_choice(args.trainset, list(entry.trainsets), "--trainset")
    if args.amplitude is not None and args.amplitude not in entry.amplitudes:
        raise ConfigError("--amplitude", f"{args.amplitude!r} is not among {list(entry.amplitudes)}")

    def select(job):
        return (isinstance(job, TrainJob) and job.metric == args.metric
                and job.attack_id == args.attack
                and args.trainset in (None, job.trainset)
                and args.amplitude in (None, job.amplitude))

    summary = run_matrix(config, select)
    trains = [t for t in _selected_trains(config, select)]
    out = summary.to_dict()
    out["perturbations"] = [str(t.path(config.output_dir)) for t in trains]
    _emit(out)
    return EXIT_OK if summary.ok else EXIT_PARTIAL


def _selected_trains(config, select):
    from iqarobust.harness.runner import plan_jobs

    return [t for t in plan_jobs(config)[0] if select(t)]


def cmd_evaluate(args):
    config = _load(args)
    _emit(write_report(config, args.out, tables=("cells",)))
    return EXIT_OK


def cmd_report(args):
    config = _load(args)
    _emit(write_report(config, args.out, tables=TABLES))
    return EXIT_OK


def cmd_catalog(args):
    if args.output:
        path = Path(args.output)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(render_markdown())
        _emit({"written": str(path), "kinds": sorted(CATALOG)})
    else:
        _emit({"catalog": CATALOG})
    return EXIT_OK


COMMANDS = {
    "validate-config": cmd_validate,
    "run": cmd_run,
    "attack": cmd_attack,
    "train-uap": cmd_train_uap,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
    "catalog": cmd_catalog,
}


def _setup_logging(verbose, quiet):
    level = logging.ERROR if quiet else (logging.DEBUG if verbose > 1 else
                                         logging.INFO if verbose else logging.WARNING)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("iqarobust")
    root.handlers[:] = [handler]
    root.setLevel(level)
    root.propagate = False


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)  # unknown flags: argparse exits with status 2
    _setup_logging(args.verbose, args.quiet)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        _emit({"error": "config", "key": exc.key, "message": str(exc)})
        return EXIT_CONFIG
    except LedgerError as exc:
        log.error("%s", exc)
        _emit({"error": "ledger", "message": str(exc)})
        return EXIT_CONFIG
    except ReportError as exc:
        log.error("%s", exc)
        _emit({"error": "report", "message": str(exc)})
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
