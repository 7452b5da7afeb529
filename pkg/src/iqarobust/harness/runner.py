"""Attack execution matrix: UAP training jobs, per-cell attack jobs, resume.

Layout of a run directory::

    config.json                                   resolved config + digest
    ledger.json                                   append-only job history
    perturbations/<metric>/<attack>/<trainset>/a<amplitude>.json (+ .bin)
    cells/<metric>/<attack cell id>/<dataset>/results.json (+ images/ when persisted)

A UAP is trained once per (metric, attack, trainset, amplitude) and reused
by every test dataset.  Each job runs in isolation: an exception marks that
job failed in the ledger and the run moves on.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from concurrent.futures import FIRST_COMPLETED, ProcessPoolExecutor, wait
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from iqarobust.attacks import Perturbation, run_attack, train_uap, uap_attack
from iqarobust.harness.datasets import ingest, save_image
from iqarobust.harness.ledger import RunLedger, run_lock, write_json
from iqarobust.metrics import NaturalnessEpsilon, calibrate_range, get_metric

log = logging.getLogger(__name__)

RESULTS_FORMAT = "iqarobust-cell/1"


@dataclass(frozen=True)
class TrainJob:
    metric: str
    attack_id: str
    trainset: str
    amplitude: float

    @property
    def version_id(self):
        return f"{self.attack_id}/{self.trainset}/a{self.amplitude!r}"

    @property
    def key(self):
        return f"train:{self.metric}|{self.version_id}"

    def path(self, run_dir):
        return (Path(run_dir) / "perturbations" / self.metric / self.attack_id / self.trainset
                / f"a{self.amplitude!r}.json")


@dataclass(frozen=True)
class CellJob:
    metric: str
    attack: str  # attack cell id: attack id, or "<attack id>/<trainset>/a<amplitude>"
    attack_id: str
    dataset: str
    trainset: str | None = None
    amplitude: float | None = None

    @property
    def key(self):
        return f"cell:{self.metric}|{self.attack}|{self.dataset}"

    @property
    def train_job(self):
        if self.trainset is None:
            return None
        return TrainJob(self.metric, self.attack_id, self.trainset, self.amplitude)

    def directory(self, run_dir):
        return Path(run_dir) / "cells" / self.metric / self.attack / self.dataset

    def path(self, run_dir):
        return self.directory(run_dir) / "results.json"


@dataclass
class RunSummary:
    config_digest: str
    run_dir: str
    jobs: int = 0
    executed: int = 0
    reused: int = 0
    failed: dict = field(default_factory=dict)

    @property
    def ok(self):
        return not self.failed

    def to_dict(self):
        return {"config_digest": self.config_digest, "run_dir": self.run_dir, "jobs": self.jobs,
                "executed": self.executed, "reused": self.reused, "failed": dict(self.failed)}


def plan_jobs(config):
    """(training jobs, cell jobs) in a fixed order."""
    trains, cells = [], []
    tests = [d.id for d in config.datasets_with_role("test")]
    for m in config.metrics:
        for entry in config.attacks:
            for attack, trainset, amplitude in entry.versions():
                if trainset is not None:
                    trains.append(TrainJob(m.name, entry.id, trainset, amplitude))
                for dataset in tests:
                    cells.append(CellJob(m.name, attack, entry.id, dataset, trainset, amplitude))
    return trains, cells


def array_digest(array):
    return hashlib.sha256(np.ascontiguousarray(array, dtype="<f8").tobytes()).hexdigest()


class Context:
    """Per-process caches of calibrated metrics and decoded datasets."""

    def __init__(self, config):
        self.config = config
        self._metrics = {}
        self._datasets = {}
        self._provider = None

    def dataset(self, dataset_id):
        if dataset_id not in self._datasets:
            try:
                self._datasets[dataset_id] = ingest(self.config.datasets[dataset_id])
            except Exception as exc:  # cached so every dependent job reports the same failure
                self._datasets[dataset_id] = exc
        value = self._datasets[dataset_id]
        if isinstance(value, Exception):
            raise value
        return value

    def metric(self, name):
        if name not in self._metrics:
            entry = self.config.metric(name)
            metric = get_metric(name, entry.weights_dir)
            calibrate_range(metric, self.dataset(self.config.calibration).images())
            self._metrics[name] = metric
        return self._metrics[name]

    def provider(self):
        if self._provider is None:
            p = self.config.eps_provider
            self._provider = NaturalnessEpsilon(get_metric("naturalness-lite"), p["offset"],
                                                p["gain"])
        return self._provider


def _spec_for(config, job):
    spec = config.attack(job.attack_id).spec
    return spec if job.amplitude is None else spec.replace(amplitude=job.amplitude)


def execute_train(ctx, job):
    config = ctx.config
    metric = ctx.metric(job.metric)
    images = ctx.dataset(job.trainset).images()
    perturbation = train_uap(metric, images, _spec_for(config, job), job.trainset)
    path = job.path(config.output_dir)
    path.parent.mkdir(parents=True, exist_ok=True)
    perturbation.save(path)


def _finite_mean(values):
    finite = [v for v in values if math.isfinite(v)]
    return float(np.mean(finite)) if finite else math.inf


def item_record(item_id, results):
    """One result per image; a clip's frames are averaged into one record."""
    if len(results) == 1:
        record = results[0].to_dict()
        record["image_id"] = item_id
        return record
    psnr = _finite_mean([r.proxy.psnr for r in results])
    return {
        "image_id": item_id,
        "score_before": float(np.mean([r.score_before for r in results])),
        "score_after": float(np.mean([r.score_after for r in results])),
        "proxy": {"mse": float(np.mean([r.proxy.mse for r in results])),
                  "psnr": "inf" if math.isinf(psnr) else psnr,
                  "ssim": float(np.mean([r.proxy.ssim for r in results]))},
        "steps_used": max(r.steps_used for r in results),
        "spec_digest": results[0].spec_digest,
        "flags": sorted({f for r in results for f in r.flags}),
        "extra": {"frames": len(results)},
        "frames": [r.to_dict() for r in results],
    }


def execute_cell(ctx, job):
    config = ctx.config
    metric = ctx.metric(job.metric)
    dataset = ctx.dataset(job.dataset)
    spec = _spec_for(config, job)
    perturbation = None
    if job.train_job is not None:
        perturbation = Perturbation.load(job.train_job.path(config.output_dir))
    cell_dir = job.directory(config.output_dir)
    records, hashes = [], {}
    for item in dataset.items:
        results = []
        for k, frame in enumerate(item.frames):
            frame_id = item.id if len(item.frames) == 1 else f"{item.id}#{k}"
            if perturbation is not None:
                r = uap_attack(metric, frame, perturbation, spec, frame_id)
            else:
                r = run_attack(metric, frame, spec, frame_id, eps_provider=ctx.provider())
            hashes[frame_id] = array_digest(r.attacked)
            if config.persist_images:
                (cell_dir / "images").mkdir(parents=True, exist_ok=True)
                save_image(cell_dir / "images" / f"{frame_id.replace('#', '-')}.png", r.attacked)
            results.append(r)
        records.append(item_record(item.id, results))
    payload = {
        "format": RESULTS_FORMAT,
        "config_digest": config.digest,
        "job": job.key,
        "metric": job.metric,
        "attack": job.attack,
        "attack_id": job.attack_id,
        "kind": spec.kind,
        "dataset": job.dataset,
        "trainset": job.trainset,
        "amplitude": job.amplitude,
        "spec": spec.to_dict(),
        "metric_range": list(metric.declared_range),
        "perturbation_flags": list(perturbation.flags) if perturbation is not None else [],
        "results": records,
        "attacked_sha256": hashes,
    }
    write_json(job.path(config.output_dir), payload)


def load_cell(path, config_digest=None, job_key=None):
    """The persisted results of a cell, or None if missing, torn, or from another config."""
    try:
        payload = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError):
        return None
    if payload.get("format") != RESULTS_FORMAT:
        return None
    if config_digest is not None and payload.get("config_digest") != config_digest:
        return None
    if job_key is not None and payload.get("job") != job_key:
        return None
    return payload


def _output_valid(config, job):
    if isinstance(job, TrainJob):
        try:
            Perturbation.load(job.path(config.output_dir))
        except (OSError, ValueError, KeyError):
            return False
        return True
    return load_cell(job.path(config.output_dir), config.digest, job.key) is not None


_WORKER_CONTEXT = None


def _init_worker(config):
    global _WORKER_CONTEXT
    _WORKER_CONTEXT = Context(config)


def _run_job(job, ctx=None):
    ctx = ctx or _WORKER_CONTEXT
    start = time.perf_counter()
    try:
        (execute_train if isinstance(job, TrainJob) else execute_cell)(ctx, job)
    except Exception as exc:  # isolate: the run continues past a failed job
        return "failed", f"{type(exc).__name__}: {exc}", time.perf_counter() - start
    return "done", None, time.perf_counter() - start


def run_matrix(config, select=None, on_job_done=None):
    """Run (or resume) every job of ``config``; returns a :class:`RunSummary`.

    ``select(job) -> bool`` restricts the cells run (their training jobs are
    added automatically).  ``on_job_done(job, status)`` is called after each
    ledger update, in completion order.
    """
    run_dir = Path(config.output_dir)
    with run_lock(run_dir):
        ledger = RunLedger.open(run_dir, config.digest)
        write_json(run_dir / "config.json", config.to_dict())
        trains, cells = plan_jobs(config)
        if select is not None:
            cells = [c for c in cells if select(c)]
            needed = {c.train_job for c in cells if c.train_job is not None}
            trains = [t for t in trains if t in needed or select(t)]
        summary = RunSummary(config.digest, str(run_dir), len(trains) + len(cells))
        log.info("run %s (config %s): %d training jobs, %d cells", config.name,
                 config.digest[:12], len(trains), len(cells))
        ctx = Context(config)
        for phase in (trains, cells):
            todo = []
            for job in phase:
                if ledger.status(job.key) == "done" and _output_valid(config, job):
                    summary.reused += 1
                    continue
                blocker = getattr(job, "train_job", None)
                if blocker is not None and blocker.key in summary.failed:
                    reason = f"perturbation unavailable ({summary.failed[blocker.key]})"
                    _finish(ledger, summary, job, "failed", reason, 0.0, on_job_done)
                    continue
                todo.append(job)
            _execute(config, ctx, ledger, summary, todo, on_job_done)
        return summary


def _finish(ledger, summary, job, status, reason, seconds, on_job_done):
    ledger.record(job.key, status, reason, seconds)
    if status == "failed":
        summary.failed[job.key] = reason
        log.warning("%s failed: %s", job.key, reason)
    else:
        summary.executed += 1
        log.info("%s done in %.2fs", job.key, seconds)
    if on_job_done is not None:
        on_job_done(job, status)


def _execute(config, ctx, ledger, summary, jobs, on_job_done):
    if not jobs:
        return
    if config.workers <= 1 or len(jobs) == 1:
        for job in jobs:
            status, reason, seconds = _run_job(job, ctx)
            _finish(ledger, summary, job, status, reason, seconds, on_job_done)
        return
    pool = ProcessPoolExecutor(max_workers=config.workers, initializer=_init_worker,
                               initargs=(config,))
    try:
        pending = {pool.submit(_run_job, job): job for job in jobs}
        while pending:
            done, _ = wait(pending, return_when=FIRST_COMPLETED)
            # record in plan order within a completion batch for a stable ledger
            for fut in sorted(done, key=lambda f: jobs.index(pending[f])):
                job = pending.pop(fut)
                status, reason, seconds = fut.result()
                _finish(ledger, summary, job, status, reason, seconds, on_job_done)
    finally:
        pool.shutdown(wait=True, cancel_futures=True)


def job_statuses(config):
    """Status of every planned job (``pending`` if never run) from the ledger on disk."""
    ledger_path = Path(config.output_dir) / "ledger.json"
    trains, cells = plan_jobs(config)
    keys = [j.key for j in trains + cells]
    if not ledger_path.exists():
        return {k: "pending" for k in keys}
    return RunLedger.load(ledger_path).statuses(keys)


def completed_cells(config):
    """(cell job, persisted payload) for every cell whose results are on disk and valid."""
    _, cells = plan_jobs(config)
    out = []
    for job in cells:
        payload = load_cell(job.path(config.output_dir), config.digest, job.key)
        if payload is not None:
            out.append((job, payload))
    return out

