"""Append-only run ledger with atomic on-disk replacement."""

from __future__ import annotations

import contextlib
import datetime as _dt
import json
import os
import platform
import sys
import tempfile
import threading
from pathlib import Path

import numpy as np
import scipy

LEDGER_FORMAT = "iqarobust-ledger/1"
STATUSES = ("pending", "done", "failed")


class LedgerError(RuntimeError):
    pass


def environment_fingerprint():
    from iqarobust import __version__

    return {
        "python": sys.version.split()[0],
        "platform": platform.platform(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "iqarobust": __version__,
    }


def atomic_write_text(path, text):
    """Write via a temporary sibling file and ``os.replace`` so readers never see a torn file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def write_json(path, obj):
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


class RunLedger:
    """Job status history for one run directory.

    Events are only ever appended; a job's status is its latest event
    (``pending`` if it has none).  Every append rewrites ``ledger.json``
    atomically under a lock.
    """

    def __init__(self, path, config_digest, environment=None, events=None):
        self.path = Path(path)
        self.config_digest = config_digest
        self.environment = environment or environment_fingerprint()
        self.events = list(events or [])
        self._lock = threading.Lock()

    @classmethod
    def open(cls, run_dir, config_digest):
        """Load the run's ledger, or start one.  A ledger of another config is an error."""
        path = Path(run_dir) / "ledger.json"
        if path.exists():
            ledger = cls.load(path)
            if ledger.config_digest != config_digest:
                raise LedgerError(
                    f"{path} belongs to config {ledger.config_digest[:12]}, not {config_digest[:12]}; "
                    "use a fresh output directory"
                )
            ledger.environment = environment_fingerprint()
            return ledger
        ledger = cls(path, config_digest)
        ledger.save()
        return ledger

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise LedgerError(f"cannot read ledger {path}: {exc}") from exc
        if data.get("format") != LEDGER_FORMAT:
            raise LedgerError(f"{path}: not a {LEDGER_FORMAT} file")
        return cls(path, data["config_digest"], data.get("environment"), data.get("events"))

    def to_dict(self):
        return {
            "format": LEDGER_FORMAT,
            "config_digest": self.config_digest,
            "environment": self.environment,
            "events": self.events,
        }

    def save(self):
        write_json(self.path, self.to_dict())

    def record(self, job, status, reason=None, seconds=None):
        if status not in STATUSES:
            raise ValueError(f"unknown status {status!r}")
        with self._lock:
            event = {
                "seq": len(self.events),
                "job": job,
                "status": status,
                "time": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
            }
            if reason is not None:
                event["reason"] = reason
            if seconds is not None:
                event["seconds"] = round(float(seconds), 6)
            self.events.append(event)
            self.save()

    def status(self, job):
        for event in reversed(self.events):
            if event["job"] == job:
                return event["status"]
        return "pending"

    def reason(self, job):
        for event in reversed(self.events):
            if event["job"] == job:
                return event.get("reason")
        return None

    def statuses(self, jobs):
        latest = {}
        for event in self.events:
            latest[event["job"]] = event["status"]
        return {job: latest.get(job, "pending") for job in jobs}


@contextlib.contextmanager
def run_lock(run_dir):
    """Exclusive lock on a run directory so two processes never interleave one run."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    lock_path = run_dir / ".lock"
    with open(lock_path, "w") as fh:
        try:
            import fcntl
        except ImportError:  # pragma: no cover - non-POSIX platforms run unlocked
            yield
            return
        try:
            fcntl.flock(fh, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except BlockingIOError as exc:
            raise LedgerError(f"{run_dir} is in use by another run") from exc
        try:
            yield
        finally:
            fcntl.flock(fh, fcntl.LOCK_UN)
