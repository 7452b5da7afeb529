"""Robustness report files from persisted cell results.

Every measure is computed in two domains:

* ``native``: each cell's scores min-max scaled by its own before-attack scores;
* ``transported``: native scores mapped by the empirical quantile transport
  onto the primary metric's native before-attack distribution on the same
  dataset, so that metrics become comparable.

Files written (CSV with a ``config_digest`` column, plus JSON):

* ``cells``: one row per (domain, metric, attack cell, dataset);
* ``attacks``: one row per (domain, metric, attack kind), all measures;
* ``by_kind``: one row per (domain, metric), one column per attack kind, value = E-score;
* ``overall``: one row per (domain, metric), all attacks pooled, with CIs;
* ``uap_versions``: UAP measures under each averaging order of trainsets and amplitudes;
* ``curves``: robustness vs proxy degradation per cell (plot data);
* ``wilcoxon``: one-sided paired tests on absolute gains for every ordered metric pair.
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from iqarobust.attacks.spec import KINDS, UAP_KINDS
from iqarobust.eval import (
    CellData,
    ScoreSeries,
    aggregate,
    apply_transport,
    fit_transport,
    minmax_scale,
    point_measures,
    wilcoxon_one_sided,
)
from iqarobust.harness.ledger import RunLedger, atomic_write_text, write_json
from iqarobust.harness.runner import completed_cells, job_statuses, plan_jobs

DOMAINS = ("native", "transported")
MEASURES = ("abs_gain", "rel_gain", "r_score", "w_score", "e_score")
NESTINGS = ("pooled", "cell_first", "amplitude_then_trainset", "trainset_then_amplitude")
REPORT_FORMAT = "iqarobust-report/1"


class ReportError(RuntimeError):
    pass


@dataclass
class RawCell:
    """Raw (unscaled) scores and proxies of one completed cell."""

    metric: str
    attack: str
    attack_id: str
    kind: str
    dataset: str
    trainset: str | None
    amplitude: float | None
    image_ids: tuple
    before: np.ndarray
    after: np.ndarray
    mse: np.ndarray
    psnr: np.ndarray
    ssim: np.ndarray

    @property
    def cell_id(self):
        return f"{self.metric}|{self.attack}|{self.dataset}"

    @classmethod
    def from_payload(cls, payload):
        results = payload["results"]

        def psnr(r):
            v = r["proxy"]["psnr"]
            return math.inf if v == "inf" else float(v)

        return cls(
            metric=payload["metric"],
            attack=payload["attack"],
            attack_id=payload["attack_id"],
            kind=payload["kind"],
            dataset=payload["dataset"],
            trainset=payload["trainset"],
            amplitude=payload["amplitude"],
            image_ids=tuple(r["image_id"] for r in results),
            before=np.array([r["score_before"] for r in results], dtype=np.float64),
            after=np.array([r["score_after"] for r in results], dtype=np.float64),
            mse=np.array([r["proxy"]["mse"] for r in results], dtype=np.float64),
            psnr=np.array([psnr(r) for r in results], dtype=np.float64),
            ssim=np.array([r["proxy"]["ssim"] for r in results], dtype=np.float64),
        )

    def with_scores(self, before, after):
        return RawCell(self.metric, self.attack, self.attack_id, self.kind, self.dataset,
                       self.trainset, self.amplitude, self.image_ids, np.asarray(before),
                       np.asarray(after), self.mse, self.psnr, self.ssim)


def load_raw_cells(config):
    """Completed cells of a run: results on disk and marked done in the ledger."""
    statuses = job_statuses(config)
    cells = [RawCell.from_payload(p) for job, p in completed_cells(config)
             if statuses.get(job.key) == "done"]
    if not cells:
        raise ReportError(f"no completed cells in {config.output_dir}")
    return cells


def _cell_data(raw, before, after):
    return CellData(raw.metric, raw.attack, raw.kind, raw.dataset, before, after,
                    raw.mse, raw.psnr, raw.ssim)


def domain_cells(raw_cells, primary_metric, grid_size):
    """{domain: [CellData]} in the order of ``raw_cells``."""
    native = []
    for raw in raw_cells:
        scaled, _ = minmax_scale(ScoreSeries(raw.metric, raw.dataset, raw.attack,
                                             raw.before, raw.after))
        before, after = scaled.arrays
        native.append(_cell_data(raw, before, after))
    # one map per (metric, dataset); every cell of the pair shares its before-scores
    reference = {}
    for cell in native:
        reference.setdefault((cell.metric, cell.dataset), cell.before)
    maps = {}
    for (metric, dataset), before in reference.items():
        target = reference.get((primary_metric, dataset))
        if target is not None and metric != primary_metric:
            maps[(metric, dataset)] = fit_transport(before, target, grid_size)
    transported = []
    for cell in native:
        key = (cell.metric, cell.dataset)
        if cell.metric == primary_metric and key in reference:
            transported.append(cell)
        elif key in maps:
            tmap = maps[key]
            transported.append(CellData(cell.metric, cell.attack, cell.kind, cell.dataset,
                                        apply_transport(tmap, cell.before),
                                        apply_transport(tmap, cell.after),
                                        cell.mse, cell.psnr, cell.ssim))
    return {"native": native, "transported": transported}


def uap_nesting_rows(cells, raw_by_id, domain):
    """Point measures of each UAP attack under the four ways of averaging its versions."""
    groups = defaultdict(list)
    for c in cells:
        raw = raw_by_id[c.cell_id]
        if raw.kind in UAP_KINDS:
            groups[(c.metric, raw.attack_id)].append(c)
    rows = []
    for (metric, attack_id), members in sorted(groups.items()):
        by_version = defaultdict(list)
        for c in members:
            raw = raw_by_id[c.cell_id]
            by_version[(raw.trainset, raw.amplitude)].append(c)

        def pooled(cs):
            return point_measures(np.concatenate([c.before for c in cs]),
                                  np.concatenate([c.after for c in cs]))

        def mean_of(values):
            values = [v for v in values if v is not None]
            return float(np.mean(values)) if values else None

        def nested(outer_index):
            outer = defaultdict(list)
            for version, cs in by_version.items():
                outer[version[outer_index]].extend(cs)
            inner = [pooled(cs) for _, cs in sorted(outer.items())]
            return {m: mean_of([p[m] for p in inner]) for m in MEASURES}

        version_values = [pooled(cs) for _, cs in sorted(by_version.items())]
        values = {
            "pooled": pooled(members),
            "cell_first": {m: mean_of([p[m] for p in version_values]) for m in MEASURES},
            "amplitude_then_trainset": nested(0),
            "trainset_then_amplitude": nested(1),
        }
        for nesting in NESTINGS:
            row = {"domain": domain, "metric": metric, "attack": attack_id,
                   "kind": raw_by_id[members[0].cell_id].kind, "nesting": nesting,
                   "versions": len(by_version)}
            row.update(values[nesting])
            rows.append(row)
    return rows


def wilcoxon_rows(cells, raw_by_id, domain):
    """Paired by (attack cell, dataset, image): does metric_a gain less than metric_b?"""
    gains = defaultdict(dict)
    for c in cells:
        for image_id, b, a in zip(raw_by_id[c.cell_id].image_ids, c.before, c.after):
            gains[c.metric][(c.attack, c.dataset, image_id)] = a - b
    metrics = sorted(gains)
    rows = []
    for ma in metrics:
        for mb in metrics:
            if ma == mb:
                continue
            keys = sorted(set(gains[ma]) & set(gains[mb]))
            res = wilcoxon_one_sided([gains[ma][k] for k in keys], [gains[mb][k] for k in keys])
            rows.append({"domain": domain, "metric_a": ma, "metric_b": mb, "pairs": len(keys),
                         "nonzero": res.n, "statistic": res.statistic, "p_value": res.p_value,
                         "p_opposite": res.p_opposite, "method": res.method})
    return rows


def _estimate_fmt(est):
    if est.value is None:
        return ""
    return f"{est.value:.3f} ({est.ci_low:.3f}, {est.ci_high:.3f})"


def _flat_row(row):
    """A ReportRow as flat CSV-ready columns."""
    d = {"domain": row.domain, "level": row.level, "metric": row.metric, "attack": row.attack,
         "dataset": row.dataset, "n": row.n}
    for name in ("abs_gain", "rel_gain", "r_score"):
        est = getattr(row, name)
        d[name] = est.value
        d[f"{name}_ci_low"] = est.ci_low
        d[f"{name}_ci_high"] = est.ci_high
    d["r_excluded"] = row.r_excluded
    d["w_score"] = row.w_score
    d["e_score"] = row.e_score
    d["mean_mse"] = row.mean_mse
    d["mean_psnr"] = row.mean_psnr
    d["mean_ssim"] = row.mean_ssim
    for name in MEASURES:
        d[f"cell_mean_{name}"] = row.cell_mean.get(name)
    d["cells"] = len(row.constituents)
    return d


def build_report(raw_cells, primary_metric, n_resamples, grid_size, expected=None, failed=None):
    """All report tables as plain data.  Pure: depends only on its arguments.

    ``expected`` maps (metric, kind) to the number of cells the config plans;
    rows built from fewer cells are flagged ``complete = False``.
    """
    raw_cells = sorted(raw_cells, key=lambda r: r.cell_id)
    raw_by_id = {r.cell_id: r for r in raw_cells}
    expected = expected or {}
    domains = domain_cells(raw_cells, primary_metric, grid_size)
    metrics = sorted({r.metric for r in raw_cells})
    kinds = [k for k in KINDS if any(r.kind == k for r in raw_cells)]

    def complete(metric, kind=None):
        keys = [(metric, k) for k in KINDS] if kind is None else [(metric, kind)]
        want = sum(expected.get(k, 0) for k in keys)
        have = sum(1 for r in raw_cells if r.metric == metric and (kind is None or r.kind == kind))
        return have >= want

    out = {"cells": [], "attacks": [], "by_kind": [], "overall": [], "uap_versions": [],
           "curves": [], "wilcoxon": []}
    for domain in DOMAINS:
        cells = domains[domain]
        for c in cells:
            row = _flat_row(aggregate([c], "cell", c.metric, c.attack, c.dataset, domain,
                                      n_resamples))
            raw = raw_by_id[c.cell_id]
            row.update(kind=raw.kind, trainset=raw.trainset, amplitude=raw.amplitude)
            out["cells"].append(row)
            out["curves"].append({k: row[k] for k in (
                "domain", "metric", "attack", "kind", "dataset", "trainset", "amplitude",
                "mean_ssim", "mean_psnr", "mean_mse", "abs_gain", "r_score", "w_score",
                "e_score")})
        for metric in metrics:
            kind_row = {"domain": domain, "metric": metric}
            for kind in kinds:
                members = [c for c in cells if c.metric == metric and c.kind == kind]
                if not members:
                    kind_row[kind] = None
                    continue
                datasets = "+".join(sorted({c.dataset for c in members}))
                row = _flat_row(aggregate(members, "attack", metric, kind, datasets, domain,
                                          n_resamples))
                row["complete"] = complete(metric, kind)
                out["attacks"].append(row)
                kind_row[kind] = row["e_score"]
            kind_row["complete"] = complete(metric)
            out["by_kind"].append(kind_row)
            members = [c for c in cells if c.metric == metric]
            if members:
                datasets = "+".join(sorted({c.dataset for c in members}))
                agg = aggregate(members, "all", metric, "all", datasets, domain, n_resamples)
                row = _flat_row(agg)
                for name in ("abs_gain", "rel_gain", "r_score"):
                    row[f"{name}_fmt"] = _estimate_fmt(getattr(agg, name))
                row["complete"] = complete(metric)
                out["overall"].append(row)
        out["uap_versions"].extend(uap_nesting_rows(cells, raw_by_id, domain))
        out["wilcoxon"].extend(wilcoxon_rows(cells, raw_by_id, domain))
    out["failed"] = dict(sorted((failed or {}).items()))
    return out


def _csv_value(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return "inf" if math.isinf(v) and v > 0 else repr(v)
    return str(v)


def to_csv(rows, digest, columns=None):
    columns = columns or (list(rows[0]) if rows else [])
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns + ["config_digest"])
    for row in rows:
        writer.writerow([_csv_value(row.get(c)) for c in columns] + [digest])
    return buf.getvalue()


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return "inf" if obj > 0 else ("-inf" if obj < 0 else "nan")
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def expected_cells(config):
    _, cells = plan_jobs(config)
    kinds = {a.id: a.spec.kind for a in config.attacks}
    counts = defaultdict(int)
    for job in cells:
        counts[(job.metric, kinds[job.attack_id])] += 1
    return dict(counts)


TABLES = ("cells", "attacks", "by_kind", "overall", "uap_versions", "curves", "wilcoxon")


def write_report(config, out_dir=None, tables=TABLES):
    """Compute the report of the run in ``config.output_dir`` and write CSV + JSON files."""
    raw = load_raw_cells(config)
    statuses = job_statuses(config)
    ledger = RunLedger.load(Path(config.output_dir) / "ledger.json")
    failed = {k: ledger.reason(k) for k, s in statuses.items() if s == "failed"}
    report = build_report(raw, config.primary_metric, config.report["bootstrap_resamples"],
                          config.report["transport_grid"], expected_cells(config), failed)
    out_dir = Path(out_dir) if out_dir is not None else Path(config.output_dir) / "report"
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name in tables:
        rows = report[name]
        columns = None
        if name == "by_kind":
            columns = ["domain", "metric"] + [k for k in KINDS if rows and k in rows[0]] + ["complete"]
        atomic_write_text(out_dir / f"{name}.csv", to_csv(rows, config.digest, columns))
        write_json(out_dir / f"{name}.json", _json_safe({
            "format": REPORT_FORMAT, "config_digest": config.digest, "table": name, "rows": rows}))
        written += [str(out_dir / f"{name}.csv"), str(out_dir / f"{name}.json")]
    summary = {
        "format": REPORT_FORMAT,
        "config_digest": config.digest,
        "cells": len(raw),
        "partial": bool(failed) or any(s == "pending" for s in statuses.values()),
        "failed": report["failed"],
        "files": sorted(Path(p).name for p in written),
    }
    write_json(out_dir / "report.json", summary)
    summary["out_dir"] = str(out_dir)
    return summary


def report_json(report):
    return json.dumps(_json_safe(report), sort_keys=True)
