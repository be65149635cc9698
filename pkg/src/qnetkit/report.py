"""Engine benchmarking: per-flow relative errors, buckets, timing.

benchmark() runs the chosen prediction engines over a labeled dataset
and collects one row per (engine, metric, flow): the relative error
against the stored ground-truth labels plus the per-sample inference
wall time. Aggregations (load-bucket table, per-size table, timing
table) are derived from the rows, so every number in the report is
recomputable from the dataset, the model checkpoint, and the seeds
recorded in the header.
"""

import csv
import io
import time

import numpy as np

from . import datagen, qtnet, training

ENGINES = ("sim", "qt", "gnn")
METRICS = ("delay", "jitter", "loss")
CSV_COLUMNS = ("engine", "metric", "flow_id", "rel_error", "sample_id",
               "topo_size", "wall_ms")
# near-zero truths would blow up the division; denominators are floored
JITTER_FLOOR = 1e-9            # seconds^2
LOSS_FLOOR = 1e-4              # ratio
_KEYS = {"delay": "mean_delay", "jitter": "jitter", "loss": "loss_ratio"}


def _rel_error(metric, pred, true):
    err = abs(pred - true)
    if metric == "jitter":
        return err / max(true, JITTER_FLOOR)
    if metric == "loss":
        return err / max(true, LOSS_FLOOR)
    if true == 0:
        return None                      # excluded, counted by caller
    return err / true


def _predict(engine, sample, model):
    """Returns (labels, wall_seconds); timing excludes any file I/O."""
    if engine == "sim":
        # the simulator produced the stored labels; self-comparison
        return sample.labels, 0.0
    if engine == "qt":
        t0 = time.perf_counter()
        labels = qtnet.solve(sample)
        return labels, time.perf_counter() - t0
    if engine == "gnn":
        labels = training.infer(model, sample)
        return labels, labels.meta["wall_seconds"]
    raise ValueError(f"unknown engine: {engine!r}")


def benchmark(records, engines, model=None, header=None):
    """records: iterable of (sample_id, sample, meta) with labels
    attached; engines: subset of {sim, qt, gnn}. Returns the report."""
    engines = list(engines)
    if not engines:
        raise ValueError("empty engines list")
    for e in engines:
        if e not in ENGINES:
            raise ValueError(f"unknown engine: {e!r}")
    if "gnn" in engines and model is None:
        raise ValueError("engine 'gnn' needs a model checkpoint")
    rows = []
    excluded = 0
    utils = {}
    for sample_id, sample, meta in records:
        sample_id = str(sample_id)   # JSON object keys are strings
        if sample.labels is None:
            raise ValueError(f"sample {sample_id} has no labels")
        topo_size = len(sample.topology.nodes)
        utils[sample_id] = meta.get("max_util",
                                    datagen.max_link_utilization(sample))
        skip = set(sample.labels.unreliable)
        for engine in engines:
            pred, wall = _predict(engine, sample, model)
            wall_ms = wall * 1e3
            for f in sample.flows:
                if f.id in skip:
                    excluded += 1
                    continue
                true = sample.labels.flows[f.id]
                got = pred.flows[f.id]
                for metric in METRICS:
                    rel = _rel_error(metric, got[_KEYS[metric]],
                                     true[_KEYS[metric]])
                    if rel is None:
                        excluded += 1
                        continue
                    rows.append({"engine": engine, "metric": metric,
                                 "flow_id": f.id, "rel_error": rel,
                                 "sample_id": sample_id,
                                 "topo_size": topo_size,
                                 "wall_ms": wall_ms})
    report = {"header": dict(header or {}), "rows": rows,
              "sample_util": utils}
    report["header"].update({"engines": engines,
                             "n_samples": len(utils),
                             "excluded_flows": excluded})
    report["load_buckets"] = load_bucket_table(report)
    report["size_table"] = size_table(report)
    report["timing"] = timing_table(report)
    return report


def _bucket_edges(values):
    return (float(np.quantile(values, 1 / 3)),
            float(np.quantile(values, 2 / 3)))


def load_bucket_table(report):
    """Mean |relative error| per engine/metric in max-utilization
    terciles of the benchmarked samples."""
    utils = report["sample_util"]
    if not utils:
        return {"edges": None, "cells": {}}
    lo, hi = _bucket_edges(list(utils.values()))
    cells = {}
    for row in report["rows"]:
        u = utils[row["sample_id"]]
        bucket = "low" if u <= lo else ("med" if u <= hi else "high")
        key = (row["engine"], row["metric"], bucket)
        cells.setdefault(key, []).append(row["rel_error"])
    table = {f"{e}/{m}/{b}": float(np.mean(v))
             for (e, m, b), v in sorted(cells.items())}
    return {"edges": [lo, hi], "cells": table}


def size_table(report):
    """Boxplot data (min, q1, median, q3, max, mean) per topology size
    per engine, for the delay metric."""
    groups = {}
    for row in report["rows"]:
        if row["metric"] != "delay":
            continue
        groups.setdefault((row["engine"], row["topo_size"]),
                          []).append(row["rel_error"])
    table = {}
    for (engine, size), errs in sorted(groups.items()):
        q = np.quantile(errs, [0.0, 0.25, 0.5, 0.75, 1.0])
        table[f"{engine}/{size}"] = {
            "min": float(q[0]), "q1": float(q[1]), "median": float(q[2]),
            "q3": float(q[3]), "max": float(q[4]),
            "mean": float(np.mean(errs)), "n": len(errs)}
    return table


def timing_table(report):
    """Per-engine inference wall time over samples (ms)."""
    per = {}
    for row in report["rows"]:
        per.setdefault(row["engine"], {})[row["sample_id"]] = \
            row["wall_ms"]
    out = {}
    for engine, by_sample in sorted(per.items()):
        vals = list(by_sample.values())
        out[engine] = {"mean_ms": float(np.mean(vals)),
                       "max_ms": float(np.max(vals)),
                       "per_sample": by_sample}
    return out


def rows_to_csv(report, fh=None):
    """The error-CDF CSV; one row per (engine, metric, flow)."""
    own = fh is None
    if own:
        fh = io.StringIO()
    w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for row in report["rows"]:
        w.writerow({k: row[k] for k in CSV_COLUMNS})
    return fh.getvalue() if own else None


def mean_errors(report):
    """Mean |relative error| per engine/metric over all rows."""
    acc = {}
    for row in report["rows"]:
        acc.setdefault((row["engine"], row["metric"]),
                       []).append(row["rel_error"])
    return {f"{e}/{m}": float(np.mean(v))
            for (e, m), v in sorted(acc.items())}


def report_summary(report, thresholds=None):
    """(text, exit_code): per-engine/metric/bucket means; exit 1 when a
    configured threshold is exceeded, 0 otherwise."""
    if not report["rows"]:
        raise ValueError("empty report")
    lines = []
    hdr = report["header"]
    lines.append(f"samples={hdr.get('n_samples')} "
                 f"engines={','.join(hdr.get('engines', []))} "
                 f"excluded_flows={hdr.get('excluded_flows')}")
    means = mean_errors(report)
    lines.append("")
    lines.append(f"{'engine/metric':<16} {'mean_rel_err':>12}")
    for key, val in means.items():
        lines.append(f"{key:<16} {val:>12.4f}")
    buckets = report.get("load_buckets") or load_bucket_table(report)
    if buckets["cells"]:
        lines.append("")
        lines.append(f"{'engine/metric/load':<24} {'mean_rel_err':>12}")
        for key, val in buckets["cells"].items():
            lines.append(f"{key:<24} {val:>12.4f}")
    timing = report.get("timing") or timing_table(report)
    lines.append("")
    for engine, t in timing.items():
        lines.append(f"inference {engine}: mean {t['mean_ms']:.2f} ms, "
                     f"max {t['max_ms']:.2f} ms")
    code = 0
    for key, limit in (thresholds or {}).items():
        got = means.get(key)
        if got is None:
            lines.append(f"threshold {key}: no rows")
            continue
        ok = got <= limit
        lines.append(f"threshold {key}: {got:.4f} "
                     f"{'<=' if ok else '>'} {limit:.4f} "
                     f"{'ok' if ok else 'EXCEEDED'}")
        if not ok:
            code = 1
    return "\n".join(lines), code
