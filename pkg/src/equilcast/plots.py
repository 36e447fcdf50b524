"""Plot-ready CSV data for each figure type; rendering is left to other tools."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .datahub import concentration_label

EQUILIBRIUM_TAIL = 10


def equilibrium_response(curve, tail=EQUILIBRIUM_TAIL):
    """Mean of the last ``tail`` samples, a noise-robust equilibrium estimate."""
    return float(np.mean(curve.response[-tail:]))


def _write(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow(["" if v is None else v for v in r])


def write_curves_overlay(curves, path):
    rows = [(c.id, c.concentration_mg_per_ml, t, r)
            for c in curves for t, r in zip(c.times_s, c.response)]
    _write(path, ["id", "concentration_mg_per_ml", "t_seconds", "response"], rows)


def isotherm_table(curves, tail=EQUILIBRIUM_TAIL):
    """One row per concentration stratum: (concentration, mean, std, n)."""
    groups = {}
    for c in curves:
        groups.setdefault(concentration_label(c.concentration_mg_per_ml), []).append(
            equilibrium_response(c, tail))
    rows = []
    for label in sorted(groups, key=float):
        v = np.array(groups[label])
        rows.append((float(label), float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0, v.size))
    return rows


def write_isotherm(curves, path, fit=None):
    from .simkit.isotherm import redlich_peterson
    rows = []
    for conc, mean, std, n in isotherm_table(curves):
        model = float(redlich_peterson(conc, fit)) if fit is not None else None
        rows.append((conc, mean, std, n, model))
    _write(path, ["concentration_mg_per_ml", "mean", "std", "n", "fit"], rows)


def write_forecast_traces(traces, path):
    """``traces``: iterable of (id, times, truth, mu, var) in response units."""
    rows = []
    for cid, t, truth, mu, var in traces:
        sd = np.sqrt(var)
        for j in range(len(t)):
            rows.append((cid, t[j], truth[j], mu[j], var[j], mu[j] - 2 * sd[j], mu[j] + 2 * sd[j]))
    _write(path, ["id", "t_seconds", "truth", "mu", "var", "lo", "hi"], rows)


def write_t90_hist(hist, path):
    keys = ["bin_lo", "bin_hi", "count_exp", "count_model", "mean_norm_var"]
    _write(path, keys, [[h[k] for k in keys] for h in hist])


def write_foi_box(box, path):
    rows = []
    if box:
        for k in ("q1", "median", "q3", "whisker_lo", "whisker_hi"):
            rows.append((k, box[k]))
        rows.extend(("outlier", v) for v in box["outliers"])
    _write(path, ["stat", "value"], rows)


def write_sweep(rows, path):
    _write(path, ["M", "mean_foi", "median_foi", "defined_fraction"],
           [(r["M"], r["mean_foi"], r["median_foi"], r["defined_fraction"]) for r in rows])


def emit_plots(report, out_dir):
    """Write every CSV the report has data for; returns the written paths.

    Recognized keys: ``curves``, ``isotherm_fit``, ``traces``, ``summary``
    (with ``t90_hist`` / ``foi_box``) and ``sweep``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if report.get("curves"):
        write_curves_overlay(report["curves"], out / "curves_overlay.csv")
        write_isotherm(report["curves"], out / "isotherm.csv", report.get("isotherm_fit"))
        written += [out / "curves_overlay.csv", out / "isotherm.csv"]
    if report.get("traces"):
        write_forecast_traces(report["traces"], out / "forecast_traces.csv")
        written.append(out / "forecast_traces.csv")
    summary = report.get("summary")
    if summary:
        write_t90_hist(summary["t90_hist"], out / "t90_hist.csv")
        write_foi_box(summary["foi_box"], out / "foi_box.csv")
        written += [out / "t90_hist.csv", out / "foi_box.csv"]
    if report.get("sweep"):
        write_sweep(report["sweep"], out / "sweep.csv")
        written.append(out / "sweep.csv")
    return written
