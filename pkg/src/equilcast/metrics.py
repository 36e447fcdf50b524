"""Response-time metrics, the stopping policy and dataset-level reports."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import ensemble as _ens
from .datahub import stack_curves
from .errors import NotSettled, Undefined

SETTLING_FRACTION = 0.10


def settling_time(series, times_s, equilibrium=None, baseline=None, fraction=SETTLING_FRACTION):
    """Last-exit settling time.

    The earliest sample time after which every sample stays within
    ``fraction * |equilibrium - baseline|`` of ``equilibrium``. Equilibrium
    defaults to the last sample, baseline to the first.
    """
    x = np.asarray(series, dtype=np.float64)
    t = np.asarray(times_s, dtype=np.float64)
    if x.ndim != 1 or x.size == 0 or t.shape != x.shape:
        raise ValueError("series and times must be nonempty 1-D arrays of equal length")
    eq = x[-1] if equilibrium is None else float(equilibrium)
    base = x[0] if baseline is None else float(baseline)
    band = fraction * abs(eq - base)
    if not band > 0:
        raise Undefined("equilibrium equals baseline; the settling band is empty")
    out = np.flatnonzero(~(np.abs(x - eq) <= band))
    if out.size == 0:
        return float(t[0])
    k = out[-1]
    if k == x.size - 1:
        raise NotSettled("series is outside the band at its last sample")
    return float(t[k + 1])


def factor_of_improvement(t90_exp, t90_model):
    if t90_model is None or t90_exp is None:
        raise Undefined("a settling time is missing")
    if not (t90_exp > 0 and t90_model > 0):
        raise Undefined(f"settling times must be positive, got {t90_exp} and {t90_model}")
    return t90_exp / t90_model


def normalized_variance(var_star, equilibrium_response):
    """Time-averaged predicted variance over the equilibrium response."""
    if equilibrium_response == 0:
        raise Undefined("equilibrium response is zero")
    v = var_star.var_star if hasattr(var_star, "var_star") else np.asarray(var_star, dtype=np.float64)
    return float(np.mean(v)) / equilibrium_response


# ---------------------------------------------------------------------------
# stopping policy
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StoppingPolicy:
    variance_threshold: float
    stability_window: int
    stability_band: float
    max_cutoff_s: float

    def __post_init__(self):
        if not (self.variance_threshold > 0 and self.stability_window > 0
                and self.stability_band > 0 and self.max_cutoff_s > 0):
            raise ValueError("all stopping-policy fields must be positive")
        object.__setattr__(self, "stability_window", int(self.stability_window))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: d[k] for k in cls.__dataclass_fields__})


@dataclass(frozen=True)
class StoppingOutcome:
    returned: bool
    t_s: float            # return time, or the cutoff when invalid
    value: float | None = None
    index: int | None = None

    def to_dict(self):
        return {"decision": "returned" if self.returned else "invalid", "t_s": self.t_s,
                "value": self.value, "index": self.index}


def stopping_decision(times_s, mu_star, var_star, policy):
    """First time the variance and the trailing-window spread of mu* both clear their thresholds."""
    t = np.asarray(times_s, dtype=np.float64)
    mu = np.asarray(mu_star, dtype=np.float64)
    var = np.asarray(var_star, dtype=np.float64)
    if not (t.shape == mu.shape == var.shape) or t.ndim != 1:
        raise ValueError("times, mu and var must be 1-D of equal length")
    if t.size > 1 and np.any(np.diff(t) < 0):
        raise ValueError("timestamps must be monotone")
    w = policy.stability_window
    for j in range(w - 1, t.size):
        if t[j] > policy.max_cutoff_s:
            break
        if var[j] > policy.variance_threshold:
            continue
        win = mu[j - w + 1:j + 1]
        if win.max() - win.min() <= policy.stability_band:
            return StoppingOutcome(True, float(t[j]), float(mu[j]), j)
    cutoff = float(min(policy.max_cutoff_s, t[-1])) if t.size else float(policy.max_cutoff_s)
    return StoppingOutcome(False, cutoff)


def _trailing_range(mu, w):
    """max - min of mu over every full trailing window, per sequence (rows)."""
    from numpy.lib.stride_tricks import sliding_window_view
    win = sliding_window_view(mu, w, axis=-1)
    return win.max(axis=-1) - win.min(axis=-1)


def default_policy(mu_star, var_star, times_s, stability_window=10, percentile=25.0):
    """Thresholds from the final quarter of validation forecasts (normalized units).

    ``mu_star`` and ``var_star`` are (B, T) arrays; the cutoff is the full duration.
    """
    mu = np.atleast_2d(mu_star)
    var = np.atleast_2d(var_star)
    T = mu.shape[1]
    q0 = (3 * T) // 4
    thr = float(np.percentile(var[:, q0:], percentile))
    rng = _trailing_range(mu, stability_window)       # window ending at index j >= w-1
    band = float(np.percentile(rng[:, max(q0 - stability_window + 1, 0):], percentile))
    tiny = 1e-12
    return StoppingPolicy(max(thr, tiny), stability_window, max(band, tiny), float(times_s[-1]))


# ---------------------------------------------------------------------------
# dataset evaluation
# ---------------------------------------------------------------------------

@dataclass
class EvaluationRecord:
    id: str
    concentration_mg_per_ml: float
    t90_experimental_s: float | None
    t90_model_s: float | None
    factor_of_improvement: float | None
    normalized_variance: float | None
    stopping: StoppingOutcome
    final_response: float
    final_prediction: float

    @property
    def defined(self):
        return self.factor_of_improvement is not None

    def to_dict(self):
        d = asdict(self)
        d["stopping"] = self.stopping.to_dict()
        return d


class EnsembleForecaster:
    """Adapter: raw-unit curves in, raw-unit (mu*, var*) out."""

    def __init__(self, model):
        if model.normalizer is None:
            raise ValueError("ensemble has no normalizer")
        self.model = model
        self.normalizer = model.normalizer

    def __call__(self, Y):
        mu, var = _ens.predict_batch(self.model, self.normalizer.forward(Y))
        return self.normalizer.inverse(mu), var * self.normalizer.span ** 2


class EchoForecaster:
    """mu*[t] = response[t] with zero variance: the pipeline calibration harness."""

    normalizer = None

    def __call__(self, Y):
        Y = np.asarray(Y, dtype=np.float64)
        return Y.copy(), np.zeros_like(Y)


class OracleForecaster:
    """mu* fixed at each curve's final measured value from the first step."""

    normalizer = None

    def __call__(self, Y):
        Y = np.asarray(Y, dtype=np.float64)
        return np.repeat(Y[:, -1:], Y.shape[1], axis=1), np.zeros_like(Y)


REFERENCES = ("measured", "predicted")


def evaluate_dataset(forecaster, curves, policy=None, reference="measured", bins=10):
    """Per-curve t90 / FOI / normalized variance / stopping, plus a summary.

    ``forecaster`` is an :class:`EnsembleModel` or any callable mapping a raw
    (B, T) response array to raw-unit (mu*, var*). The experimental t90 uses
    the measured final value as equilibrium. With ``reference="measured"`` the
    model t90 does too; ``"predicted"`` instead measures the model trajectory
    against its own final forecast.
    """
    if reference not in REFERENCES:
        raise ValueError(f"reference must be one of {REFERENCES}")
    if isinstance(forecaster, _ens.EnsembleModel):
        forecaster = EnsembleForecaster(forecaster)
    for c in curves:
        if c.extra.get("split") == "train":
            raise ValueError(f"curve {c.id} belongs to the train split")
    curves = sorted(curves, key=lambda c: c.id)
    if not curves:
        raise ValueError("no curves to evaluate")
    Y = stack_curves(curves)
    mu, var = forecaster(Y)
    norm = getattr(forecaster, "normalizer", None)
    records = []
    for k, c in enumerate(curves):
        y, t = c.response, c.times_s
        eq, base = y[-1], y[0]
        try:
            t_exp = settling_time(y, t, eq, base)
        except (NotSettled, Undefined):
            t_exp = None
        ref = eq if reference == "measured" else mu[k, -1]
        try:
            t_mod = settling_time(mu[k], t, ref, base)
        except (NotSettled, Undefined):
            t_mod = None
        try:
            foi = factor_of_improvement(t_exp, t_mod)
        except Undefined:
            foi = None
        try:
            nv = normalized_variance(var[k], eq)
        except Undefined:
            nv = None
        if policy is not None:
            if norm is not None:
                stop = stopping_decision(t, norm.forward(mu[k]), var[k] / norm.span ** 2, policy)
            else:
                stop = stopping_decision(t, mu[k], var[k], policy)
            if stop.returned and norm is not None:
                stop = StoppingOutcome(True, stop.t_s, float(mu[k, stop.index]), stop.index)
        else:
            stop = StoppingOutcome(False, float(t[-1]))
        records.append(EvaluationRecord(c.id, c.concentration_mg_per_ml, t_exp, t_mod, foi, nv,
                                        stop, float(eq), float(mu[k, -1])))
    return records, summarize(records, bins=bins, reference=reference)


def box_stats(values):
    v = np.sort(np.asarray(values, dtype=np.float64))
    if v.size == 0:
        return None
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    iqr = q3 - q1
    inside = v[(v >= q1 - 1.5 * iqr) & (v <= q3 + 1.5 * iqr)]
    return {"q1": float(q1), "median": float(med), "q3": float(q3),
            "whisker_lo": float(inside.min()), "whisker_hi": float(inside.max()),
            "outliers": [float(x) for x in v if x < inside.min() or x > inside.max()]}


def t90_histogram(records, bins=10):
    """Shared-edge histogram of experimental and model t90, with mean normalized variance per model bin."""
    te = np.array([r.t90_experimental_s for r in records if r.t90_experimental_s is not None])
    tm = np.array([r.t90_model_s for r in records if r.t90_model_s is not None])
    both = np.concatenate([te, tm])
    if both.size == 0:
        return []
    lo, hi = float(both.min()), float(both.max())
    if hi == lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    ce, _ = np.histogram(te, edges)
    cm, _ = np.histogram(tm, edges)
    rows = []
    for b in range(bins):
        last = b == bins - 1
        nv = [r.normalized_variance for r in records
              if r.t90_model_s is not None and r.normalized_variance is not None
              and edges[b] <= r.t90_model_s and (r.t90_model_s < edges[b + 1] or last)]
        rows.append({"bin_lo": float(edges[b]), "bin_hi": float(edges[b + 1]),
                     "count_exp": int(ce[b]), "count_model": int(cm[b]),
                     "mean_norm_var": float(np.mean(nv)) if nv else None})
    return rows


def summarize(records, bins=10, reference="measured"):
    foi = np.array([r.factor_of_improvement for r in records if r.defined])
    te = [r.t90_experimental_s for r in records if r.t90_experimental_s is not None]
    tm = [r.t90_model_s for r in records if r.t90_model_s is not None]
    return {
        "reference": reference,
        "n_curves": len(records),
        "n_defined": int(foi.size),
        "n_undefined": len(records) - int(foi.size),
        "defined_fraction": foi.size / len(records) if records else 0.0,
        "mean_foi": float(foi.mean()) if foi.size else None,
        "median_foi": float(np.median(foi)) if foi.size else None,
        "mean_t90_experimental_s": float(np.mean(te)) if te else None,
        "mean_t90_model_s": float(np.mean(tm)) if tm else None,
        "n_invalid_stops": sum(not r.stopping.returned for r in records),
        "t90_hist": t90_histogram(records, bins),
        "foi_box": box_stats(foi),
    }


def ensemble_size_sweep(pool, curves, sizes, reference="measured"):
    """Evaluate nested member prefixes of a trained pool.

    ``pool`` must hold at least ``max(sizes)`` members; size m uses members
    [0, m). Returns one row per requested size, in the order given.
    """
    if not sizes:
        raise ValueError("sizes must be nonempty")
    if max(sizes) > len(pool):
        raise ValueError(f"pool has {len(pool)} members, sweep needs {max(sizes)}")
    rows = []
    for m in sizes:
        _, s = evaluate_dataset(pool.subset(m), curves, None, reference)
        rows.append({"M": int(m), "mean_foi": s["mean_foi"], "median_foi": s["median_foi"],
                     "defined_fraction": s["defined_fraction"]})
    return rows


def spearman(a, b):
    """Rank correlation (average ranks for ties)."""
    from scipy.stats import spearmanr
    return float(spearmanr(a, b).statistic)
