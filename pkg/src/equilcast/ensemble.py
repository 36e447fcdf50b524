"""Deep ensembles of probabilistic LSTM forecasters."""
from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import neural
from .datahub import MinMaxStats
from .errors import EnsembleDiverged, ModelFormatError, ShapeMismatch, TrainingDiverged

log = logging.getLogger(__name__)

ENSEMBLE_FORMAT = "equilcast-ensemble"
ENSEMBLE_FORMAT_VERSION = 1


@dataclass(frozen=True)
class AggregatedForecast:
    mu_star: np.ndarray
    var_star: np.ndarray

    def __len__(self):
        return self.mu_star.shape[0]

    @property
    def std_star(self):
        return np.sqrt(self.var_star)


@dataclass
class EnsembleModel:
    members: list
    config: neural.NetworkConfig
    normalizer: MinMaxStats | None = None
    ensemble_seed: int = 0
    member_seeds: list = field(default_factory=list)
    logs: list = field(default_factory=list)

    def __post_init__(self):
        if not self.members:
            raise ValueError("an ensemble needs at least one member")
        for p in self.members:
            neural.check_params(p, self.config)
        if not self.member_seeds:
            self.member_seeds = [self.ensemble_seed + i for i in range(len(self.members))]

    def __len__(self):
        return len(self.members)

    def subset(self, m):
        """The first ``m`` members as an ensemble of their own."""
        if not 1 <= m <= len(self):
            raise ValueError(f"subset size must lie in [1, {len(self)}]")
        return EnsembleModel(self.members[:m], self.config, self.normalizer, self.ensemble_seed,
                             self.member_seeds[:m], self.logs[:m])


def member_seed(master_seed, i):
    return int(master_seed) + i


def aggregate(forecasts):
    """Uniform-mixture moments: mean of means; mean of second moments minus mean squared."""
    if not forecasts:
        raise ValueError("nothing to aggregate")
    shapes = {np.shape(f.mu) for f in forecasts}
    if len(shapes) != 1:
        raise ShapeMismatch(f"member forecasts have different shapes {sorted(shapes)}")
    return AggregatedForecast(*_mixture(np.stack([f.mu for f in forecasts]),
                                        np.stack([f.var for f in forecasts])))


def _mixture(mu, var):
    """Moments over axis 0. Means are taken about the first member, so identical
    members reproduce it bit for bit; the spread term uses the centred form of
    mean(var + mu^2) - mu_star^2, which avoids cancellation."""
    mu_star = mu[0] + np.mean(mu - mu[0], axis=0)
    var_star = var[0] + np.mean(var - var[0], axis=0) + np.mean((mu - mu_star) ** 2, axis=0)
    return mu_star, var_star


def _train_member(args):
    i, seed, train_X, val_X, net_cfg, train_cfg, ids = args
    try:
        params, tlog = neural.train_base_learner(train_X, net_cfg, train_cfg, seed=seed,
                                                 val_X=val_X, train_ids=ids)
    except TrainingDiverged as exc:
        return i, None, str(exc)
    return i, (params, tlog), None


def train_ensemble(train_X, net_cfg, train_cfg, m, master_seed, val_X=None, normalizer=None,
                   train_ids=None, jobs=1):
    """Train ``m`` members on the same (N, T) normalized training array.

    Members differ only in their seed (initialization and shuffling). Diverged
    members are dropped with a warning unless more than half of them diverge.
    """
    if m < 1:
        raise ValueError("ensemble size must be >= 1")
    seeds = [member_seed(master_seed, i) for i in range(m)]
    jobs_list = [(i, s, train_X, val_X, net_cfg, train_cfg, train_ids) for i, s in enumerate(seeds)]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as ex:
            results = list(ex.map(_train_member, jobs_list))
    else:
        results = [_train_member(j) for j in jobs_list]
    members, logs, kept, failed = [], [], [], []
    for i, out, err in results:
        if out is None:
            log.warning("member %d (seed %d) diverged: %s", i, seeds[i], err)
            failed.append(i)
            continue
        members.append(out[0])
        logs.append(out[1])
        kept.append(seeds[i])
    if len(failed) > m / 2:
        raise EnsembleDiverged(f"{len(failed)} of {m} members diverged (indices {failed})")
    return EnsembleModel(members, net_cfg, normalizer, int(master_seed), kept, logs)


def member_forecasts(model, X):
    """Per-member (mu, var) for a batch-major (B, T) normalized array."""
    return [neural.predict_batch(X, p, model.config) for p in model.members]


def predict_batch(model, X):
    """Aggregated (B, T) mu* and var* for normalized inputs."""
    outs = member_forecasts(model, X)
    return _mixture(np.stack([o[0] for o in outs]), np.stack([o[1] for o in outs]))


def predict_stream(model, prefix):
    """Causal aggregated forecast for a normalized prefix (curve or array)."""
    x = prefix.response if hasattr(prefix, "response") else np.asarray(prefix, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ShapeMismatch("prefix must be a nonempty 1-D sequence")
    return aggregate([neural.network_forward(x, p, model.config) for p in model.members])


def save_ensemble(model, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for i, (p, s) in enumerate(zip(model.members, model.member_seeds)):
        name = f"member_{i:03d}.eqm"
        neural.save_model(directory / name, p, model.config, seed=s)
        files.append(name)
    doc = {"format": ENSEMBLE_FORMAT, "format_version": ENSEMBLE_FORMAT_VERSION,
           "M": len(model), "master_seed": model.ensemble_seed, "member_seeds": model.member_seeds,
           "config": model.config.to_dict(),
           "normalizer": model.normalizer.to_dict() if model.normalizer else None,
           "members": files}
    with open(directory / "ensemble.json", "w") as fh:
        json.dump(doc, fh, indent=1)


def load_ensemble(directory):
    directory = Path(directory)
    path = directory / "ensemble.json"
    if not path.exists():
        raise ModelFormatError(f"{path}: not found")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}:{exc.lineno}: {exc.msg}") from None
    if doc.get("format") != ENSEMBLE_FORMAT:
        raise ModelFormatError(f"{path}: not an {ENSEMBLE_FORMAT} file")
    config = neural.NetworkConfig.from_dict(doc["config"])
    members = []
    for name in doc["members"]:
        params, cfg, _ = neural.load_model(directory / name)
        if cfg != config:
            raise ModelFormatError(f"{name}: config differs from ensemble.json")
        members.append(params)
    if len(members) != doc.get("M", len(members)):
        raise ModelFormatError(f"{path}: M={doc['M']} but {len(members)} member files")
    norm = MinMaxStats.from_dict(doc["normalizer"]) if doc.get("normalizer") else None
    return EnsembleModel(members, config, norm, int(doc.get("master_seed", 0)),
                         list(doc.get("member_seeds", [])))
