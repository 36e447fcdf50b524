"""Curves, corpora, stratified splitting, min-max normalization and file IO.

On disk a corpus is a directory holding ``manifest.json`` (a JSON array of
``{id, concentration_mg_per_ml, file, split?}`` objects) and one CSV per curve
with header ``t_seconds,response``.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import (
    CorpusFormatError,
    DegenerateRange,
    DuplicateId,
    EmptyCorpus,
    MissingCurveFile,
)

log = logging.getLogger(__name__)

SPLITS = ("train", "validation", "test")
SOURCES = ("experimental", "simulated")

# BSA concentrations (mg/mL) of the reference assay, buffer control included.
STANDARD_CONCENTRATIONS = (40.0, 20.0, 10.0, 4.0, 2.0, 1.0, 0.4, 0.2, 0.1, 0.04, 0.02, 0.002, 0.0)


@dataclass(frozen=True)
class ResponseCurve:
    """Fractional EOT change per timestep, plus identifying metadata."""

    id: str
    times_s: np.ndarray
    response: np.ndarray
    concentration_mg_per_ml: float = 0.0
    source: str = "experimental"
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        t = np.asarray(self.times_s, dtype=np.float64)
        r = np.asarray(self.response, dtype=np.float64)
        if t.ndim != 1 or t.shape != r.shape:
            raise ValueError(f"curve {self.id}: times and response must be 1-D of equal length")
        if t.size == 0:
            raise ValueError(f"curve {self.id}: empty curve")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise ValueError(f"curve {self.id}: times must be strictly increasing")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(r))):
            raise ValueError(f"curve {self.id}: non-finite values")
        if self.concentration_mg_per_ml < 0:
            raise ValueError(f"curve {self.id}: negative concentration")
        if self.source not in SOURCES:
            raise ValueError(f"curve {self.id}: unknown source {self.source!r}")
        object.__setattr__(self, "times_s", t)
        object.__setattr__(self, "response", r)

    def __len__(self):
        return self.response.size

    def __eq__(self, other):
        if not isinstance(other, ResponseCurve):
            return NotImplemented
        return (
            self.id == other.id
            and self.concentration_mg_per_ml == other.concentration_mg_per_ml
            and self.source == other.source
            and np.array_equal(self.times_s, other.times_s)
            and np.array_equal(self.response, other.response)
        )

    __hash__ = None

    @property
    def final(self):
        return float(self.response[-1])

    def with_response(self, response, **changes):
        return replace(self, response=np.asarray(response, dtype=np.float64), **changes)

    def prefix(self, k):
        return replace(self, times_s=self.times_s[:k], response=self.response[:k])


def concentration_label(c):
    """Stratum key: the shortest decimal string that round-trips the float."""
    return repr(float(c))


@dataclass(frozen=True)
class MinMaxStats:
    min_response: float
    max_response: float
    source: str = "train"

    def __post_init__(self):
        if not self.max_response > self.min_response:
            raise DegenerateRange(
                f"normalizer range is empty: min={self.min_response} max={self.max_response}"
            )

    @property
    def span(self):
        return self.max_response - self.min_response

    def forward(self, x):
        return (np.asarray(x, dtype=np.float64) - self.min_response) / self.span

    def inverse(self, x):
        return np.asarray(x, dtype=np.float64) * self.span + self.min_response

    def to_dict(self):
        return {"min_response": self.min_response, "max_response": self.max_response,
                "source": self.source}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["min_response"]), float(d["max_response"]), d.get("source", "train"))


@dataclass
class Corpus:
    curves: list
    splits: dict = field(default_factory=dict)
    normalizer: MinMaxStats | None = None

    def __post_init__(self):
        seen = set()
        for c in self.curves:
            if c.id in seen:
                raise DuplicateId(f"duplicate curve id {c.id!r}")
            seen.add(c.id)
        for cid, s in self.splits.items():
            if cid not in seen:
                raise CorpusFormatError(f"split assigned to unknown curve id {cid!r}")
            if s not in SPLITS:
                raise CorpusFormatError(f"curve {cid!r}: unknown split {s!r}")

    def __len__(self):
        return len(self.curves)

    def by_id(self):
        return {c.id: c for c in self.curves}

    def split(self, name):
        return [c for c in self.curves if self.splits.get(c.id) == name]


# ---------------------------------------------------------------------------
# splitting and normalization
# ---------------------------------------------------------------------------

def _largest_remainder(n, ratio):
    quotas = [n * r / sum(ratio) for r in ratio]
    counts = [math.floor(q) for q in quotas]
    left = n - sum(counts)
    # ties broken toward the earlier split (train before validation before test)
    order = sorted(range(len(ratio)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:left]:
        counts[i] += 1
    return counts


def stratified_split(corpus, ratio=(3, 1, 1), seed=0):
    """Assign every curve to train/validation/test, stratified by concentration.

    Within each stratum the curves are shuffled by a seeded generator and the
    per-split counts come from largest-remainder rounding of the ratio.
    """
    if len(corpus) == 0:
        raise EmptyCorpus("cannot split an empty corpus")
    if len(ratio) != 3 or any(r < 0 for r in ratio) or sum(ratio) <= 0:
        raise ValueError("ratio must be three nonnegative weights")
    strata = {}
    for c in corpus.curves:
        strata.setdefault(concentration_label(c.concentration_mg_per_ml), []).append(c.id)
    rng = np.random.default_rng(seed)
    assignment = {}
    for label in sorted(strata, key=float):
        ids = sorted(strata[label])
        if len(ids) < 5:
            log.warning("stratum %s has only %d curves", label, len(ids))
        perm = rng.permutation(len(ids))
        counts = _largest_remainder(len(ids), ratio)
        bounds = np.cumsum([0] + counts)
        for s, name in enumerate(SPLITS):
            for j in perm[bounds[s]:bounds[s + 1]]:
                assignment[ids[j]] = name
    return assignment


def fit_normalizer(corpus):
    train = corpus.split("train")
    if not train:
        raise EmptyCorpus("no curves assigned to the train split")
    lo = min(float(c.response.min()) for c in train)
    hi = max(float(c.response.max()) for c in train)
    return MinMaxStats(lo, hi, source="train")


def apply_normalizer(curve, stats, direction="forward"):
    if direction == "forward":
        return curve.with_response(stats.forward(curve.response))
    if direction == "inverse":
        return curve.with_response(stats.inverse(curve.response))
    raise ValueError(f"direction must be 'forward' or 'inverse', got {direction!r}")


def stack_curves(curves):
    """(N, T) array of responses; rejects ragged corpora."""
    lengths = {len(c) for c in curves}
    if len(lengths) != 1:
        raise CorpusFormatError(f"curves have unequal lengths {sorted(lengths)}")
    return np.stack([c.response for c in curves])


# ---------------------------------------------------------------------------
# file IO
# ---------------------------------------------------------------------------

def write_curve_csv(curve, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_seconds", "response"])
        for t, r in zip(curve.times_s, curve.response):
            w.writerow([repr(float(t)), repr(float(r))])


def read_two_column_csv(path, header):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    a, b = [], []
    with open(path, newline="") as fh:
        rows = csv.reader(fh)
        head = next(rows, None)
        if head is None or [h.strip() for h in head] != list(header):
            raise CorpusFormatError(f"{path}:1: expected header {','.join(header)}, got {head}")
        for lineno, row in enumerate(rows, start=2):
            if not row or all(not x.strip() for x in row):
                continue
            if len(row) != 2:
                raise CorpusFormatError(f"{path}:{lineno}: expected 2 columns, got {len(row)}")
            try:
                a.append(float(row[0]))
                b.append(float(row[1]))
            except ValueError as exc:
                raise CorpusFormatError(f"{path}:{lineno}: {exc}") from None
    return np.array(a), np.array(b)


def read_curve_csv(path, id=None, concentration_mg_per_ml=0.0, source="experimental"):
    t, r = read_two_column_csv(path, ("t_seconds", "response"))
    try:
        return ResponseCurve(id or Path(path).stem, t, r, concentration_mg_per_ml, source)
    except ValueError as exc:
        raise CorpusFormatError(f"{path}: {exc}") from None


def save_corpus(corpus, directory, extra_manifest=None):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = []
    for c in corpus.curves:
        fname = f"{c.id}.csv"
        write_curve_csv(c, directory / fname)
        entry = {"id": c.id, "concentration_mg_per_ml": c.concentration_mg_per_ml,
                 "file": fname, "source": c.source}
        if c.id in corpus.splits:
            entry["split"] = corpus.splits[c.id]
        if c.extra:
            entry.update(c.extra)
        if extra_manifest and c.id in extra_manifest:
            entry.update(extra_manifest[c.id])
        manifest.append(entry)
    with open(directory / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1)


_RESERVED = {"id", "concentration_mg_per_ml", "file", "split", "source"}


def load_corpus(directory):
    directory = Path(directory)
    mpath = directory / "manifest.json"
    if not mpath.exists():
        raise CorpusFormatError(f"{mpath}: manifest not found")
    try:
        with open(mpath) as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CorpusFormatError(f"{mpath}:{exc.lineno}: {exc.msg}") from None
    if not isinstance(manifest, list):
        raise CorpusFormatError(f"{mpath}: manifest must be a JSON array")
    curves, splits, seen = [], {}, set()
    for k, entry in enumerate(manifest):
        where = f"{mpath}: entry {k}"
        if not isinstance(entry, dict):
            raise CorpusFormatError(f"{where}: expected an object")
        for key in ("id", "concentration_mg_per_ml", "file"):
            if key not in entry:
                raise CorpusFormatError(f"{where}: missing key {key!r}")
        cid = str(entry["id"])
        if cid in seen:
            raise DuplicateId(f"{where}: duplicate curve id {cid!r}")
        seen.add(cid)
        try:
            conc = float(entry["concentration_mg_per_ml"])
        except (TypeError, ValueError):
            raise CorpusFormatError(f"{where}: concentration is not a number") from None
        fpath = directory / entry["file"]
        if not fpath.exists():
            raise MissingCurveFile(f"curve {cid!r}: file {fpath} not found")
        c = read_curve_csv(fpath, cid, conc, entry.get("source", "experimental"))
        extra = {k2: v for k2, v in entry.items() if k2 not in _RESERVED}
        if extra:
            c = replace(c, extra=extra)
        curves.append(c)
        if "split" in entry:
            if entry["split"] not in SPLITS:
                raise CorpusFormatError(f"{where}: unknown split {entry['split']!r}")
            splits[cid] = entry["split"]
    return Corpus(curves, splits)


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return Path(path)


def prepare_corpus(corpus, seed=0, ratio=(3, 1, 1)):
    """Assign splits when none are stored, then fit the train-only normalizer."""
    if not corpus.splits:
        corpus.splits = stratified_split(corpus, ratio, seed)
    corpus.normalizer = fit_normalizer(corpus)
    return corpus
