"""Multivariate-Gaussian model of fitted parameters, sampling and noise injection."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import AmbiguousSnr, DistributionInfeasible, InsufficientFits
from .pore import DEFAULT_FILM_THICKNESS_UM, FITTED_NAMES, LOG10_BOUNDS, SimulationParameters

MIN_FITS = 7
MAX_REJECTIONS = 1000


@dataclass(frozen=True)
class ParameterDistribution:
    """Gaussian in log10 parameter space, truncated to the parameter box."""

    mean: np.ndarray
    covariance: np.ndarray
    bounds: np.ndarray = None

    def __post_init__(self):
        m = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.covariance, dtype=np.float64)
        if m.shape != (6,) or cov.shape != (6, 6):
            raise ValueError("mean must be a 6-vector and covariance 6x6")
        if not np.allclose(cov, cov.T, atol=1e-14):
            raise ValueError("covariance must be symmetric")
        if np.linalg.eigvalsh(cov).min() < -1e-12:
            raise ValueError("covariance must be positive semidefinite")
        b = LOG10_BOUNDS.copy() if self.bounds is None else np.asarray(self.bounds, float)
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "bounds", b)

    def to_dict(self):
        return {"names": list(FITTED_NAMES), "space": "log10",
                "mean": self.mean.tolist(), "covariance": self.covariance.tolist(),
                "bounds": self.bounds.tolist()}

    @classmethod
    def from_dict(cls, d):
        names = d.get("names", list(FITTED_NAMES))
        if list(names) != list(FITTED_NAMES):
            raise ValueError(f"distribution parameter order must be {FITTED_NAMES}")
        return cls(np.array(d["mean"]), np.array(d["covariance"]),
                   np.array(d["bounds"]) if "bounds" in d else None)


# Reference distribution for simulated corpora when no fitted one is supplied.
DEFAULT_DISTRIBUTION = ParameterDistribution(
    mean=np.array([2.5, -2.5, -6.0, math.log10(20.0), -10.5, math.log10(4.5)]),
    covariance=np.diag(np.array([0.3, 0.3, 0.2, 0.05, 0.2, 0.03]) ** 2),
)


def fit_param_distribution(fits):
    if len(fits) < MIN_FITS:
        raise InsufficientFits(f"need at least {MIN_FITS} fitted parameter sets, got {len(fits)}")
    X = np.array([p.log10_vector() for p in fits])
    mean = X.mean(axis=0)
    cov = np.cov(X, rowvar=False, ddof=1)
    cov = 0.5 * (cov + cov.T)
    w, V = np.linalg.eigh(cov)
    cov = (V * np.clip(w, 0.0, None)) @ V.T
    cov = 0.5 * (cov + cov.T)
    return ParameterDistribution(mean, cov)


def _feasible(v, bounds):
    if np.any(v < bounds[:, 0]) or np.any(v > bounds[:, 1]):
        return False
    r_h = 10.0 ** v[5]
    d_pore = 10.0 ** v[3]
    return 2.0 * r_h < d_pore


def sample_params(dist, n, seed, c_bulk=1.0, film_thickness_um=DEFAULT_FILM_THICKNESS_UM):
    """Draw ``n`` parameter sets, redrawing any that leave the box."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    # eigen-factor tolerates a singular (e.g. zero) covariance
    w, V = np.linalg.eigh(dist.covariance)
    L = V * np.sqrt(np.clip(w, 0.0, None))
    out = []
    for _ in range(n):
        for _attempt in range(MAX_REJECTIONS):
            v = dist.mean + L @ rng.standard_normal(6)
            if _feasible(v, dist.bounds):
                break
        else:
            raise DistributionInfeasible(
                f"no in-bounds sample after {MAX_REJECTIONS} draws")
        out.append(SimulationParameters.from_log10(v, c_bulk, film_thickness_um))
    return out


@dataclass(frozen=True)
class NoiseSpec:
    snr: float
    seed: int = 0

    def __post_init__(self):
        if not self.snr > 0:
            raise ValueError("snr must be positive")


def add_noise(curve, spec, reference_amplitude=None):
    """White Gaussian noise with sigma = |amplitude| / snr; index 0 is left at 0.

    The amplitude is the curve's final value unless ``reference_amplitude`` is
    given. ``snr = inf`` returns the curve unchanged.
    """
    if math.isinf(spec.snr):
        return curve
    amp = curve.final if reference_amplitude is None else float(reference_amplitude)
    if amp == 0:
        raise AmbiguousSnr(f"curve {curve.id}: zero final response and no reference amplitude")
    sigma = abs(amp) / spec.snr
    rng = np.random.default_rng(spec.seed)
    noise = rng.normal(0.0, sigma, len(curve))
    noise[0] = 0.0
    return curve.with_response(curve.response + noise)
