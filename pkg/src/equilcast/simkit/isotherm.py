"""Redlich-Peterson equilibrium isotherm, K c / (1 + a c^g)."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import least_squares

from ..errors import DegenerateFit


@dataclass(frozen=True)
class IsothermParameters:
    K: float
    a: float
    g: float
    residual: float = float("nan")   # sum of squared residuals of the fit, if fitted

    def __post_init__(self):
        if not (self.K > 0 and self.a >= 0 and 0 < self.g <= 1):
            raise ValueError(f"invalid isotherm parameters K={self.K} a={self.a} g={self.g}")

    def to_dict(self):
        return asdict(self)


def redlich_peterson(c, p):
    c = np.asarray(c, dtype=np.float64)
    if np.any(c < 0):
        raise ValueError("concentration must be nonnegative")
    return p.K * c / (1.0 + p.a * c ** p.g)


def fit_isotherm(points, n_starts=12, seed=0):
    """Least-squares fit of (K, a, g) to (concentration, response) pairs.

    Multi-start bounded trust-region search; K and a are optimized in log space
    so starts can span decades.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("points must be (concentration, response) pairs")
    c, y = pts[:, 0], pts[:, 1]
    if len(pts) < 4 or len(np.unique(c)) < 3:
        raise ValueError("need at least 4 points at 3 or more distinct concentrations")
    if np.any(c < 0):
        raise ValueError("concentration must be nonnegative")
    if np.all(y == 0):
        raise DegenerateFit("all responses are zero")

    ymax = np.max(np.abs(y))

    def resid(theta):
        K, a, g = 10.0 ** theta[0], 10.0 ** theta[1], theta[2]
        return (K * c / (1.0 + a * c ** g) - y) / ymax

    rng = np.random.default_rng(seed)
    cpos = c[c > 0]
    k0 = np.log10(max(ymax / np.median(cpos), 1e-300))
    lo = np.array([k0 - 8, -8.0, 1e-3])
    hi = np.array([k0 + 8, 8.0, 1.0])
    starts = [np.array([k0, 0.0, 0.9])]
    starts += [np.array([rng.uniform(k0 - 3, k0 + 3), rng.uniform(-4, 4), rng.uniform(0.2, 1.0)])
               for _ in range(n_starts - 1)]
    best = None
    for x0 in starts:
        r = least_squares(resid, np.clip(x0, lo, hi), bounds=(lo, hi), xtol=1e-15, ftol=1e-15,
                          gtol=1e-15, max_nfev=2000)
        if best is None or r.cost < best.cost:
            best = r
    K, a, g = 10.0 ** best.x[0], 10.0 ** best.x[1], float(best.x[2])
    sse = float(np.sum((K * c / (1.0 + a * c ** g) - y) ** 2))
    return IsothermParameters(float(K), float(a), g, sse)
