"""Adsorption-diffusion simulator for a single uniform cylindrical pore.

Free analyte c(x, t) diffuses from a constant reservoir at the pore mouth
(x = 0) toward the closed pore bottom and binds to the wall with Langmuir
kinetics::

    dc/dt = D_eff d2c/dx2 - (4 / d_pore) r
    db/dt = r,   r = k_a c (b_max - b) - k_d b

with D_eff = d_bulk times the Renkin hindrance factor of the solute/pore size ratio.
The sensor response is proportional to the depth-averaged bound density.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .. import _kernels
from ..datahub import ResponseCurve
from ..errors import InvalidParameters, PoreBlocked, SolverDiverged

BSA_MOLECULAR_WEIGHT_G_PER_MOL = 66430.0
DEFAULT_FILM_THICKNESS_UM = 3.63

# Saturation at the reference binding density maps to this fractional EOT change.
RESPONSE_AT_REFERENCE = 0.035
REFERENCE_B_MAX = 1e-6  # mol m^-2

FITTED_NAMES = ("k_a", "k_d", "b_max", "d_pore", "d_bulk", "r_h")
BOUNDS = {
    "k_a": (1e1, 1e4),        # M^-1 s^-1
    "k_d": (1e-5, 1e0),       # s^-1
    "b_max": (1e-8, 1e-4),    # mol m^-2
    "d_pore": (15.0, 35.0),   # nm
    "d_bulk": (1e-11, 1e-9),  # m^2 s^-1
    "r_h": (4.0, 6.0),        # nm
}
LOG10_BOUNDS = np.log10(np.array([BOUNDS[k] for k in FITTED_NAMES]))


@dataclass(frozen=True)
class SimulationParameters:
    k_a: float
    k_d: float
    b_max: float
    d_pore: float
    d_bulk: float
    r_h: float
    c_bulk: float = 1.0
    film_thickness_um: float = DEFAULT_FILM_THICKNESS_UM

    def fitted_vector(self):
        return np.array([getattr(self, k) for k in FITTED_NAMES], dtype=np.float64)

    def log10_vector(self):
        return np.log10(self.fitted_vector())

    @classmethod
    def from_log10(cls, v, c_bulk=1.0, film_thickness_um=DEFAULT_FILM_THICKNESS_UM):
        vals = 10.0 ** np.asarray(v, dtype=np.float64)
        return cls(*map(float, vals), c_bulk=c_bulk, film_thickness_um=film_thickness_um)

    def in_bounds(self, rtol=1e-9):
        for k in FITTED_NAMES:
            lo, hi = BOUNDS[k]
            v = getattr(self, k)
            if not (lo * (1 - rtol) <= v <= hi * (1 + rtol)):
                return False
        return 2.0 * self.r_h < self.d_pore and self.c_bulk >= 0

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: float(d[k]) for k in cls.__dataclass_fields__ if k in d})


def renkin_hindrance(ratio):
    """Renkin centerline hindrance for a sphere in a cylinder, ratio = solute/pore diameter."""
    lam = float(ratio)
    if lam >= 1.0:
        return 0.0
    return (1 - lam) ** 2 * (1 - 2.104 * lam + 2.089 * lam ** 3 - 0.948 * lam ** 5)


def molar_concentration(c_mg_per_ml, molecular_weight=BSA_MOLECULAR_WEIGHT_G_PER_MOL):
    """mg/mL (= g/L) to mol/L."""
    return c_mg_per_ml / molecular_weight


@dataclass
class PoreSolution:
    times_s: np.ndarray
    mean_bound: np.ndarray       # mol m^-2, depth average
    total_moles: np.ndarray      # per unit pore cross-section, mol m^-2
    influx_moles: np.ndarray     # cumulative through the mouth, same units
    c_final: np.ndarray          # mol m^-3
    b_final: np.ndarray

    @property
    def mass_balance_error(self):
        """Worst relative mismatch between stored and admitted moles."""
        scale = np.maximum(np.abs(self.influx_moles), 1e-300)
        err = np.abs(self.total_moles - self.influx_moles) / scale
        err[np.abs(self.influx_moles) == 0] = 0.0
        return float(err.max())


DEFAULT_SUBSTEPS = 4
DEFAULT_GRID = 32
DEFAULT_DT_S = 13 * 3600 / 249


def simulate(p, n_steps=250, dt_s=DEFAULT_DT_S, n_grid=DEFAULT_GRID, substeps=DEFAULT_SUBSTEPS):
    """Integrate from an empty pore; state is sampled every ``dt_s`` seconds.

    Backward Euler is unconditionally stable here, so ``substeps`` (implicit
    steps per output interval) only trades time accuracy for speed.
    """
    if n_grid < 16:
        raise ValueError("n_grid must be at least 16")
    if n_steps < 1 or not dt_s > 0:
        raise ValueError("n_steps >= 1 and dt_s > 0 required")
    if any(not (getattr(p, k) >= 0) for k in ("k_a", "k_d", "b_max", "c_bulk")):
        raise InvalidParameters("rate constants, b_max and c_bulk must be nonnegative")
    if not (p.d_pore > 0 and p.r_h > 0 and p.d_bulk > 0 and p.film_thickness_um > 0):
        raise InvalidParameters("geometry and diffusivity must be positive")
    lam = 2.0 * p.r_h / p.d_pore
    if lam >= 1.0:
        raise PoreBlocked(f"solute diameter {2 * p.r_h:g} nm does not fit pore {p.d_pore:g} nm")
    d_eff = p.d_bulk * renkin_hindrance(lam)
    n_sub = int(substeps)
    if n_sub < 1:
        raise ValueError("substeps must be >= 1")
    ka_si = p.k_a / 1000.0                                       # m^3 mol^-1 s^-1
    c_si = 1000.0 * molar_concentration(p.c_bulk)                # mol m^-3
    q = 4.0 / (p.d_pore * 1e-9)
    depth = p.film_thickness_um * 1e-6
    bmean, total, influx, c, b = _kernels.pore_integrate(
        float(ka_si), float(p.k_d), float(p.b_max), float(q), float(d_eff), float(c_si),
        float(depth), int(n_grid), float(dt_s), int(n_steps), int(n_sub),
    )
    if not (np.all(np.isfinite(bmean)) and np.all(np.isfinite(c))):
        raise SolverDiverged("non-finite state in pore integration")
    return PoreSolution(np.arange(n_steps) * dt_s, bmean, total, influx, c, b)


def response_from_bound(mean_bound, scale=RESPONSE_AT_REFERENCE, b_ref=REFERENCE_B_MAX):
    return scale * np.asarray(mean_bound) / b_ref


def simulate_response(p, n_steps=250, dt_s=DEFAULT_DT_S, n_grid=DEFAULT_GRID, substeps=DEFAULT_SUBSTEPS,
                      id="sim", scale=RESPONSE_AT_REFERENCE):
    sol = simulate(p, n_steps, dt_s, n_grid, substeps)
    return ResponseCurve(id, sol.times_s, response_from_bound(sol.mean_bound, scale),
                         p.c_bulk, "simulated")
