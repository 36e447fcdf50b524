"""Fit the six pore-model parameters to a measured response curve."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from ..neural import TrainConfig, adam_init, adam_step
from .pore import (
    DEFAULT_FILM_THICKNESS_UM,
    DEFAULT_GRID,
    DEFAULT_SUBSTEPS,
    LOG10_BOUNDS,
    SimulationParameters,
    simulate_response,
)

_ADAM = TrainConfig()

log = logging.getLogger(__name__)

MIN_FIT_STEPS = 20


@dataclass(frozen=True)
class FitResult:
    params: SimulationParameters
    mse: float             # response units
    relative_mse: float    # mse / max|target|^2
    restart: int
    iterations: int


def _project(v):
    v = np.clip(v, LOG10_BOUNDS[:, 0], LOG10_BOUNDS[:, 1])
    # keep the solute inside the pore: 2 r_h < d_pore, with a small margin
    cap = v[3] - math.log10(2.0) - 1e-9
    if v[5] > cap:
        v[5] = max(cap, LOG10_BOUNDS[5, 0])
    return v


def _grid_for(times):
    """Uniform simulation grid (dt, n) covering ``times``."""
    dts = np.diff(times)
    dt = float(np.min(dts))
    n = int(math.ceil(round((times[-1] - times[0]) / dt, 9))) + 1
    return dt, n


def fit_params_to_curve(target, c_bulk=None, film_thickness_um=DEFAULT_FILM_THICKNESS_UM,
                        restarts=5, iterations=150, learning_rate=0.08, fd_step=1e-4,
                        seed=0, n_grid=DEFAULT_GRID, substeps=DEFAULT_SUBSTEPS, initial=None):
    """Projected Adam on the log10 parameters with central-difference gradients.

    The objective is the MSE between the simulated and target responses scaled
    by the target's peak magnitude, so curves of any amplitude fit alike.
    ``initial`` optionally adds a caller-chosen start ahead of the random ones.
    """
    if len(target) < MIN_FIT_STEPS:
        raise ValueError(f"target needs at least {MIN_FIT_STEPS} timesteps")
    c_bulk = target.concentration_mg_per_ml if c_bulk is None else float(c_bulk)
    times = target.times_s - target.times_s[0]
    dt, n = _grid_for(times)
    uniform = n == len(times) and np.allclose(times, dt * np.arange(n), rtol=1e-9, atol=1e-9 * dt)
    y = target.response
    scale = float(np.max(np.abs(y)))
    scale = scale if scale > 0 else 1.0

    def objective(v):
        p = SimulationParameters.from_log10(v, c_bulk, film_thickness_um)
        sim = simulate_response(p, n, dt, n_grid, substeps).response
        if not uniform:
            sim = np.interp(times, dt * np.arange(n), sim)
        return float(np.mean((sim - y) ** 2)) / scale ** 2

    def gradient(v):
        g = np.zeros(6)
        for j in range(6):
            e = np.zeros(6)
            e[j] = fd_step
            g[j] = (objective(_project(v + e)) - objective(_project(v - e))) / (2 * fd_step)
        return g

    rng = np.random.default_rng(seed)
    starts = [] if initial is None else [_project(np.log10(initial.fitted_vector()))]
    starts += [_project(rng.uniform(LOG10_BOUNDS[:, 0], LOG10_BOUNDS[:, 1])) for _ in range(restarts)]
    best = None
    for r, v0 in enumerate(starts):
        v = v0.copy()
        f = objective(v)
        vbest, fbest = v.copy(), f
        state = {"v": v}
        moments = adam_init(state)
        it = 0
        for it in range(1, iterations + 1):
            g = gradient(v)
            # cosine-decayed step size for a clean final approach
            lr = learning_rate * 0.5 * (1 + math.cos(math.pi * (it - 1) / iterations))
            state, moments = adam_step({"v": v}, {"v": g}, moments, it, _ADAM, max(lr, 1e-4))
            v = _project(state["v"])
            f = objective(v)
            if f < fbest:
                vbest, fbest = v.copy(), f
            if fbest < 1e-14:
                break
        log.debug("restart %d: objective %.3e after %d iterations", r, fbest, it)
        if best is None or fbest < best[1]:
            best = (vbest, fbest, r, it)
    p = SimulationParameters.from_log10(best[0], c_bulk, film_thickness_um)
    return FitResult(p, best[1] * scale ** 2, best[1], best[2], best[3])
