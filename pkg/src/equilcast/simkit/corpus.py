"""Synthetic corpora: sampled parameters -> simulated curves -> noise."""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from ..datahub import STANDARD_CONCENTRATIONS, Corpus
from .distribution import DEFAULT_DISTRIBUTION, NoiseSpec, add_noise, sample_params
from .pore import simulate_response

DEFAULT_SNR_RANGE = (2.0, 100.0)
DEFAULT_DURATION_H = 13.0


def _one_curve(job):
    idx, conc, dist, n_steps, dt, snr_range, seed_seq, control_ref_conc = job
    rng = np.random.default_rng(seed_seq)
    p_seed, n_seed = rng.integers(2 ** 63, size=2)
    p = sample_params(dist, 1, int(p_seed), c_bulk=conc)[0]
    cid = f"sim{idx:05d}"
    clean = simulate_response(p, n_steps, dt, id=cid)
    lo, hi = snr_range
    snr = float(math.exp(rng.uniform(math.log(lo), math.log(hi)))) if hi > lo else float(lo)
    ref = None
    if clean.final == 0:
        # buffer control: noise sized against the same sensor at the lowest analyte level
        ref = simulate_response(p.__class__(**{**p.to_dict(), "c_bulk": control_ref_conc}),
                                n_steps, dt).final
    noisy = add_noise(clean, NoiseSpec(snr, int(n_seed)), reference_amplitude=ref)
    meta = {"snr": snr, "params": p.to_dict(), "clean_final": clean.final}
    if ref is not None:
        meta["noise_reference_amplitude"] = ref
    return noisy, meta


def generate_corpus(n, seed, dist=DEFAULT_DISTRIBUTION, concentrations=STANDARD_CONCENTRATIONS,
                    n_steps=250, duration_h=DEFAULT_DURATION_H, snr_range=DEFAULT_SNR_RANGE, jobs=1):
    """``n`` noisy simulated curves cycling through ``concentrations``.

    Each curve gets its own child seed, so the corpus is identical for any
    ``jobs``. Returns (corpus, per-curve metadata keyed by id).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if n_steps < 2 or not duration_h > 0:
        raise ValueError("need n_steps >= 2 and a positive duration")
    if not (0 < snr_range[0] <= snr_range[1]):
        raise ValueError("snr range must be positive and ordered")
    dt = duration_h * 3600.0 / (n_steps - 1)
    nonzero = [c for c in concentrations if c > 0]
    ref_conc = min(nonzero) if nonzero else 1.0
    children = np.random.SeedSequence(seed).spawn(n)
    jobs_list = [(i, float(concentrations[i % len(concentrations)]), dist, n_steps, dt,
                  tuple(snr_range), children[i], ref_conc) for i in range(n)]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as ex:
            results = list(ex.map(_one_curve, jobs_list, chunksize=8))
    else:
        results = [_one_curve(j) for j in jobs_list]
    curves = [c for c, _ in results]
    return Corpus(curves), {c.id: m for c, m in results}
