"""Reflectance calibration and effective optical thickness (EOT) extraction.

The EOT (2nL) is the frequency of the Fabry-Perot fringes when the spectrum is
expressed against wavenumber 1/lambda, so it is read off the dominant peak of a
Fourier transform of the resampled spectrum.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datahub import ResponseCurve, read_two_column_csv
from .errors import (
    CalibrationDegenerate,
    DegenerateBaseline,
    GridMismatch,
    NoFringePeak,
    WindowOutOfRange,
)

RAW = "raw_counts"
REFLECTANCE = "reflectance_fraction"
REFLECTANCE_CLIP = (0.0, 1.5)
DEFAULT_WINDOW_NM = (500.0, 1000.0)


@dataclass(frozen=True)
class Spectrum:
    wavelengths_nm: np.ndarray
    values: np.ndarray
    kind: str = RAW

    def __post_init__(self):
        w = np.asarray(self.wavelengths_nm, dtype=np.float64)
        v = np.asarray(self.values, dtype=np.float64)
        if w.ndim != 1 or w.shape != v.shape:
            raise ValueError("wavelengths and values must be 1-D of equal length")
        if w.size < 2 or np.any(np.diff(w) <= 0):
            raise ValueError("wavelengths must be strictly increasing")
        if self.kind not in (RAW, REFLECTANCE):
            raise ValueError(f"unknown spectrum kind {self.kind!r}")
        if self.kind == REFLECTANCE and not np.all(np.isfinite(v)):
            raise ValueError("reflectance values must be finite")
        object.__setattr__(self, "wavelengths_nm", w)
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class EotSeries:
    times_s: np.ndarray
    eot_nm: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times_s, dtype=np.float64)
        e = np.asarray(self.eot_nm, dtype=np.float64)
        if t.shape != e.shape or t.ndim != 1:
            raise ValueError("times and EOT values must be 1-D of equal length")
        object.__setattr__(self, "times_s", t)
        object.__setattr__(self, "eot_nm", e)


def read_spectrum_csv(path, kind=RAW):
    w, v = read_two_column_csv(path, ("wavelength_nm", "value"))
    return Spectrum(w, v, kind)


def calibrate_reflectance(raw, dark, reference, clip=REFLECTANCE_CLIP):
    """(raw - dark) / (reference - dark), pointwise."""
    for s in (dark, reference):
        if s.wavelengths_nm.shape != raw.wavelengths_nm.shape or not np.array_equal(
            s.wavelengths_nm, raw.wavelengths_nm
        ):
            raise GridMismatch("raw, dark and reference spectra must share one wavelength grid")
    span = reference.values - dark.values
    if np.any(span <= 0):
        bad = raw.wavelengths_nm[span <= 0][0]
        raise CalibrationDegenerate(f"reference does not exceed dark at {bad:g} nm")
    r = (raw.values - dark.values) / span
    if clip is not None:
        r = np.clip(r, *clip)
    return Spectrum(raw.wavelengths_nm, r, REFLECTANCE)


def compute_eot(spec, window_nm=DEFAULT_WINDOW_NM, zero_pad_factor=8, n_samples=None):
    """EOT in nm from the dominant fringe frequency (RIFTS).

    The windowed spectrum is linearly resampled onto a uniform wavenumber grid,
    mean-removed, Hann-apodized and zero-padded before the magnitude FFT. The
    peak is refined with a 3-point parabola through the log magnitudes.
    """
    lo, hi = window_nm
    w = spec.wavelengths_nm
    if not (0 < lo < hi) or lo < w[0] or hi > w[-1]:
        raise WindowOutOfRange(
            f"window {lo:g}-{hi:g} nm outside spectrum range {w[0]:g}-{w[-1]:g} nm"
        )
    if zero_pad_factor < 1 or int(zero_pad_factor) != zero_pad_factor:
        raise ValueError("zero_pad_factor must be a positive integer")
    inside = (w >= lo) & (w <= hi)
    n = int(n_samples) if n_samples else max(int(inside.sum()), 64)

    k = np.linspace(1.0 / hi, 1.0 / lo, n)            # nm^-1, ascending
    # np.interp wants ascending abscissae; 1/lambda runs backwards.
    y = np.interp(k, 1.0 / w[::-1], spec.values[::-1])
    y = (y - y.mean()) * np.hanning(n)

    nfft = int(zero_pad_factor) * n
    mag = np.abs(np.fft.rfft(y, nfft))
    dk = k[1] - k[0]
    freqs = np.fft.rfftfreq(nfft, d=dk)                 # nm

    # skip the DC lobe left behind by the window
    start = int(zero_pad_factor) * 2
    if start + 2 >= mag.size:
        raise NoFringePeak("spectrum too short for a fringe analysis")
    j = start + int(np.argmax(mag[start:]))
    off_peak = np.delete(mag[start:], slice(max(j - start - 2 * zero_pad_factor, 0),
                                             j - start + 2 * zero_pad_factor + 1))
    floor = np.median(off_peak) if off_peak.size else 0.0
    if not mag[j] > 3.0 * floor or mag[j] <= 1e-12 * max(np.abs(spec.values).max(), 1e-300):
        raise NoFringePeak("no fringe peak stands out of the transform")
    if j + 1 >= mag.size:
        return float(freqs[j])
    a, b, c = np.log(mag[j - 1:j + 2] + 1e-300)
    denom = a - 2.0 * b + c
    delta = 0.5 * (a - c) / denom if denom != 0 else 0.0
    return float(freqs[j] + delta * (freqs[1] - freqs[0]))


def build_response_curve(eots, id="curve", concentration_mg_per_ml=0.0, source="experimental"):
    e = eots.eot_nm
    if e.size == 0 or not e[0] > 0:
        raise DegenerateBaseline("first EOT value must be positive")
    return ResponseCurve(id, eots.times_s, (e - e[0]) / e[0], concentration_mg_per_ml, source)
