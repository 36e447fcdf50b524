import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=30,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def fringe_spectrum(two_nl, lo=400.0, hi=1100.0, n=1000, offset=0.5, amp=0.3):
    """Synthetic single-layer Fabry-Perot reflectance."""
    from equilcast.spectra import REFLECTANCE, Spectrum
    w = np.linspace(lo, hi, n)
    return Spectrum(w, offset + amp * np.cos(2 * np.pi * two_nl / w), REFLECTANCE)


# acceptance criteria push (number, passed, detail) here; printed once at the end
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
