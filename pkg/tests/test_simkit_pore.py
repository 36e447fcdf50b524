import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from equilcast import _kernels
from equilcast.errors import InvalidParameters, PoreBlocked
from equilcast.simkit import pore
from equilcast.simkit.pore import SimulationParameters, simulate, simulate_response

REF = SimulationParameters(k_a=300.0, k_d=3e-3, b_max=1e-6, d_pore=20.0, d_bulk=3e-11, r_h=4.5, c_bulk=1.0)


def langmuir_coverage(p):
    c_molar = p.c_bulk / pore.BSA_MOLECULAR_WEIGHT_G_PER_MOL
    return p.k_a * c_molar / (p.k_a * c_molar + p.k_d)


def with_(p, **kw):
    return SimulationParameters(**{**p.to_dict(), **kw})


def test_renkin_known_values():
    assert pore.renkin_hindrance(0.0) == 1.0
    assert pore.renkin_hindrance(1.0) == 0.0
    lam = 0.45
    assert pore.renkin_hindrance(lam) == pytest.approx(
        (1 - lam) ** 2 * (1 - 2.104 * lam + 2.089 * lam ** 3 - 0.948 * lam ** 5))


def test_no_binding_gives_zero_response():
    r = simulate_response(with_(REF, k_a=0.0, c_bulk=7.0), n_steps=60)
    np.testing.assert_array_equal(r.response, 0.0)
    assert r.source == "simulated"


def test_response_starts_at_zero():
    assert simulate_response(REF, n_steps=20).response[0] == 0.0


@pytest.mark.parametrize("c_bulk", [1.0, 10.0, 40.0])
def test_long_time_langmuir_equilibrium(c_bulk):
    # fast diffusion and a long horizon: the pore fills to the closed-form coverage
    p = with_(REF, d_bulk=1e-9, c_bulk=c_bulk, k_d=1e-2)
    sol = simulate(p, n_steps=200, dt_s=2000.0)
    theta = sol.mean_bound[-1] / p.b_max
    assert theta == pytest.approx(langmuir_coverage(p), rel=1e-2)


@given(st.floats(1.2, 3.8), st.floats(-4.5, -0.5), st.floats(-7.5, -4.5),
       st.floats(math.log10(16), math.log10(34)), st.floats(-10.9, -9.1), st.floats(0.0, 40.0))
def test_mass_balance(log_ka, log_kd, log_bmax, log_dp, log_db, c):
    v = [log_ka, log_kd, log_bmax, log_dp, log_db, math.log10(4.2)]
    p = SimulationParameters.from_log10(v, c_bulk=c)
    sol = simulate(p, n_steps=80)
    assert sol.mass_balance_error <= 1e-3


def test_mass_balance_reference_run_is_tight():
    assert simulate(REF).mass_balance_error < 1e-8


def test_monotone_loading_without_desorption():
    b = simulate(with_(REF, k_d=0.0, c_bulk=5.0), n_steps=120).mean_bound
    assert np.all(np.diff(b) >= -1e-20)


@given(st.floats(0.001, 20.0), st.floats(1.01, 5.0))
def test_equilibrium_ordering(c, factor):
    lo = simulate_response(with_(REF, c_bulk=c), n_steps=100).final
    hi = simulate_response(with_(REF, c_bulk=c * factor), n_steps=100).final
    assert hi >= lo * (1 - 1e-9)


def test_refinement_converges():
    coarse = simulate_response(REF, n_steps=250, n_grid=32, substeps=4).final
    fine = simulate_response(REF, n_steps=250, n_grid=64, substeps=8).final
    assert abs(fine - coarse) / abs(fine) <= 5e-3


def test_errors():
    with pytest.raises(PoreBlocked):
        simulate(with_(REF, r_h=10.0, d_pore=20.0))
    with pytest.raises(InvalidParameters):
        simulate(with_(REF, k_a=-1.0))
    with pytest.raises(ValueError):
        simulate(REF, n_grid=8)


def test_response_mapping_scale():
    # full saturation at the reference density maps to the calibrated maximum
    assert pore.response_from_bound(pore.REFERENCE_B_MAX) == pytest.approx(pore.RESPONSE_AT_REFERENCE)


def test_parameter_serialization_round_trip():
    assert SimulationParameters.from_dict(REF.to_dict()) == REF
    back = SimulationParameters.from_log10(REF.log10_vector(), REF.c_bulk)
    np.testing.assert_allclose(back.fitted_vector(), REF.fitted_vector(), rtol=1e-12)
    assert REF.in_bounds()
    assert not with_(REF, k_a=1e5).in_bounds()


@pytest.mark.skipif(not _kernels.HAS_NUMBA, reason="numba not installed")
def test_numba_and_numpy_integrators_agree():
    args = (0.3, 3e-3, 1e-6, 2e8, 3e-12, 1000 / 66430, 3.63e-6, 32, 188.0, 60, 4)
    a = _kernels.pore_integrate_numba(*args)
    b = _kernels.pore_integrate_numpy(*args)
    for x, y in zip(a, b):
        np.testing.assert_allclose(x, y, rtol=1e-9, atol=1e-20)
