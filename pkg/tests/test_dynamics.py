import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import trapezoid

from muxread.circuit import FeedlineSpec, ReadoutChain, effective_filter_params, steady_state_photon
from muxread.dynamics import (PulseSpec, calibrate_amplitude, crosstalk_dephasing_matrix,
                              dephasing_from_pulse, fit_ramsey_contrast, integrated_dephasing,
                              phase_error_probability, photon_number, propagate,
                              ramsey_contrast_curve, rk4_reference, simulate_response)
from muxread.errors import InputError
from muxread.units import ghz, mhz

FL = FeedlineSpec()


def q6(f_ghz=6.898, **kw):
    base = dict(omega_R=ghz(f_ghz), J=mhz(8.7), chi=mhz(-2.66), kappa_b=mhz(0.001), name="Q6")
    base.update(kw)
    return ReadoutChain.from_effective(ghz(f_ghz), mhz(38.3), FL, **base)


def pulse_for(chain, photons=5.8, shape="square", tau=80e-9, omega=ghz(6.891)):
    sigma = 5e-9 if shape != "square" else 0.0
    tpl = PulseSpec(tau_p=tau, amplitude=1.0, carrier_omega=omega, shape=shape, sigma_filter=sigma)
    return tpl.scaled(calibrate_amplitude(chain, FL, tpl, photons))


def test_pulse_validation():
    with pytest.raises(InputError):
        PulseSpec(tau_p=0.0)
    with pytest.raises(InputError):
        PulseSpec(tau_p=1e-8, shape="gaussian_filtered_square")
    with pytest.raises(InputError):
        PulseSpec(tau_p=1e-8, shape="triangle")


def test_filtered_pulse_keeps_area():
    p = PulseSpec(tau_p=80e-9, amplitude=2.0, shape="gaussian_filtered_square", sigma_filter=5e-9)
    t = np.linspace(0, p.t_end + 30e-9, 200001)
    assert trapezoid(p.envelope(t), t) == pytest.approx(2.0 * 80e-9, rel=1e-6)


def test_propagator_matches_rk4():
    chain = q6()
    p = pulse_for(chain)
    tr = simulate_response(chain, FL, p, "e", dt=2e-10, t_end=300e-9)
    ref = rk4_reference(chain, FL, p, "e", dt=2e-10, t_end=300e-9, substeps=10)
    scale = np.abs(tr.a).max()
    assert np.max(np.abs(tr.a - ref.a)) < 1e-9 * scale
    assert np.max(np.abs(tr.b - ref.b)) < 1e-9 * scale


def test_propagate_loop_and_eigen_paths_agree():
    # a defective matrix forces the loop path; a slightly perturbed one uses the eigenbasis
    M0 = np.array([[-1.0 + 0j, 1.0], [0.0, -1.0]])
    M1 = M0 + np.array([[0, 0], [1e-3, 0]])
    u = np.ones(50)
    x0 = propagate(M0, [1.0, 0.0], u, 0.05)
    x1 = propagate(M1, [1.0, 0.0], u, 0.05)
    assert np.max(np.abs(x0 - x1)) < 5e-3


def test_long_pulse_reaches_steady_state():
    chain = q6()
    p = pulse_for(chain, tau=2e-6)
    tr = simulate_response(chain, FL, p, "g")
    n, _ = photon_number(tr)
    i = np.searchsorted(tr.t, 1.9e-6)
    assert n[i] == pytest.approx(5.8, rel=1e-6)
    assert steady_state_photon(chain, FL, p.carrier_omega, p.amplitude, "g") == pytest.approx(5.8, rel=1e-12)


def test_response_linear_in_amplitude():
    chain = q6()
    p = pulse_for(chain)
    a = simulate_response(chain, FL, p, "g")
    b = simulate_response(chain, FL, p.scaled(3.0), "g", a.dt, a.t[-1])
    assert np.allclose(b.b, 3.0 * a.b, rtol=0, atol=1e-12 * np.abs(b.b).max())


def test_information_leak_identity():
    # total dephasing equals half the rate-weighted distinguishability leaking out of both modes
    chain = q6()
    p = pulse_for(chain)
    tg = simulate_response(chain, FL, p, "g")
    te = simulate_response(chain, FL, p, "e", tg.dt, tg.t[-1])
    D = integrated_dephasing(tg, te, chain.chi)
    kappa_a = effective_filter_params(chain, FL).kappa_P_eff
    leak = 0.5 * trapezoid(kappa_a * np.abs(te.a - tg.a) ** 2 + chain.kappa_b * np.abs(te.b - tg.b) ** 2, tg.t)
    assert D > 0
    assert D == pytest.approx(leak, rel=1e-3)


def test_no_dispersive_shift_no_dephasing():
    chain = q6(chi=0.0)
    assert dephasing_from_pulse(chain, FL, pulse_for(chain), 80e-9) == 0.0


def test_truncated_trace_rejected():
    chain = q6()
    p = pulse_for(chain)
    tg = simulate_response(chain, FL, p, "g", dt=1e-10, t_end=120e-9)
    te = simulate_response(chain, FL, p, "e", dt=1e-10, t_end=120e-9)
    with pytest.raises(InputError, match="too short"):
        integrated_dephasing(tg, te, chain.chi)


def test_occupation_time_definition():
    chain = q6()
    tr = simulate_response(chain, FL, pulse_for(chain), "g")
    n, span = photon_number(tr)
    above = tr.t[n > 0.01 * n.max()]
    assert span == pytest.approx(above[-1] - above[0])
    assert 80e-9 < span < 250e-9


def test_crosstalk_matrix_independent_of_threads(monkeypatch):
    chains = [q6(), q6(7.298, name="far")]
    pulses = [pulse_for(chains[0]), pulse_for(chains[1], omega=ghz(7.296))]
    monkeypatch.setenv("MUXREAD_THREADS", "1")
    one = crosstalk_dephasing_matrix(chains, FL, pulses)
    monkeypatch.setenv("MUXREAD_THREADS", "4")
    four = crosstalk_dephasing_matrix(chains, FL, pulses)
    assert np.array_equal(one.gamma, four.gamma)
    assert one.gamma[0, 0] > 100 * one.gamma[0, 1]


def test_phase_error_probability():
    assert phase_error_probability(0.0, 1e-7) == 0.0
    assert phase_error_probability(1e12, 1e-7) == pytest.approx(0.5)
    with pytest.raises(InputError):
        phase_error_probability(-1.0, 1e-7)


def test_ramsey_fit_recovers_dephasing_rate():
    chain = q6()
    p = pulse_for(chain)
    gamma = dephasing_from_pulse(chain, FL, p, 80e-9)
    xi, c = zip(*ramsey_contrast_curve(chain, FL, p, np.linspace(0, 0.5, 8)))
    c0, g_fit = fit_ramsey_contrast(xi, c, 80e-9)
    assert c0 == pytest.approx(1.0, rel=1e-9)
    assert g_fit == pytest.approx(gamma, rel=1e-9)


@settings(max_examples=10, deadline=None)
@given(st.floats(1.0, 50.0))
def test_calibration_hits_target(photons):
    chain = q6()
    p = pulse_for(chain, photons)
    assert steady_state_photon(chain, FL, p.carrier_omega, p.amplitude, "g") == pytest.approx(photons, rel=1e-12)
    assert math.isfinite(p.amplitude)
