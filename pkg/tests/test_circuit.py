import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from muxread.circuit import (FeedlineSpec, ReadoutChain, approx_readout_linewidth, chain_gamma,
                             critical_photon_number, directionality, effective_filter_params,
                             effective_readout_linewidth, mode_matrix, purcell_t1_limit,
                             reflection_coefficient, resonator_frequency, s21, s23,
                             steady_state_photon)
from muxread.errors import InputError, NumericalError
from muxread.units import ghz, mhz

FL = FeedlineSpec()


def r6(**kw):
    base = dict(omega_R=ghz(6.898), J=mhz(8.7), chi=mhz(-2.66), g=mhz(115.9), omega_Q=ghz(5.902),
                name="R6")
    base.update(kw)
    return ReadoutChain.from_effective(ghz(6.898), mhz(38.3), FL, **base)


def test_reflection_without_capacitor_is_total():
    assert reflection_coefficient(FeedlineSpec(C_in=0.0), ghz(7.0)) == 1.0


def test_reflection_magnitude_below_one_and_lossless_identity():
    gam = complex(reflection_coefficient(FL, ghz(7.0)))
    assert abs(gam) < 1
    # a purely reactive coupler satisfies |G|^2 = Re G
    assert abs(abs(gam) ** 2 - gam.real) < 1e-15
    assert directionality(FL, ghz(7.0)) == pytest.approx((1 + abs(gam) ** 2) / 2, rel=1e-15)


def test_from_effective_round_trip():
    chain = r6()
    eff = effective_filter_params(chain, FL)
    assert eff.omega_P_eff == pytest.approx(ghz(6.898), rel=1e-14)
    assert eff.kappa_P_eff == pytest.approx(mhz(38.3), rel=1e-12)
    assert chain.kappa_P_bare > eff.kappa_P_eff


def test_chain_validation():
    with pytest.raises(InputError):
        ReadoutChain(omega_P_bare=ghz(7), kappa_P_bare=-1.0, omega_R=ghz(7), J=mhz(1))
    with pytest.raises(InputError):
        ReadoutChain(omega_P_bare=ghz(7), kappa_P_bare=1.0, omega_R=ghz(7), J=mhz(1), P_therm=1.5)


def test_resonator_frequency_convention():
    chain = r6()
    assert resonator_frequency(chain, "g") == chain.omega_R - chain.chi
    assert resonator_frequency(chain, "e") == chain.omega_R + chain.chi
    with pytest.raises(InputError):
        resonator_frequency(chain, "x")


def test_linewidth_limits():
    assert effective_readout_linewidth(mhz(40), 0.0, 0.0) == 0.0
    # exceptional point kappa = 4J: both modes share kappa/2
    assert effective_readout_linewidth(mhz(40), mhz(10), 0.0) == pytest.approx(mhz(20), rel=1e-12)
    # weak coupling reduces to the perturbative expression
    k, J, d = mhz(40), mhz(0.1), mhz(30)
    assert effective_readout_linewidth(k, J, d) == pytest.approx(approx_readout_linewidth(k, J, d), rel=1e-4)


@given(st.floats(1, 100), st.floats(0.01, 20), st.floats(-200, 200))
def test_linewidth_bounded_by_filter(k, J, d):
    kr = effective_readout_linewidth(mhz(k), mhz(J), mhz(d))
    assert 0 <= kr <= mhz(k) / 2 * (1 + 1e-12)


def test_linewidth_matches_slowest_eigenmode():
    chain = r6(chi=0.0, kappa_b=0.0)
    eff = effective_filter_params(chain, FL)
    M, _, _ = mode_matrix(chain, FL, chain.omega_R)
    slowest = np.min(-np.linalg.eigvals(M).real)
    assert 2 * slowest == pytest.approx(eff.kappa_R_eff, rel=1e-10)


def test_s21_far_from_resonance_is_unity():
    chain = r6()
    assert abs(s21(chain, FL, ghz(5.0))) == pytest.approx(1.0, abs=1e-3)


def test_s21_single_filter_zero_is_shifted_by_coupler_phase():
    chain = r6(J=0.0)
    eff = effective_filter_params(chain, FL)
    gam = chain_gamma(chain, FL)
    beta = gam.imag / (1 + gam.real)
    w0 = eff.omega_P_eff - beta * eff.kappa_P_eff / 2
    assert abs(s21(chain, FL, w0)) < 1e-12
    # at the effective filter frequency itself the dip is not complete
    assert abs(s21(chain, FL, eff.omega_P_eff)) == pytest.approx(abs(gam.imag) / (1 + gam.real), rel=1e-9)


def test_s23_vanishes_without_resonator_port():
    chain = r6(kappa_b=0.0)
    assert np.all(s23(chain, FL, ghz(np.linspace(6.8, 7.0, 11))) == 0)


def test_s21_invalid_frequency():
    with pytest.raises(InputError):
        s21(r6(), FL, -1.0)


@settings(max_examples=25)
@given(st.floats(0.1, 100))
def test_photon_number_quadratic_in_amplitude(scale):
    chain = r6()
    n1 = steady_state_photon(chain, FL, ghz(6.891), 1e6)
    n2 = steady_state_photon(chain, FL, ghz(6.891), 1e6 * scale)
    assert n2 == pytest.approx(n1 * scale**2, rel=1e-10)


def test_no_filter_photon_number_is_lorentzian():
    chain = r6()
    kr = effective_filter_params(chain, FL).kappa_R_eff
    d = mhz(7)
    n = steady_state_photon(chain, FL, chain.omega_R + d, 1e6, with_filter=False)
    assert n == pytest.approx(kr * 1e12 / (kr**2 / 4 + d**2), rel=1e-12)


def test_purcell_limits():
    chain = r6()
    assert purcell_t1_limit(r6(g=0.0), FL, ghz(-1)) == math.inf
    kr = effective_filter_params(chain, FL).kappa_R_eff
    dq = ghz(-2.0)
    t_no = purcell_t1_limit(chain, FL, dq, with_filter=False)
    assert t_no == pytest.approx(dq**2 / (chain.g**2 * kr), rel=0.02)
    assert purcell_t1_limit(chain, FL, dq) > 50 * t_no


def test_purcell_hybridized_raises():
    with pytest.raises(NumericalError):
        purcell_t1_limit(r6(), FL, mhz(5.0))
    with pytest.raises(InputError):
        purcell_t1_limit(r6(), FL, 0.0)


def test_critical_photon_number_oracle():
    # 0.996^2 / (4 * 0.1159^2) = 0.992016 / 0.05373124
    assert critical_photon_number(mhz(115.9), ghz(5.902), ghz(6.898)) == pytest.approx(18.46256, abs=1e-5)
