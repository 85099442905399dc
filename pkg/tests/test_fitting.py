import math
import warnings

import numpy as np
import pytest

from muxread.circuit import FeedlineSpec, ReadoutChain, effective_filter_params
from muxread.errors import InputError
from muxread.fitting import (SpectrumData, SpectrumWarning, fit_dispersive_shift, fit_s21,
                             initial_guess_from_spectrum, read_spectrum_csv, write_fit_json)
from muxread.units import ghz, mhz

FL = FeedlineSpec()


def chain(f_p=6.898, k=38.3, f_r=6.898, J=8.7, chi=0.0, name="R6"):
    return ReadoutChain.from_effective(ghz(f_p), mhz(k), FL, omega_R=ghz(f_r), J=mhz(J), chi=mhz(chi),
                                       kappa_b=mhz(0.001), name=name)


def grid(c, n=801, width=5):
    eff = effective_filter_params(c, FL)
    return np.linspace(eff.omega_P_eff - width * eff.kappa_P_eff, eff.omega_P_eff + width * eff.kappa_P_eff, n)


def perturbed(c, s=1):
    eff = effective_filter_params(c, FL)
    return ReadoutChain.from_effective(eff.omega_P_eff + s * 0.1 * eff.kappa_P_eff,
                                       eff.kappa_P_eff * (1 + 0.1 * s), FL,
                                       omega_R=c.omega_R - s * 0.1 * eff.kappa_P_eff,
                                       J=c.J * (1 - 0.1 * s), chi=c.chi, kappa_b=c.kappa_b)


def truth(c):
    eff = effective_filter_params(c, FL)
    return {"omega_P": eff.omega_P_eff, "kappa_P": eff.kappa_P_eff, "omega_R": c.omega_R, "J": c.J}


def test_noiseless_recovery():
    c = chain(f_p=7.057, k=32.2, f_r=7.058, J=9.2, name="R2")
    res = fit_s21(SpectrumData.from_model(c, FL, grid(c)), perturbed(c), FL)
    assert res.converged
    for k, v in truth(c).items():
        assert res.params[k] == pytest.approx(v, rel=5e-3), k


def test_optimum_is_no_worse_than_truth():
    c = chain()
    rng = np.random.default_rng(0)
    data = SpectrumData.from_model(c, FL, grid(c), noise=0.02, rng=rng)
    res = fit_s21(data, perturbed(c, -1), FL)
    at_truth = np.linalg.norm(np.abs(_s21(c, data.omega_d)) - data.magnitude)
    assert res.residual_norm <= at_truth + 1e-9


def _s21(c, w):
    from muxread.circuit import s21
    return s21(c, FL, w)


def test_dispersive_shift_recovered():
    c = chain(chi=-2.66)
    w = grid(c)
    rng = np.random.default_rng(1)
    dg = SpectrumData.from_model(c, FL, w, "g", noise=0.005, rng=rng)
    de = SpectrumData.from_model(c, FL, w, "e", noise=0.005, rng=rng)
    res = fit_dispersive_shift(dg, de, perturbed(c), FL)
    assert res.params["chi"] == pytest.approx(mhz(-2.66), rel=0.02)
    assert res.uncertainties["chi"] < 0.02 * mhz(2.66)
    # swapping the inputs flips the sign
    swapped = fit_dispersive_shift(de, dg, perturbed(chain(chi=2.66)), FL)
    assert swapped.params["chi"] == pytest.approx(-res.params["chi"], rel=1e-3)


def test_identical_pair_gives_zero_shift():
    c = chain()
    d = SpectrumData.from_model(c, FL, grid(c))
    res = fit_dispersive_shift(d, d, perturbed(chain(chi=-1.0)), FL)
    assert abs(res.params["chi"]) < mhz(0.01)


def test_uncoupled_resonator_null_case():
    c = chain(J=0.0)
    res = fit_s21(SpectrumData.from_model(c, FL, grid(c)), perturbed(chain(J=3.0)), FL)
    assert res.params["J"] < mhz(0.05)
    assert res.params["kappa_P"] == pytest.approx(mhz(38.3), rel=5e-3)


def test_amplitude_rescaling_only_changes_nuisance():
    c = chain()
    data = SpectrumData.from_model(c, FL, grid(c))
    scaled = SpectrumData(data.omega_d, 0.3 * data.magnitude)
    a = fit_s21(data, perturbed(c), FL)
    b = fit_s21(scaled, perturbed(c), FL)
    for k in truth(c):
        assert b.params[k] == pytest.approx(a.params[k], rel=1e-5), k
    assert b.nuisance["amp_0"] == pytest.approx(0.3 * a.nuisance["amp_0"], rel=1e-5)


def test_uncertainty_scales_with_points():
    c = chain()
    rng = np.random.default_rng(2)
    sig = []
    for n in (400, 1600):
        data = SpectrumData.from_model(c, FL, grid(c, n), noise=0.01, rng=rng)
        sig.append(fit_s21(data, perturbed(c), FL).uncertainties["J"])
    assert sig[0] / sig[1] == pytest.approx(2.0, rel=0.25)


def test_initial_guess_close_to_truth():
    c = chain()
    g = initial_guess_from_spectrum(SpectrumData.from_model(c, FL, grid(c)), feedline=FL)
    eff, geff = effective_filter_params(c, FL), effective_filter_params(g, FL)
    assert abs(geff.omega_P_eff - eff.omega_P_eff) < 0.2 * eff.kappa_P_eff
    assert abs(g.omega_R - c.omega_R) < 0.2 * eff.kappa_P_eff
    assert geff.kappa_P_eff == pytest.approx(eff.kappa_P_eff, rel=0.2)
    assert g.J == pytest.approx(c.J, rel=0.2)


def test_guess_rejects_flat_spectrum_and_warns_on_two_dips():
    w = np.linspace(ghz(6.7), ghz(7.1), 401)
    with pytest.raises(InputError, match="no dip"):
        initial_guess_from_spectrum(SpectrumData(w, np.linspace(1.0, 0.95, w.size)))
    a, b = chain(), chain(f_p=7.3, f_r=7.3, name="R2")
    w = np.linspace(ghz(6.7), ghz(7.5), 4001)
    mag = np.abs(_s21(a, w) * _s21(b, w))
    with pytest.warns(SpectrumWarning):
        g = initial_guess_from_spectrum(SpectrumData(w, mag), near=ghz(6.9))
    assert abs(g.omega_R - ghz(6.898)) < mhz(10)


def test_span_too_narrow():
    c = chain()
    eff = effective_filter_params(c, FL)
    w = np.linspace(eff.omega_P_eff - eff.kappa_P_eff, eff.omega_P_eff + eff.kappa_P_eff, 201)
    with pytest.raises(InputError, match="linewidths"):
        fit_s21(SpectrumData.from_model(c, FL, w), c, FL)


def test_spectrum_validation():
    with pytest.raises(InputError):
        SpectrumData([1.0, 1.0], [0.5, 0.5])
    with pytest.raises(InputError):
        SpectrumData([1.0, 2.0], [0.5, -0.5])
    with pytest.raises(InputError):
        SpectrumData([1.0, 2.0], [0.5, 0.5], source="s11")


def test_csv_round_trip_and_json(tmp_path):
    c = chain()
    w = grid(c, 401)
    mag = np.abs(_s21(c, w))
    path = tmp_path / "spec.csv"
    lines = ["# synthetic", "frequency_hz,magnitude"] + [f"{float(x) / (2 * math.pi)!r},{float(m)!r}" for x, m in zip(w, mag)]
    path.write_text("\n".join(lines) + "\n")
    data = read_spectrum_csv(path)
    assert np.allclose(data.omega_d, w, rtol=1e-15)
    res = fit_s21(data, perturbed(c), FL)
    out = tmp_path / "fit.json"
    write_fit_json(res, out)
    assert '"converged": true' in out.read_text()
    bad = tmp_path / "bad.csv"
    bad.write_text("frequency_hz,magnitude\n1e9,abc\n")
    with pytest.raises(InputError, match="row 2"):
        read_spectrum_csv(bad)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        missing = tmp_path / "cols.csv"
        missing.write_text("f,m\n1,2\n")
        with pytest.raises(InputError, match="columns"):
            read_spectrum_csv(missing)
