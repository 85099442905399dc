"""Time-domain response of readout chains to pulsed drives and measurement-induced dephasing.

The two-mode equations of motion are linear and time invariant between
drive samples, so each piecewise-constant segment is propagated with the
exact matrix exponential.  For long traces the propagation is diagonalized
and run as two first-order recursions (``scipy.signal.lfilter``).
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
import math
import os

import numpy as np
from scipy.linalg import expm
from scipy.integrate import trapezoid
from scipy.signal import lfilter
from scipy.special import erf

from .circuit import effective_filter_params, mode_matrix, steady_state_photon
from .errors import InputError, NumericalError

PULSE_SHAPES = ("square", "gaussian_filtered_square")


@dataclass(frozen=True)
class PulseSpec:
    """Readout pulse envelope.

    ``amplitude`` is the incident feedline field at the input capacitor in
    sqrt(photons/s).  The plateau of length ``tau_p`` begins at ``t_start``;
    the Gaussian-filtered shape is the square convolved with a normalized
    Gaussian of width ``sigma_filter``.
    """

    tau_p: float
    amplitude: float = 0.0
    carrier_omega: float = 0.0
    shape: str = "square"
    sigma_filter: float = 0.0
    t_start: float = 0.0

    def __post_init__(self):
        if self.shape not in PULSE_SHAPES:
            raise InputError(f"unknown pulse shape {self.shape!r}")
        if not self.tau_p > 0:
            raise InputError("tau_p must be positive")
        if self.amplitude < 0:
            raise InputError("amplitude must be non-negative")
        if self.shape == "gaussian_filtered_square" and not self.sigma_filter > 0:
            raise InputError("sigma_filter must be positive for a filtered pulse")

    @property
    def t_end(self):
        tail = 6.0 * self.sigma_filter if self.shape == "gaussian_filtered_square" else 0.0
        return self.t_start + self.tau_p + tail

    @property
    def lead_in(self):
        """Delay from ``t_start`` to the plateau rise (room for the filtered tail)."""
        return 6.0 * self.sigma_filter if self.shape == "gaussian_filtered_square" else 0.0

    def envelope(self, t):
        t = np.asarray(t, dtype=float)
        t0 = self.t_start + self.lead_in
        if self.shape == "square":
            env = ((t >= t0) & (t < t0 + self.tau_p)).astype(float)
        else:
            s = math.sqrt(2.0) * self.sigma_filter
            env = 0.5 * (erf((t - t0) / s) - erf((t - t0 - self.tau_p) / s))
        return self.amplitude * env

    def scaled(self, factor):
        return replace(self, amplitude=self.amplitude * factor)


@dataclass
class FieldTrace:
    """Complex filter (``a``) and resonator (``b``) amplitudes on a uniform grid.

    ``out`` is the qubit-state-dependent part of the output-port field.
    """

    t: np.ndarray
    a: np.ndarray
    b: np.ndarray
    qubit_state: str
    out: np.ndarray = None

    @property
    def dt(self):
        return float(self.t[1] - self.t[0])


@dataclass
class DephasingMatrix:
    gamma: np.ndarray
    tau_m: float
    names: tuple = ()


def _segment_propagators(M, dt):
    # augmented exponential yields exp(M dt) and int_0^dt exp(M s) ds without inverting M
    n = M.shape[0]
    aug = np.zeros((2 * n, 2 * n), dtype=complex)
    aug[:n, :n] = M
    aug[:n, n:] = np.eye(n)
    E = expm(aug * dt)
    return E[:n, :n], E[:n, n:]


def propagate(M, drive_vec, samples, dt):
    """Exact propagation of dx/dt = M x + drive_vec * u(t) for piecewise-constant u.

    ``samples[k]`` is the drive on [t_k, t_k+1).  Returns x at t_0 .. t_n with
    x(t_0) = 0.
    """
    samples = np.asarray(samples, dtype=complex)
    phi, psi = _segment_propagators(M, dt)
    kick = psi @ np.asarray(drive_vec, dtype=complex)
    n = samples.size
    evals, V = np.linalg.eig(phi)
    x = np.zeros((n + 1, M.shape[0]), dtype=complex)
    if np.linalg.cond(V) < 1e6:
        c = np.linalg.solve(V, kick)
        y = np.empty((n + 1, M.shape[0]), dtype=complex)
        y[0] = 0.0
        for i, lam in enumerate(evals):
            y[1:, i] = lfilter([c[i]], [1.0, -lam], samples)
        x = y @ V.T
    else:
        # near an exceptional point the eigenbasis is ill-conditioned; step directly
        p00, p01, p10, p11 = phi[0, 0], phi[0, 1], phi[1, 0], phi[1, 1]
        k0, k1 = kick[0], kick[1]
        a = b = 0j
        xs = x.tolist()
        for k, u in enumerate(samples.tolist()):
            a, b = p00 * a + p01 * b + k0 * u, p10 * a + p11 * b + k1 * u
            xs[k + 1] = [a, b]
        x = np.array(xs, dtype=complex)
    return x


def slowest_decay_rate(chain, feedline, omega_d):
    """Smallest amplitude decay rate of the chain's modes over both qubit states."""
    rates = []
    for state in ("g", "e"):
        M, _, _ = mode_matrix(chain, feedline, omega_d, state)
        rates.append(np.min(-np.linalg.eigvals(M).real))
    return float(min(rates))


def default_grid(chain, feedline, pulse, decay_to=1e-7, dt_max=1e-10):
    """Time step and trace length resolving the dynamics and the full ring-down.

    ``dt`` respects dt <= 1/(20 max(kappa, |detunings|, J)); the trace runs
    until the slowest mode has decayed by ``decay_to`` after the pulse ends.
    """
    eff = effective_filter_params(chain, feedline)
    w = pulse.carrier_omega
    fastest = max(eff.kappa_P_eff, abs(eff.omega_P_eff - w),
                  abs(chain.omega_R - w) + abs(chain.chi), chain.J)
    dt = min(dt_max, 1.0 / (20.0 * fastest))
    rate = slowest_decay_rate(chain, feedline, w)
    if rate <= 0:
        raise NumericalError("chain has a non-decaying mode; no finite ring-down")
    t_end = pulse.t_end + math.log(1.0 / decay_to) / rate
    return dt, t_end


def simulate_response(chain, feedline, pulse, qubit_state, dt=None, t_end=None):
    """Integrate the chain's field response to ``pulse`` with the qubit in ``qubit_state``.

    Works in the frame of the pulse carrier.  Raises :class:`NumericalError`
    for unstable parameters (an eigenvalue with positive real part).
    """
    if qubit_state not in ("g", "e"):
        raise InputError(f"qubit_state must be 'g' or 'e', got {qubit_state!r}")
    if dt is None or t_end is None:
        dt0, t0 = default_grid(chain, feedline, pulse)
        dt = dt if dt is not None else dt0
        t_end = t_end if t_end is not None else t0
    if not (dt > 0 and t_end > dt):
        raise InputError("need 0 < dt < t_end")
    M, cin, cout = mode_matrix(chain, feedline, pulse.carrier_omega, qubit_state)
    if np.any(np.linalg.eigvals(M).real > 0):
        raise NumericalError("unstable chain parameters: eigenvalue with positive real part")
    n = int(round(t_end / dt))
    t = np.arange(n + 1) * dt
    samples = pulse.envelope(t[:-1] + dt / 2.0)
    x = propagate(M, np.array([cin, 0.0]), samples, dt)
    return FieldTrace(t=t, a=x[:, 0], b=x[:, 1], qubit_state=qubit_state, out=cout * x[:, 0])


def rk4_reference(chain, feedline, pulse, qubit_state, dt, t_end, substeps=10):
    """Fixed-step RK4 integration (same piecewise-constant drive); an independent cross-check."""
    M, cin, _ = mode_matrix(chain, feedline, pulse.carrier_omega, qubit_state)
    n = int(round(t_end / dt))
    t = np.arange(n + 1) * dt
    samples = pulse.envelope(t[:-1] + dt / 2.0)
    h = dt / substeps
    x = np.zeros(2, dtype=complex)
    out = np.zeros((n + 1, 2), dtype=complex)
    drive = np.array([cin, 0.0])
    for k in range(n):
        f = drive * samples[k]
        for _ in range(substeps):
            k1 = M @ x + f
            k2 = M @ (x + h / 2 * k1) + f
            k3 = M @ (x + h / 2 * k2) + f
            k4 = M @ (x + h * k3) + f
            x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        out[k + 1] = x
    return FieldTrace(t=t, a=out[:, 0], b=out[:, 1], qubit_state=qubit_state)


def photon_number(trace, threshold=0.01):
    """Resonator photon number |b(t)|^2 and the occupation time.

    Occupation time is the span between the first and last instants where the
    photon number exceeds ``threshold`` times its maximum.
    """
    n = np.abs(trace.b) ** 2
    peak = n.max()
    if peak == 0:
        return n, 0.0
    above = np.nonzero(n > threshold * peak)[0]
    return n, float(trace.t[above[-1]] - trace.t[above[0]])


def calibrate_amplitude(chain, feedline, pulse_template, target_photons, qubit_state="g"):
    """Drive amplitude whose steady-state plateau photon number equals ``target_photons``.

    The response is linear in the drive, so the occupation is exactly
    quadratic in the amplitude and the map inverts in closed form.
    """
    if target_photons < 0:
        raise InputError("target_photons must be non-negative")
    if target_photons == 0:
        return 0.0
    unit = steady_state_photon(chain, feedline, pulse_template.carrier_omega, 1.0, qubit_state)
    if not unit > 0:
        raise NumericalError("chain does not respond to the drive; cannot calibrate")
    return math.sqrt(target_photons / unit)


def _check_pair(trace_g, trace_e):
    if trace_g.t.shape != trace_e.t.shape or not np.allclose(trace_g.t, trace_e.t, rtol=0, atol=1e-18):
        raise InputError("traces must share a time grid")


def instantaneous_dephasing(trace_g, trace_e, chi):
    """Measurement-induced dephasing rate 2 chi Im(b_g b_e*) at each time step."""
    _check_pair(trace_g, trace_e)
    return 2.0 * chi * np.imag(trace_g.b * np.conj(trace_e.b))


def integrated_dephasing(trace_g, trace_e, chi, decay_tol=1e-4):
    """Total dephasing exponent, the time integral of the instantaneous rate.

    The traces must have rung down: both fields below ``decay_tol`` of their
    peaks at the last sample.
    """
    rate = instantaneous_dephasing(trace_g, trace_e, chi)
    for tr in (trace_g, trace_e):
        for field in (tr.a, tr.b):
            peak = np.abs(field).max()
            if peak > 0 and abs(field[-1]) > decay_tol * peak:
                raise InputError(
                    f"trace too short: field still at {abs(field[-1]) / peak:.2e} of its peak")
    return float(trapezoid(rate, trace_g.t))


def average_dephasing_rate(trace_g, trace_e, chi, tau_m):
    """Average dephasing rate (1/tau_m) int Gamma(t) dt."""
    if not tau_m > 0:
        raise InputError("tau_m must be positive")
    return integrated_dephasing(trace_g, trace_e, chi) / tau_m


def dephasing_from_pulse(chain, feedline, pulse, tau_m, dt=None, t_end=None):
    tg = simulate_response(chain, feedline, pulse, "g", dt, t_end)
    te = simulate_response(chain, feedline, pulse, "e", tg.dt, tg.t[-1])
    return average_dephasing_rate(tg, te, chain.chi, tau_m)


def _threads():
    try:
        return max(1, int(os.environ.get("MUXREAD_THREADS", "") or os.cpu_count() or 1))
    except ValueError:
        return 1


def crosstalk_dephasing_matrix(chains, feedline, pulses, tau_m=None):
    """Average dephasing rate of each chain's qubit under each chain's readout pulse.

    Entry (i, j) drives chain i with pulse j (chain j's carrier and calibrated
    amplitude).  The feedline is treated as an ideal splitter, so chains
    respond independently.
    """
    if len(chains) != len(pulses):
        raise InputError("need one pulse per chain")
    n = len(chains)
    tau_m = tau_m if tau_m is not None else pulses[0].tau_p
    jobs = [(i, j) for i in range(n) for j in range(n)]

    def entry(ij):
        i, j = ij
        try:
            return dephasing_from_pulse(chains[i], feedline, pulses[j], tau_m)
        except (InputError, NumericalError) as exc:
            raise type(exc)(f"entry ({i}, {j}): {exc}") from exc

    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        values = list(pool.map(entry, jobs))
    gamma = np.array(values).reshape(n, n)
    return DephasingMatrix(gamma=gamma, tau_m=tau_m, names=tuple(c.name for c in chains))


def phase_error_probability(gamma_ij, tau_m):
    """Phase-error probability [1 - exp(-Gamma tau)] / 2."""
    if gamma_ij < 0:
        raise InputError("dephasing rate must be non-negative")
    return 0.5 * (-math.expm1(-gamma_ij * tau_m))


def ramsey_contrast_curve(chain, feedline, pulse, scale_factors, tau_m=None):
    """Normalized Ramsey contrast exp(-Gamma tau xi^2) for readout pulses scaled by ``xi``."""
    xi = np.asarray(scale_factors, dtype=float)
    if np.any(xi < 0):
        raise InputError("scale factors must be non-negative")
    tau_m = tau_m if tau_m is not None else pulse.tau_p
    gamma = dephasing_from_pulse(chain, feedline, pulse, tau_m)
    return list(zip(xi.tolist(), np.exp(-gamma * tau_m * xi**2).tolist()))


def fit_ramsey_contrast(scale_factors, contrast, tau_m):
    """Fit c(xi) = c0 exp(-Gamma tau xi^2); returns ``(c0, Gamma)``."""
    xi = np.asarray(scale_factors, dtype=float)
    c = np.asarray(contrast, dtype=float)
    slope, intercept = np.polyfit(xi**2, np.log(c), 1)
    return float(np.exp(intercept)), float(-slope / tau_m)
