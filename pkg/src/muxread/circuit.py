"""Frequency-domain model of a feedline + Purcell filter + readout resonator chain.

Each chain is two coupled linear modes: the Purcell filter ``a`` (strongly
coupled to the feedline) and the readout resonator ``b`` (weakly coupled to
a qubit drive line).  The input capacitor of the feedline renormalizes the
filter linewidth and frequency through its reflection coefficient.

All frequencies and rates are angular (rad/s).
"""

from dataclasses import dataclass, replace
import math

import numpy as np

from .errors import InputError, NumericalError

QUBIT_STATES = (None, "g", "e")


@dataclass(frozen=True)
class FeedlineSpec:
    """Characteristic impedance ``Z0`` (ohm) and input capacitance ``C_in`` (F)."""

    Z0: float = 50.0
    C_in: float = 40e-15

    def __post_init__(self):
        if not self.Z0 > 0:
            raise InputError(f"Z0 must be positive, got {self.Z0}")
        if not self.C_in >= 0:
            raise InputError(f"C_in must be non-negative, got {self.C_in}")


@dataclass(frozen=True)
class ReadoutChain:
    """Circuit parameters of one readout chain (angular units, SI).

    ``omega_P_bare`` and ``kappa_P_bare`` are the filter frequency and
    linewidth in the single-port limit (Gamma -> 1).  Use
    :meth:`from_effective` to build a chain from fitted (feedline-renormalized)
    filter parameters as they appear in spectroscopy tables.
    """

    omega_P_bare: float
    kappa_P_bare: float
    omega_R: float
    J: float
    kappa_b: float = 0.0
    gamma_a: float = 0.0
    gamma_b: float = 0.0
    chi: float = 0.0
    g: float = 0.0
    omega_Q: float = math.nan
    T1: float = math.inf
    P_therm: float = 0.0
    name: str = ""

    def __post_init__(self):
        for field in ("omega_P_bare", "kappa_P_bare", "omega_R", "J", "kappa_b",
                      "gamma_a", "gamma_b", "g", "T1"):
            value = getattr(self, field)
            if not value >= 0:
                raise InputError(f"{self.name or 'chain'}: {field} must be >= 0, got {value}")
        if not 0.0 <= self.P_therm <= 1.0:
            raise InputError(f"{self.name or 'chain'}: P_therm must be in [0, 1], got {self.P_therm}")
        if not math.isfinite(self.chi):
            raise InputError(f"{self.name or 'chain'}: chi must be finite")

    @classmethod
    def from_effective(cls, omega_P, kappa_P, feedline, **kwargs):
        """Build a chain whose renormalized filter parameters equal ``omega_P``, ``kappa_P``.

        Inverts ``kappa_eff = kappa (1 + Re G)/2`` and
        ``omega_eff = omega + kappa Im G / 4`` with ``G`` evaluated at the bare
        filter frequency, by fixed-point iteration.
        """
        omega_a, kappa_a = omega_P, kappa_P
        for _ in range(100):
            gam = reflection_coefficient(feedline, omega_a)
            kappa_new = 2.0 * kappa_P / (1.0 + gam.real)
            omega_new = omega_P - kappa_new * gam.imag / 4.0
            done = abs(omega_new - omega_a) <= 1e-15 * omega_P and abs(kappa_new - kappa_a) <= 1e-15 * kappa_P
            omega_a, kappa_a = omega_new, kappa_new
            if done:
                break
        return cls(omega_P_bare=omega_a, kappa_P_bare=kappa_a, **kwargs)

    def with_updates(self, **changes):
        return replace(self, **changes)


@dataclass(frozen=True)
class EffectiveChainParams:
    omega_P_eff: float
    kappa_P_eff: float
    kappa_R_eff: float
    delta_ab: float


def reflection_coefficient(feedline, omega):
    """Reflection coefficient of the series input capacitor, 1/(1 + 2i w Z0 C_in)."""
    omega = np.asarray(omega, dtype=float)
    if np.any(omega < 0):
        raise InputError("omega must be non-negative")
    if feedline.C_in == 0:
        # no capacitor: the filter sees a single port
        out = np.ones_like(omega, dtype=complex)
    else:
        out = 1.0 / (1.0 + 2j * omega * feedline.Z0 * feedline.C_in)
    return out[()] if out.ndim == 0 else out


def directionality(feedline, omega):
    """Fraction (1 + |G|^2)/2 of the resonator signal leaving towards the output port."""
    gam = reflection_coefficient(feedline, omega)
    return (1.0 + np.abs(gam) ** 2) / 2.0


def chain_gamma(chain, feedline):
    """Reflection coefficient used for a chain: evaluated once, at the bare filter frequency."""
    return complex(reflection_coefficient(feedline, chain.omega_P_bare))


def resonator_frequency(chain, qubit_state=None):
    """Readout resonator frequency for a qubit state: ``omega_R -/+ chi`` for g/e."""
    if qubit_state is None:
        return chain.omega_R
    if qubit_state == "g":
        return chain.omega_R - chain.chi
    if qubit_state == "e":
        return chain.omega_R + chain.chi
    raise InputError(f"qubit_state must be 'g', 'e' or None, got {qubit_state!r}")


def effective_readout_linewidth(kappa_P_eff, J, delta_ab):
    """Exact effective readout-resonator linewidth from the two-mode eigenvalues.

    kappa_R = (kappa - Re sqrt(-16 J^2 + (kappa - 2i delta)^2)) / 2
    with the principal branch of the complex square root.
    """
    if np.any(np.asarray(kappa_P_eff) < 0):
        raise InputError("kappa_P_eff must be non-negative")
    root = np.sqrt(-16.0 * np.asarray(J, dtype=complex) ** 2
                   + (kappa_P_eff - 2j * np.asarray(delta_ab)) ** 2)
    kappa_R = 0.5 * (kappa_P_eff - root.real)
    # rounding can leave a -1e-17 for J = 0
    kappa_R = np.maximum(kappa_R, 0.0)
    return kappa_R[()] if np.ndim(kappa_R) == 0 else kappa_R


def approx_readout_linewidth(kappa_P_eff, J, delta_ab):
    """Weak-coupling approximation 4 J^2 kappa / (kappa^2 + 4 delta^2)."""
    return 4.0 * J**2 * kappa_P_eff / (kappa_P_eff**2 + 4.0 * delta_ab**2)


def effective_filter_params(chain, feedline):
    gam = chain_gamma(chain, feedline)
    kappa_eff = chain.kappa_P_bare * (1.0 + gam.real) / 2.0
    omega_eff = chain.omega_P_bare + chain.kappa_P_bare * gam.imag / 4.0
    delta_ab = omega_eff - chain.omega_R
    return EffectiveChainParams(
        omega_P_eff=omega_eff,
        kappa_P_eff=kappa_eff,
        kappa_R_eff=float(effective_readout_linewidth(kappa_eff, chain.J, delta_ab)),
        delta_ab=delta_ab,
    )


def _denominator(chain, eff, omega_d, qubit_state):
    delta_a = eff.omega_P_eff - omega_d
    delta_b = resonator_frequency(chain, qubit_state) - omega_d
    za = chain.gamma_a + 2j * delta_a + eff.kappa_P_eff
    zb = chain.gamma_b + 2j * delta_b + chain.kappa_b
    return za, zb, 4.0 * chain.J**2 + za * zb


def s21(chain, feedline, omega_d, qubit_state=None):
    """Feedline transmission normalized by the input-coupler insertion loss, S21/(1 - G).

    ``qubit_state`` None uses the mean resonator frequency ``omega_R``.
    """
    omega_d = np.asarray(omega_d, dtype=float)
    if np.any(omega_d <= 0):
        raise InputError("drive frequency must be positive")
    eff = effective_filter_params(chain, feedline)
    gam = chain_gamma(chain, feedline)
    za, zb, den = _denominator(chain, eff, omega_d, qubit_state)
    # an uncoupled resonator drops out; avoids 0/0 at its own frequency
    response = 1.0 / za if chain.J == 0 else zb / den
    out = np.asarray(1.0 - (1.0 + gam) / (1.0 + gam.real) * eff.kappa_P_eff * response)
    return out[()] if out.ndim == 0 else out


def s23(chain, feedline, omega_d, qubit_state=None):
    """Transmission from the weakly coupled qubit drive line to the feedline output."""
    omega_d = np.asarray(omega_d, dtype=float)
    if np.any(omega_d <= 0):
        raise InputError("drive frequency must be positive")
    eff = effective_filter_params(chain, feedline)
    gam = chain_gamma(chain, feedline)
    _, _, den = _denominator(chain, eff, omega_d, qubit_state)
    pref = (1.0 + gam) / math.sqrt(2.0 * (1.0 + gam.real))
    out = np.asarray(pref * 4j * chain.J * math.sqrt(chain.kappa_P_bare) * math.sqrt(chain.kappa_b) / den)
    return out[()] if out.ndim == 0 else out


def mode_matrix(chain, feedline, omega_d, qubit_state=None):
    """Linear equations of motion d/dt [a, b] = M [a, b] + drive in the frame of ``omega_d``.

    Returns ``(M, drive_coupling, output_coupling)``; a feedline field of
    amplitude ``eps`` incident on the input capacitor drives the filter as
    ``drive_coupling * eps``, and the state-dependent part of the output-port
    field is ``output_coupling * a``.
    """
    eff = effective_filter_params(chain, feedline)
    gam = chain_gamma(chain, feedline)
    delta_a = eff.omega_P_eff - omega_d
    delta_b = resonator_frequency(chain, qubit_state) - omega_d
    M = np.array([
        [-1j * delta_a - (eff.kappa_P_eff + chain.gamma_a) / 2.0, -1j * chain.J],
        [-1j * chain.J, -1j * delta_b - (chain.kappa_b + chain.gamma_b) / 2.0],
    ])
    root_k = math.sqrt(chain.kappa_P_bare)
    return M, root_k / 2.0 * (1.0 - gam), -root_k / 2.0 * (1.0 + gam)


def steady_state_photon(chain, feedline, omega_d, drive_amplitude, qubit_state=None, with_filter=True):
    """Steady-state resonator occupation |b|^2 under a constant drive.

    ``with_filter=False`` replaces the chain by a single resonator of linewidth
    kappa_R driven directly, which is the no-Purcell-filter reference.
    """
    if drive_amplitude < 0:
        raise InputError("drive_amplitude must be non-negative")
    omega_d = np.atleast_1d(np.asarray(omega_d, dtype=float))
    out = np.empty(omega_d.shape)
    if not with_filter:
        kappa_R = effective_filter_params(chain, feedline).kappa_R_eff
        delta_b = resonator_frequency(chain, qubit_state) - omega_d
        den = 1j * delta_b + kappa_R / 2.0
        if np.any(den == 0):
            raise NumericalError("singular steady state: resonator has no loss")
        out = np.abs(math.sqrt(kappa_R) * drive_amplitude / den) ** 2
    else:
        for k, w in enumerate(omega_d):
            M, cin, _ = mode_matrix(chain, feedline, w, qubit_state)
            if abs(np.linalg.det(M)) == 0.0:
                raise NumericalError("singular steady state: all loss rates are zero")
            x = np.linalg.solve(M, -np.array([cin * drive_amplitude, 0.0]))
            out[k] = abs(x[1]) ** 2
    return out[0] if out.size == 1 else out


def purcell_t1_limit(chain, feedline, delta_q, with_filter=True, min_overlap=0.6):
    """Purcell-limited qubit lifetime from the linearized qubit + resonator (+ filter) modes.

    The qubit is a linear mode at detuning ``delta_q`` from the resonator,
    coupled with strength ``g``.  The eigenvector with the largest qubit
    weight identifies the qubit-like eigenvalue; T1 = 1/(2 |Re lambda|).
    Raises :class:`NumericalError` when no eigenvector carries at least
    ``min_overlap`` qubit weight (qubit hybridized with the resonator).
    """
    if delta_q == 0:
        raise InputError("delta_q must be non-zero")
    if chain.g == 0:
        return math.inf
    eff = effective_filter_params(chain, feedline)
    if with_filter:
        delta_ab = eff.omega_P_eff - chain.omega_R
        M = np.array([
            [-1j * delta_q, -1j * chain.g, 0.0],
            [-1j * chain.g, -(chain.kappa_b + chain.gamma_b) / 2.0, -1j * chain.J],
            [0.0, -1j * chain.J, -1j * delta_ab - (eff.kappa_P_eff + chain.gamma_a) / 2.0],
        ])
    else:
        M = np.array([
            [-1j * delta_q, -1j * chain.g],
            [-1j * chain.g, -eff.kappa_R_eff / 2.0],
        ])
    evals, evecs = np.linalg.eig(M)
    weights = np.abs(evecs[0, :]) ** 2 / np.sum(np.abs(evecs) ** 2, axis=0)
    k = int(np.argmax(weights))
    if weights[k] < min_overlap:
        raise NumericalError(
            f"cannot identify qubit-like mode: largest qubit weight {weights[k]:.3f} "
            "(qubit hybridized with resonator)")
    rate = -evals[k].real
    if rate <= 0:
        return math.inf
    return 1.0 / (2.0 * rate)


def critical_photon_number(g, omega_Q, omega_R):
    """Critical photon number (omega_Q - omega_R)^2 / (4 g^2)."""
    delta = omega_Q - omega_R
    if delta == 0:
        raise InputError("qubit and resonator are degenerate; n_crit undefined")
    if g == 0:
        return math.inf
    return delta**2 / (4.0 * g**2)
