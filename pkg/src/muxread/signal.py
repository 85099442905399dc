"""Matched filtering, single-shot generation and single-qubit readout statistics.

Integrated signals are expressed in units of the single-shot noise width, so
the ground-state mean sits at 0 and the excited-state mean at the SNR.  The
quantum-limited SNR follows from the integrated measurement-induced
dephasing, SNR^2 = 4 eta Gamma tau.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import math

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid
from scipy.optimize import minimize
from scipy.special import erfc, ndtr

from .dynamics import _threads, integrated_dephasing, simulate_response
from .errors import InputError, NumericalError


@dataclass
class MatchedFilter:
    """Integration weights conj(out_e - out_g), normalized to unit norm.

    ``cumulative`` is the fraction of the filtered state information
    accumulated up to each grid time; it maps a qubit transition time to the
    resulting intermediate signal.
    """

    t: np.ndarray
    weights: np.ndarray
    cumulative: np.ndarray
    channel_omega: float = 0.0


def _output(trace):
    return trace.out if trace.out is not None else trace.a


def build_matched_filter(trace_g, trace_e, channel_omega=0.0):
    if trace_g.t.shape != trace_e.t.shape:
        raise InputError("traces must share a time grid")
    diff = _output(trace_e) - _output(trace_g)
    power = np.abs(diff) ** 2
    norm2 = trapezoid(power, trace_g.t)
    if not norm2 > 0:
        raise InputError("no state information: ground and excited responses are identical")
    cum = cumulative_trapezoid(power, trace_g.t, initial=0.0) / norm2
    return MatchedFilter(t=trace_g.t, weights=np.conj(diff) / math.sqrt(norm2),
                         cumulative=cum, channel_omega=channel_omega)


def filter_snr(weights, trace_g, trace_e):
    """Separation/noise for arbitrary integration weights under white noise (relative units)."""
    diff = _output(trace_e) - _output(trace_g)
    signal = abs(trapezoid(weights * diff, trace_g.t))
    noise = math.sqrt(trapezoid(np.abs(weights) ** 2, trace_g.t))
    return signal / noise


def quantum_limited_snr(trace_g, trace_e):
    """SNR of an ideal phase-preserving measurement of the output port alone, sqrt(2 int |d out|^2)."""
    diff = _output(trace_e) - _output(trace_g)
    return math.sqrt(2.0 * trapezoid(np.abs(diff) ** 2, trace_g.t))


@dataclass
class HistogramFit:
    """Double-Gaussian fit with shared width; weights are indexed by preparation."""

    mu_g: float
    mu_e: float
    sigma: float
    weight_g: tuple
    weight_e: tuple
    degenerate: bool = False
    n_iter: int = 0
    weight_t: tuple = ()


def snr_from_histogram(fit):
    return (fit.mu_e - fit.mu_g) / fit.sigma


def overlap_error(snr):
    """Probability mass of one Gaussian beyond the midpoint, erfc(SNR / 2 sqrt 2) / 2."""
    return 0.5 * erfc(snr / (2.0 * math.sqrt(2.0)))


def measurement_efficiency(snr, gamma_ii, tau_m, tol=0.05):
    """eta = SNR^2 / (4 Gamma tau); values above 1 + ``tol`` are unphysical."""
    if not (gamma_ii > 0 and tau_m > 0):
        raise InputError("dephasing rate and pulse length must be positive")
    eta = snr**2 / (4.0 * gamma_ii * tau_m)
    if eta > 1.0 + tol:
        raise NumericalError(f"efficiency {eta:.3f} exceeds the quantum limit")
    return eta


def fit_double_gaussian(samples_0, samples_pi=None, max_iter=500, tol=1e-10):
    """Maximum-likelihood two-component Gaussian mixture with shared width (EM).

    Both preparations share the two means and the width; each preparation
    has its own mixture weight.  A degenerate fit (one component) reports the
    merged mean in both slots with ``degenerate=True``.
    """
    sets = [np.asarray(samples_0, dtype=float)]
    if samples_pi is not None:
        sets.append(np.asarray(samples_pi, dtype=float))
    if any(s.size < 2 for s in sets):
        raise InputError("need at least two samples per preparation")
    allx = np.concatenate(sets)
    if np.ptp(allx) == 0:
        mean = float(allx[0])
        return HistogramFit(mean, mean, 0.0, tuple(1.0 for _ in sets), tuple(0.0 for _ in sets),
                            degenerate=True)
    # seed the components from the preparation means (or quantiles for one set)
    if len(sets) == 2:
        mu_g, mu_e = float(np.median(sets[0])), float(np.median(sets[1]))
    else:
        mu_g, mu_e = (float(q) for q in np.quantile(allx, [0.1, 0.9]))
    sigma = float(np.std(allx)) / 2 or 1.0
    if mu_g == mu_e:
        mu_e = mu_g + sigma
    w_e = [0.5] * len(sets)
    prev = -np.inf
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        resp = []
        ll = 0.0
        for x, we in zip(sets, w_e):
            lg = np.log(max(1 - we, 1e-300)) - 0.5 * ((x - mu_g) / sigma) ** 2
            le = np.log(max(we, 1e-300)) - 0.5 * ((x - mu_e) / sigma) ** 2
            top = np.maximum(lg, le)
            z = top + np.log(np.exp(lg - top) + np.exp(le - top))
            ll += float(np.sum(z)) - x.size * math.log(sigma)
            resp.append(np.exp(le - z))
        r_all = np.concatenate(resp)
        n_e = r_all.sum()
        n_g = r_all.size - n_e
        w_e = [float(r.mean()) for r in resp]
        if n_e < 1e-9 or n_g < 1e-9:
            mean = float(allx.mean())
            return HistogramFit(mean, mean, float(allx.std()), tuple(1.0 - (n_e > n_g) for _ in sets),
                                tuple(float(n_e > n_g) for _ in sets), degenerate=True, n_iter=n_iter)
        mu_g = float(np.sum((1 - r_all) * allx) / n_g)
        mu_e = float(np.sum(r_all * allx) / n_e)
        var = (np.sum((1 - r_all) * (allx - mu_g) ** 2) + np.sum(r_all * (allx - mu_e) ** 2)) / allx.size
        sigma = math.sqrt(var)
        if abs(ll - prev) <= tol * abs(ll):
            break
        prev = ll
    else:
        raise NumericalError("double-Gaussian fit did not converge")
    if abs(mu_e - mu_g) < 1e-3 * sigma:
        mean = float(allx.mean())
        heavier = float(sum(w_e) / len(w_e) > 0.5)
        return HistogramFit(mean, mean, sigma, tuple(1.0 - heavier for _ in sets),
                            tuple(heavier for _ in sets), degenerate=True, n_iter=n_iter)
    return HistogramFit(mu_g, mu_e, sigma, tuple(1.0 - w for w in w_e), tuple(w_e), n_iter=n_iter)


def _transition_density(x, mu_g, mu_e, sigma):
    """Box between the two means convolved with the noise Gaussian (unit mass)."""
    lo, hi = min(mu_g, mu_e), max(mu_g, mu_e)
    return (ndtr((x - lo) / sigma) - ndtr((x - hi) / sigma)) / (hi - lo)


def fit_transition_mixture(samples_0, samples_pi, bins=400):
    """Shared-width double Gaussian plus a transition component, by binned maximum likelihood.

    Shots whose qubit changes state during the integration window land
    between the two means.  Their distribution is modeled as a box between
    the means convolved with the noise Gaussian, so they no longer inflate
    the fitted width.  Starts from :func:`fit_double_gaussian`.
    """
    start = fit_double_gaussian(samples_0, samples_pi)
    if start.degenerate:
        return start
    sets = [np.asarray(samples_0, dtype=float), np.asarray(samples_pi, dtype=float)]
    allx = np.concatenate(sets)
    edges = np.linspace(allx.min(), allx.max(), bins + 1)
    centers = 0.5 * (edges[1:] + edges[:-1])
    width = edges[1] - edges[0]
    counts = [np.histogram(x, edges)[0].astype(float) for x in sets]

    def unpack(p):
        mu_g, mu_e, log_sigma = p[:3]
        w = []
        for k in range(2):
            logits = np.array([0.0, p[3 + 2 * k], p[4 + 2 * k]])
            e = np.exp(logits - logits.max())
            w.append(e / e.sum())
        return mu_g, mu_e, math.exp(log_sigma), w

    def nll(p):
        mu_g, mu_e, sigma, w = unpack(p)
        if abs(mu_e - mu_g) < 1e-6 * sigma:
            return 1e300
        z_g = np.exp(-0.5 * ((centers - mu_g) / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))
        z_e = np.exp(-0.5 * ((centers - mu_e) / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))
        z_t = _transition_density(centers, mu_g, mu_e, sigma)
        total = 0.0
        for c, (wg, we, wt) in zip(counts, w):
            dens = (wg * z_g + we * z_e + wt * z_t) * width
            total -= float(np.sum(c * np.log(np.maximum(dens, 1e-300))))
        return total

    def logit(wg, we):
        wg, we = max(wg, 1e-6), max(we, 1e-6)
        return [math.log(we / wg), math.log(1e-3)]

    p0 = [start.mu_g, start.mu_e, math.log(start.sigma)]
    p0 += logit(start.weight_g[0], start.weight_e[0]) + logit(start.weight_g[1], start.weight_e[1])
    res = minimize(nll, np.array(p0), method="Nelder-Mead",
                   options={"xatol": 1e-8, "fatol": 1e-9, "maxiter": 20000, "maxfev": 20000,
                            "adaptive": True})
    mu_g, mu_e, sigma, w = unpack(res.x)
    return HistogramFit(mu_g, mu_e, sigma, tuple(float(x[0]) for x in w), tuple(float(x[1]) for x in w),
                        n_iter=int(res.nit), weight_t=tuple(float(x[2]) for x in w))


def optimize_threshold(samples_0, samples_pi):
    """Threshold maximizing [P(g|0) + P(e|pi)]/2, scanned over sample midpoints.

    Shots above the threshold are assigned ``e`` when the pi-prepared mean
    exceeds the 0-prepared mean (below it otherwise).  Returns
    ``(threshold, P_cor)``.
    """
    s0 = np.asarray(samples_0, dtype=float)
    s1 = np.asarray(samples_pi, dtype=float)
    if s0.size == 0 or s1.size == 0:
        raise InputError("both preparations need samples")
    sign = 1.0 if s1.mean() >= s0.mean() else -1.0
    x = np.concatenate([s0, s1]) * sign
    is_pi = np.concatenate([np.zeros(s0.size), np.ones(s1.size)])
    order = np.argsort(x, kind="stable")
    x, is_pi = x[order], is_pi[order]
    # threshold just above sorted element k: first k+1 samples assigned g
    below_0 = np.cumsum(1 - is_pi)
    below_1 = np.cumsum(is_pi)
    p_cor = 0.5 * (below_0 / s0.size + (s1.size - below_1) / s1.size)
    # only cut between distinct values
    valid = np.append(x[1:] > x[:-1], True)
    p_cor = np.where(valid, p_cor, -1.0)
    k = int(np.argmax(p_cor))
    if p_cor[k] < 0.5:
        # every shot assigned e scores exactly 1/2
        return float(sign * (x[0] - 1.0)), 0.5
    thr = 0.5 * (x[k] + x[k + 1]) if k + 1 < x.size else x[k] + 1.0
    return float(sign * thr), float(p_cor[k])


def assignment_errors(samples_0, samples_pi, threshold, e_above=True):
    """Return ``(P(e|0), P(g|pi))`` for a threshold."""
    s0 = np.asarray(samples_0)
    s1 = np.asarray(samples_pi)
    if e_above:
        return float(np.mean(s0 > threshold)), float(np.mean(s1 <= threshold))
    return float(np.mean(s0 < threshold)), float(np.mean(s1 >= threshold))


def error_budget(fit, p_e_given_0, p_g_given_pi):
    """Split 1 - P_cor into overlap, mixing and decay contributions.

    Overlap is the Gaussian tail of the fitted histograms; the remainder of
    P(e|0) is attributed to mixing and the remainder of P(g|pi) to decay.
    Contributions are expressed in units of the average infidelity, so they
    add up to 1 - P_cor.
    """
    overlap = float(overlap_error(snr_from_histogram(fit))) if not fit.degenerate else 0.5
    return {
        "overlap": overlap,
        "mixing": (p_e_given_0 - overlap) / 2.0,
        "decay": (p_g_given_pi - overlap) / 2.0,
        "infidelity": (p_e_given_0 + p_g_given_pi) / 2.0,
    }


@dataclass
class ChannelModel:
    """Everything the shot generator needs to know about one readout channel.

    ``snr_ql`` is the quantum-limited SNR sqrt(4 Gamma tau); the generated
    separation is sqrt(eta) times that.  ``mixing_rate`` is the upward
    transition rate during the integration window; ``prep_delay`` is the time
    from the state-preparation pulse to the start of the readout window,
    during which an excited qubit can already decay.
    """

    name: str
    t: np.ndarray
    cumulative: np.ndarray
    snr_ql: float
    eta: float = 1.0
    T1: float = math.inf
    mixing_rate: float = 0.0
    P_therm: float = 0.0
    prep_delay: float = 0.0

    def __post_init__(self):
        if not 0 < self.eta <= 1:
            raise InputError(f"{self.name}: eta must be in (0, 1], got {self.eta}")
        if self.T1 < 0 or self.mixing_rate < 0 or self.prep_delay < 0:
            raise InputError(f"{self.name}: rates and times must be non-negative")
        if not 0 <= self.P_therm <= 1:
            raise InputError(f"{self.name}: P_therm must be in [0, 1]")

    @property
    def snr(self):
        return math.sqrt(self.eta) * self.snr_ql

    @property
    def window(self):
        return float(self.t[-1])

    def informed_fraction(self, t_switch):
        """Fraction of the excited-state signal collected before a transition at ``t_switch``."""
        return np.interp(t_switch, self.t, self.cumulative, left=0.0, right=1.0)

    def time_at_fraction(self, fraction):
        """Earliest window time by which ``fraction`` of the signal has been collected."""
        return float(np.interp(fraction, self.cumulative, self.t))


def channel_model(chain, feedline, pulse, eta=1.0, mixing_rate=0.0, prep_delay=0.0, dt=None, t_end=None):
    """Simulate the g/e responses of a chain and package its matched-filter channel."""
    tg = simulate_response(chain, feedline, pulse, "g", dt, t_end)
    te = simulate_response(chain, feedline, pulse, "e", tg.dt, tg.t[-1])
    filt = build_matched_filter(tg, te, pulse.carrier_omega)
    dephasing = integrated_dephasing(tg, te, chain.chi)
    return ChannelModel(name=chain.name, t=filt.t, cumulative=filt.cumulative,
                        snr_ql=math.sqrt(4.0 * dephasing), eta=eta, T1=chain.T1,
                        mixing_rate=mixing_rate, P_therm=chain.P_therm, prep_delay=prep_delay)


@dataclass
class ShotGeneratorConfig:
    n_rep: int
    rng_seed: int = 0
    herald: bool = True
    block_size: int = 1 << 16

    def __post_init__(self):
        if self.n_rep < 0:
            raise InputError("n_rep must be non-negative")
        if self.block_size <= 0:
            raise InputError("block_size must be positive")


@dataclass
class ShotRecords:
    """Columnar shot records: one row per repetition, one column per channel.

    ``prepared`` holds 0 for the bare preparation and 1 for a pi pulse.
    ``decay_time`` / ``mix_time`` are transition times relative to the start
    of the readout window (nan when none happened); they exist for oracle
    tests only.
    """

    s: np.ndarray
    prepared: np.ndarray
    herald_pass: np.ndarray
    prep_index: np.ndarray
    names: tuple
    decay_time: np.ndarray = field(default=None, repr=False)
    mix_time: np.ndarray = field(default=None, repr=False)

    def __len__(self):
        return self.s.shape[0]

    def heralded(self):
        keep = self.herald_pass
        return ShotRecords(self.s[keep], self.prepared[keep], self.herald_pass[keep],
                           self.prep_index[keep], self.names,
                           None if self.decay_time is None else self.decay_time[keep],
                           None if self.mix_time is None else self.mix_time[keep])


def _validate_preparations(preparations, n_channels):
    preps = np.asarray(preparations)
    if preps.ndim == 1:
        preps = preps[:, None]
    if preps.ndim != 2 or preps.shape[1] != n_channels:
        raise InputError(f"each preparation needs {n_channels} labels")
    if not np.all(np.isin(preps, (0, 1))):
        raise InputError("preparation labels must be 0 (no pulse) or 1 (pi pulse)")
    return preps.astype(np.int8)


def _simulate_block(channels, prep, m, rng, herald):
    n_ch = len(channels)
    thermal = rng.random((m, n_ch)) < np.array([c.P_therm for c in channels])
    decay = rng.exponential(1.0, (m, n_ch))
    mix = rng.exponential(1.0, (m, n_ch))
    noise = rng.standard_normal((m, n_ch))
    herald_pass = ~thermal.any(axis=1) if herald else np.ones(m, dtype=bool)
    excited = np.broadcast_to(prep.astype(bool), (m, n_ch)) ^ thermal
    s = np.empty((m, n_ch))
    t_decay = np.full((m, n_ch), np.nan)
    t_mix = np.full((m, n_ch), np.nan)
    for k, ch in enumerate(channels):
        ex = excited[:, k]
        # decay clock starts at the preparation pulse
        td = decay[:, k] * ch.T1 - ch.prep_delay if math.isfinite(ch.T1) else np.full(m, np.inf)
        frac = np.where(ex, ch.informed_fraction(td), 0.0)
        tm = mix[:, k] / ch.mixing_rate if ch.mixing_rate > 0 else np.full(m, np.inf)
        mixes = ~ex & (tm < ch.window)
        frac = np.where(mixes, 1.0 - ch.informed_fraction(tm), frac)
        s[:, k] = ch.snr * frac + noise[:, k]
        t_decay[:, k] = np.where(ex & (td < ch.window), td, np.nan)
        t_mix[:, k] = np.where(mixes, tm, np.nan)
    return s, herald_pass, t_decay, t_mix


def generate_shots(config, channels, preparations):
    """Generate ``config.n_rep`` single shots for every preparation.

    Per shot and channel: thermal excitation with ``P_therm`` (shot discarded
    by the herald when enabled), state preparation, exponential decay of the
    excited state with T1 starting at the preparation pulse, upward mixing of
    the ground state during the window, and unit-variance Gaussian noise.
    Randomness is drawn per (preparation, block) from substreams of
    ``config.rng_seed``, so the output is independent of thread count.
    """
    preps = _validate_preparations(preparations, len(channels))
    n_ch = len(channels)
    jobs = []
    for p, prep in enumerate(preps):
        for b, start in enumerate(range(0, config.n_rep, config.block_size)):
            jobs.append((p, b, min(config.block_size, config.n_rep - start)))

    def run(job):
        p, b, m = job
        rng = np.random.default_rng(np.random.SeedSequence(config.rng_seed, spawn_key=(p, b)))
        return _simulate_block(channels, preps[p], m, rng, config.herald)

    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        parts = list(pool.map(run, jobs))
    if parts:
        s, hp, td, tm = (np.concatenate(x) for x in zip(*parts))
        prep_index = np.concatenate([np.full(m, p, dtype=np.int32) for p, _, m in jobs])
    else:
        s = td = tm = np.empty((0, n_ch))
        hp = np.empty(0, dtype=bool)
        prep_index = np.empty(0, dtype=np.int32)
    return ShotRecords(s=s, prepared=preps[prep_index] if prep_index.size else np.empty((0, n_ch), np.int8),
                       herald_pass=hp, prep_index=prep_index,
                       names=tuple(c.name for c in channels), decay_time=td, mix_time=tm)


def decay_error_estimate(channel, threshold):
    """Analytic decay error: probability of decaying before the signal crosses the threshold.

    The effective exposure is the preparation delay plus the window time at
    which the collected fraction reaches the threshold's fractional position
    between the two means.
    """
    fraction = min(max(threshold / channel.snr, 0.0), 1.0)
    tau_eff = channel.prep_delay + channel.time_at_fraction(fraction)
    return -math.expm1(-tau_eff / channel.T1), tau_eff
