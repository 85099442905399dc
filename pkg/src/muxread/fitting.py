"""Least-squares recovery of chain parameters from transmission spectra.

Fitted frequencies and linewidths are the effective (feedline-renormalized)
filter values, the ones a spectrum actually shows.  Internally the
parameters are rescaled to MHz-sized numbers around the initial filter
frequency so the optimizer sees O(1) quantities.
"""

from dataclasses import dataclass, field
import csv
import json
import logging
import math
import warnings

import numpy as np
from scipy.optimize import least_squares, minimize

from .circuit import FeedlineSpec, ReadoutChain, effective_filter_params, s21, s23
from .errors import InputError, NumericalError
from .units import TWO_PI

log = logging.getLogger(__name__)

SCALE = TWO_PI * 1e6
_CORE = ("omega_P", "kappa_P", "omega_R", "J")
_SI_KEYS = {"omega_P", "omega_R", "kappa_P", "J", "chi", "gamma_a", "gamma_b"}


class SpectrumWarning(UserWarning):
    pass


@dataclass
class SpectrumData:
    omega_d: np.ndarray
    magnitude: np.ndarray
    phase: np.ndarray = None
    source: str = "s21"

    def __post_init__(self):
        self.omega_d = np.asarray(self.omega_d, dtype=float)
        self.magnitude = np.asarray(self.magnitude, dtype=float)
        if self.omega_d.ndim != 1 or self.omega_d.shape != self.magnitude.shape:
            raise InputError("frequency and magnitude arrays must be 1-D and equally long")
        if self.omega_d.size < 2 or np.any(np.diff(self.omega_d) <= 0):
            raise InputError("frequency grid must be strictly increasing")
        if np.any(self.magnitude < 0) or not np.all(np.isfinite(self.magnitude)):
            raise InputError("magnitudes must be finite and non-negative")
        if self.phase is not None:
            self.phase = np.asarray(self.phase, dtype=float)
            if self.phase.shape != self.omega_d.shape:
                raise InputError("phase array must match the frequency grid")
        if self.source not in ("s21", "s23"):
            raise InputError(f"source must be 's21' or 's23', got {self.source!r}")

    @classmethod
    def from_model(cls, chain, feedline, omega_d, qubit_state=None, source="s21",
                   noise=0.0, rng=None):
        """Synthetic |S| spectrum with optional additive Gaussian noise (absolute units)."""
        fn = s21 if source == "s21" else s23
        mag = np.abs(fn(chain, feedline, omega_d, qubit_state))
        if noise:
            rng = np.random.default_rng(rng)
            mag = np.abs(mag + noise * rng.standard_normal(mag.shape))
        return cls(omega_d=omega_d, magnitude=mag, source=source)


@dataclass
class FitResult:
    params: dict
    uncertainties: dict
    residual_norm: float
    covariance: np.ndarray
    free: tuple
    converged: bool
    method: str
    message: str = ""
    nuisance: dict = field(default_factory=dict)

    def to_chain(self, template, feedline):
        """A chain carrying the fitted parameters on top of ``template``."""
        p = self.params
        return ReadoutChain.from_effective(
            p["omega_P"], p["kappa_P"], feedline, omega_R=p["omega_R"], J=p["J"],
            kappa_b=template.kappa_b, gamma_a=p.get("gamma_a", template.gamma_a),
            gamma_b=p.get("gamma_b", template.gamma_b), chi=p.get("chi", 0.0), g=template.g,
            omega_Q=template.omega_Q, T1=template.T1, P_therm=template.P_therm, name=template.name)

    def to_dict(self):
        def clean(v):
            return None if v is None or not math.isfinite(v) else float(v)
        return {
            "params_rad_per_s": {k: clean(v) for k, v in self.params.items()},
            "params_GHz_MHz": {
                k: clean(v / TWO_PI / (1e9 if k in ("omega_P", "omega_R") else 1e6))
                for k, v in self.params.items()},
            "uncertainties_rad_per_s": {k: clean(v) for k, v in self.uncertainties.items()},
            "nuisance": {k: clean(v) for k, v in self.nuisance.items()},
            "residual_norm": clean(self.residual_norm),
            "free_parameters": list(self.free),
            "converged": bool(self.converged),
            "method": self.method,
            "message": self.message,
        }


def _effective_guess(chain, feedline):
    eff = effective_filter_params(chain, feedline)
    return eff.omega_P_eff, eff.kappa_P_eff


class _Problem:
    """Shared parametrization of one or more spectra sharing a filter."""

    def __init__(self, datasets, states, initial, feedline, fit_gamma, nuisance):
        self.datasets = datasets
        self.states = states
        self.feedline = feedline
        self.template = initial
        self.nuisance = nuisance
        omega_P, kappa_P = _effective_guess(initial, feedline)
        self.ref = omega_P
        lo = min(d.omega_d[0] for d in datasets)
        hi = max(d.omega_d[-1] for d in datasets)
        self.span = max(hi - lo, SCALE)
        self.center = 0.5 * (lo + hi)
        names = ["omega_P", "kappa_P"]
        x0 = [0.0, kappa_P / SCALE]
        omega_b = [initial.omega_R] if len(datasets) == 1 else [
            initial.omega_R - initial.chi, initial.omega_R + initial.chi]
        for k, w in enumerate(omega_b):
            names.append("omega_R" if len(datasets) == 1 else f"omega_R_{states[k]}")
            x0.append((w - self.ref) / SCALE)
        names.append("J")
        x0.append(initial.J / SCALE)
        if fit_gamma:
            names += ["gamma_a", "gamma_b"]
            x0 += [initial.gamma_a / SCALE, initial.gamma_b / SCALE]
        if nuisance:
            for k in range(len(datasets)):
                names += [f"amp_{k}", f"slope_{k}"]
                mag = datasets[k].magnitude
                x0 += [float(np.quantile(mag, 0.9)) or 1.0, 0.0]
        self.names = tuple(names)
        self.x0 = np.array(x0)
        lower = np.full(len(names), -np.inf)
        upper = np.full(len(names), np.inf)
        for i, n in enumerate(names):
            if n in ("kappa_P",):
                lower[i] = 1e-6
            elif n in ("J", "gamma_a", "gamma_b") or n.startswith("amp_"):
                lower[i] = 0.0
        self.bounds = (lower, upper)

    def unpack(self, x):
        v = dict(zip(self.names, x))
        omega_P = self.ref + v["omega_P"] * SCALE
        kappa_P = v["kappa_P"] * SCALE
        J = v["J"] * SCALE
        ga = v.get("gamma_a", self.template.gamma_a / SCALE) * SCALE
        gb = v.get("gamma_b", self.template.gamma_b / SCALE) * SCALE
        if len(self.datasets) == 1:
            omega_b = [self.ref + v["omega_R"] * SCALE]
        else:
            omega_b = [self.ref + v[f"omega_R_{s}"] * SCALE for s in self.states]
        return v, omega_P, kappa_P, omega_b, J, ga, gb

    def chains(self, x):
        _, omega_P, kappa_P, omega_b, J, ga, gb = self.unpack(x)
        return [ReadoutChain.from_effective(omega_P, max(kappa_P, 1e-300), self.feedline,
                                            omega_R=w, J=J, kappa_b=self.template.kappa_b,
                                            gamma_a=ga, gamma_b=gb)
                for w in omega_b]

    def model(self, x):
        v = dict(zip(self.names, x))
        out = []
        for k, (data, chain) in enumerate(zip(self.datasets, self.chains(x))):
            fn = s21 if data.source == "s21" else s23
            m = np.abs(fn(chain, self.feedline, data.omega_d))
            if self.nuisance:
                m = m * (v[f"amp_{k}"] + v[f"slope_{k}"] * (data.omega_d - self.center) / self.span)
            out.append(m)
        return out

    def residuals(self, x):
        return np.concatenate([m - d.magnitude for m, d in zip(self.model(x), self.datasets)])


def _solve(problem, method):
    x0 = problem.x0
    if method in ("auto", "least_squares"):
        try:
            with np.errstate(all="ignore"):
                res = least_squares(problem.residuals, x0, bounds=problem.bounds, method="trf",
                                    x_scale="jac", xtol=1e-14, ftol=1e-14, gtol=1e-12,
                                    max_nfev=4000)
            if np.all(np.isfinite(res.x)) and (res.success or method == "least_squares"):
                return res.x, res.jac, "least_squares", res.message
        except (ValueError, np.linalg.LinAlgError) as exc:
            if method == "least_squares":
                raise NumericalError(f"least-squares fit failed: {exc}") from exc
            log.warning("least-squares fit failed (%s); falling back to simplex", exc)
    bounds = list(zip(np.where(np.isfinite(problem.bounds[0]), problem.bounds[0], None),
                      np.where(np.isfinite(problem.bounds[1]), problem.bounds[1], None)))
    res = minimize(lambda x: float(np.sum(problem.residuals(x) ** 2)), x0, method="Nelder-Mead",
                   bounds=bounds, options={"xatol": 1e-10, "fatol": 1e-16, "maxiter": 40000,
                                           "maxfev": 40000, "adaptive": True})
    return res.x, None, "nelder_mead", str(res.message)


def _profile_resonator(problem, n=241):
    """Shift the starting resonator frequency to the best point of a coarse scan.

    The transparency peak can be narrower than the error of a rough starting
    frequency, leaving no gradient towards it; a 1-D scan over half a filter
    linewidth either side restores a useful start.
    """
    idx = [i for i, name in enumerate(problem.names) if name.startswith("omega_R")]
    half = 0.5 * problem.x0[problem.names.index("kappa_P")]
    best, best_cost = 0.0, np.inf
    with np.errstate(all="ignore"):
        for shift in np.linspace(-half, half, n):
            x = problem.x0.copy()
            x[idx] += shift
            cost = float(np.sum(problem.residuals(x) ** 2))
            if cost < best_cost:
                best, best_cost = shift, cost
    problem.x0[idx] += best


def _jacobian(problem, x):
    eps = 1e-7 * np.maximum(1.0, np.abs(x))
    r0 = problem.residuals(x)
    jac = np.empty((r0.size, x.size))
    for i in range(x.size):
        xp = x.copy()
        xp[i] += eps[i]
        jac[:, i] = (problem.residuals(xp) - r0) / eps[i]
    return jac


def _fit(datasets, states, initial, feedline, fit_gamma, nuisance, method, gtol):
    if method not in ("auto", "least_squares", "nelder_mead"):
        raise InputError(f"unknown fit method {method!r}")
    feedline = feedline or FeedlineSpec()
    problem = _Problem(datasets, states, initial, feedline, fit_gamma, nuisance)
    _profile_resonator(problem)
    x, jac, used, message = _solve(problem, method)
    if jac is None:
        jac = _jacobian(problem, x)
    r = problem.residuals(x)
    if not np.all(np.isfinite(r)):
        raise NumericalError("fit produced non-finite residuals")
    dof = max(r.size - x.size, 1)
    s2 = float(r @ r) / dof
    try:
        cov = np.linalg.pinv(jac.T @ jac) * s2
    except np.linalg.LinAlgError:
        cov = np.full((x.size, x.size), np.nan)
    grad = jac.T @ r
    # gradient relative to the residual and jacobian scale
    scale = max(np.linalg.norm(r) * np.linalg.norm(jac), 1e-300)
    # an exact (noiseless) fit leaves only roundoff, where the angle test is meaningless
    level = max(float(np.max(d.magnitude)) for d in datasets)
    exact = np.linalg.norm(r) <= 1e-9 * level * math.sqrt(r.size)
    converged = bool(exact or np.linalg.norm(grad) / scale <= gtol)
    return problem, x, cov, float(np.linalg.norm(r)), converged, used, message


def _core_params(problem, x, cov):
    v, omega_P, kappa_P, omega_b, J, ga, gb = problem.unpack(x)
    sig = np.sqrt(np.clip(np.diag(cov), 0, None)) * SCALE
    unc = {}
    for i, n in enumerate(problem.names):
        if n.startswith("amp_") or n.startswith("slope_"):
            continue
        unc[n] = float(sig[i])
    params = {"omega_P": omega_P, "kappa_P": kappa_P, "J": J, "gamma_a": ga, "gamma_b": gb}
    nuisance = {n: float(v[n]) for n in problem.names if n.startswith(("amp_", "slope_"))}
    return params, unc, omega_b, nuisance


def fit_s21(data, initial, feedline=None, fit_gamma=False, nuisance=True, method="auto", gtol=1e-6):
    """Fit the chain transmission model to a magnitude spectrum.

    ``initial`` is a ReadoutChain guess; its ``kappa_b`` (and the loss rates
    when ``fit_gamma`` is False) are held fixed.  The resonator frequency is
    fitted as seen in the data, so ``chi`` of the result is zero.
    """
    _check_span(data, initial, feedline or FeedlineSpec())
    problem, x, cov, rnorm, converged, used, message = _fit(
        [data], [None], initial, feedline, fit_gamma, nuisance, method, gtol)
    params, unc, omega_b, nuis = _core_params(problem, x, cov)
    params["omega_R"] = omega_b[0]
    params["chi"] = 0.0
    return FitResult(params=params, uncertainties=unc, residual_norm=rnorm, covariance=cov,
                     free=problem.names, converged=converged, method=used, message=message,
                     nuisance=nuis)


def fit_dispersive_shift(data_g, data_e, initial, feedline=None, fit_gamma=False, nuisance=True,
                         method="auto", gtol=1e-6):
    """Joint fit of a g/e spectrum pair sharing the filter; chi = (omega_R,e - omega_R,g)/2."""
    feedline = feedline or FeedlineSpec()
    _check_span(data_g, initial, feedline)
    _check_span(data_e, initial, feedline)
    problem, x, cov, rnorm, converged, used, message = _fit(
        [data_g, data_e], ["g", "e"], initial, feedline, fit_gamma, nuisance, method, gtol)
    params, unc, (w_g, w_e), nuis = _core_params(problem, x, cov)
    params["omega_R"] = 0.5 * (w_g + w_e)
    params["chi"] = 0.5 * (w_e - w_g)
    ig, ie = problem.names.index("omega_R_g"), problem.names.index("omega_R_e")
    var_diff = cov[ig, ig] + cov[ie, ie] - 2 * cov[ig, ie]
    var_sum = cov[ig, ig] + cov[ie, ie] + 2 * cov[ig, ie]
    unc["chi"] = 0.5 * math.sqrt(max(var_diff, 0.0)) * SCALE
    unc["omega_R"] = 0.5 * math.sqrt(max(var_sum, 0.0)) * SCALE
    params["omega_R_g"], params["omega_R_e"] = w_g, w_e
    return FitResult(params=params, uncertainties=unc, residual_norm=rnorm, covariance=cov,
                     free=problem.names, converged=converged, method=used, message=message,
                     nuisance=nuis)


def _check_span(data, initial, feedline):
    _, kappa = _effective_guess(initial, feedline)
    span = data.omega_d[-1] - data.omega_d[0]
    if span < 5.0 * kappa:
        raise InputError(f"spectrum spans {span / kappa:.2f} filter linewidths; need at least 5")


def _runs(mask):
    """Start/stop index pairs of contiguous True runs."""
    edges = np.diff(np.concatenate(([0], mask.astype(np.int8), [0])))
    return list(zip(np.nonzero(edges == 1)[0], np.nonzero(edges == -1)[0]))


def initial_guess_from_spectrum(data, near=None, feedline=None, min_depth=0.2):
    """Heuristic chain guess from one |S21| spectrum.

    The baseline is the 90th-percentile magnitude.  Dips are contiguous
    regions more than ``min_depth`` below it; the one nearest ``near``
    (default: the window center) is used.  The resonator frequency is the
    central transmission peak.  In the lossless model the normalized
    transmission equals 1/2 where 2 (w_P - w) - 2 J^2 / (w_R - w) = +-kappa/sqrt(3),
    which is linear in (w_P, kappa, J^2); the four half-transmission
    crossings around the peak determine them by least squares.
    """
    feedline = feedline or FeedlineSpec()
    w, mag = data.omega_d, data.magnitude
    base = float(np.quantile(mag, 0.9))
    if not base > 0:
        raise InputError("spectrum has no transmission baseline")
    y = 1.0 - mag / base
    # bridge the central peak: close gaps narrower than a few grid points relative to the dip
    runs = _runs(y > min_depth)
    if not runs:
        raise InputError("no dip detected in spectrum")
    clusters = [list(runs[0])]
    for a, b in runs[1:]:
        prev = clusters[-1]
        gap = w[a] - w[prev[1] - 1]
        width = w[prev[1] - 1] - w[prev[0]]
        if gap <= max(width, 3 * (w[1] - w[0])):
            prev[1] = b
        else:
            clusters.append([a, b])
    near = 0.5 * (w[0] + w[-1]) if near is None else near
    centers = []
    for a, b in clusters:
        seg = np.clip(y[a:b], 0, None)
        centers.append(float(np.sum(w[a:b] * seg) / np.sum(seg)) if seg.sum() > 0 else w[(a + b) // 2])
    pick = int(np.argmin([abs(c - near) for c in centers]))
    if len(clusters) > 1:
        warnings.warn(f"{len(clusters)} dips in window; guessing the one nearest "
                      f"{near / TWO_PI / 1e9:.4f} GHz", SpectrumWarning, stacklevel=2)
    a, b = clusters[pick]
    omega_P, kappa_P, omega_R, J = _dip_parameters(w[a:b], mag[a:b] / base, centers[pick])
    return ReadoutChain.from_effective(omega_P, kappa_P, feedline, omega_R=omega_R, J=J,
                                       name="guess")


def _crossings(w, y, level):
    out = []
    for i in np.nonzero(np.diff(np.sign(y - level)) != 0)[0]:
        y0, y1 = y[i] - level, y[i + 1] - level
        out.append(w[i] - y0 * (w[i + 1] - w[i]) / (y1 - y0))
    return out


def _dip_parameters(w, y, center):
    """(omega_P, kappa_P, omega_R, J) from one normalized dip."""
    cross = _crossings(w, y, 0.5)
    interior = [i for i in range(1, y.size - 1) if y[i] >= y[i - 1] and y[i] >= y[i + 1] and y[i] > 0.5]
    if len(cross) >= 4 and interior:
        k = max(interior, key=lambda i: y[i])
        omega_R = w[k]
        below = [c for c in cross if c < omega_R]
        above = [c for c in cross if c > omega_R]
        if len(below) >= 2 and len(above) >= 2:
            pts = [(below[0], 1.0), (below[-1], -1.0), (above[0], 1.0), (above[-1], -1.0)]
            A = np.array([[2.0, -2.0 / (omega_R - x), -s / math.sqrt(3.0)] for x, s in pts])
            rhs = np.array([2.0 * x for x, _ in pts])
            omega_P, J2, kappa = np.linalg.lstsq(A, rhs, rcond=None)[0]
            if kappa > 0 and J2 > 0:
                return float(omega_P), float(kappa), float(omega_R), math.sqrt(J2)
    if len(cross) >= 2:
        kappa = math.sqrt(3.0) * (cross[-1] - cross[0])
        omega_P = 0.5 * (cross[-1] + cross[0])
    else:
        kappa = math.sqrt(3.0) * max(w[-1] - w[0], w[1] - w[0])
        omega_P = center
    omega_R = w[max(interior, key=lambda i: y[i])] if interior else omega_P
    return omega_P, kappa, omega_R, 0.25 * kappa


def read_spectrum_csv(path, source="s21"):
    """Read a spectrum CSV with columns frequency_hz, magnitude[, phase_rad]; '#' lines are skipped."""
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        lines = (ln for ln in fh if not ln.lstrip().startswith("#") and ln.strip())
        reader = csv.DictReader(lines)
        if reader.fieldnames is None or not {"frequency_hz", "magnitude"} <= set(reader.fieldnames):
            raise InputError(f"{path}: need columns frequency_hz, magnitude")
        has_phase = "phase_rad" in reader.fieldnames
        for i, row in enumerate(reader, start=2):
            try:
                rows.append((float(row["frequency_hz"]), float(row["magnitude"]),
                             float(row["phase_rad"]) if has_phase else 0.0))
            except (TypeError, ValueError):
                raise InputError(f"{path}: data row {i}: not a number") from None
    if not rows:
        raise InputError(f"{path}: no data rows")
    arr = np.array(rows)
    return SpectrumData(omega_d=TWO_PI * arr[:, 0], magnitude=arr[:, 1],
                        phase=arr[:, 2] if has_phase else None, source=source)


def write_fit_json(result, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(result.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
