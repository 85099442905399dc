"""End-to-end readout report: chain tables, single-qubit and multiplexed statistics."""

import math
import os

import numpy as np

from . import output
from .analysis import (all_preparations, assignment_matrix, bit_label, correlation_matrix,
                       cross_fidelity, prep_label)
from .circuit import (critical_photon_number, effective_filter_params, approx_readout_linewidth,
                      purcell_t1_limit)
from .config import channel_models, derive_seed, dephasing_chain, readout_pulse
from .dynamics import crosstalk_dephasing_matrix, photon_number, simulate_response
from .errors import NumericalError
from .signal import (ShotGeneratorConfig, assignment_errors, decay_error_estimate, error_budget,
                     fit_transition_mixture, generate_shots, optimize_threshold, overlap_error,
                     snr_from_histogram)
from .units import to_ghz, to_mhz


def chain_table(config):
    """Per-chain circuit quantities (frequencies in GHz, rates in MHz, T1 in us)."""
    rows = []
    fl = config.feedline
    for entry in config.chains:
        c = entry.chain
        eff = effective_filter_params(c, fl)
        row = {
            "name": entry.name,
            "f_R_GHz": to_ghz(c.omega_R),
            "f_P_GHz": to_ghz(eff.omega_P_eff),
            "kappa_P_MHz": to_mhz(eff.kappa_P_eff),
            "J_MHz": to_mhz(c.J),
            "chi_MHz": to_mhz(c.chi),
            "kappa_R_MHz": to_mhz(eff.kappa_R_eff),
            "kappa_R_weak_coupling_MHz": to_mhz(approx_readout_linewidth(eff.kappa_P_eff, c.J, eff.delta_ab)),
            "f_P_bare_GHz": to_ghz(c.omega_P_bare),
            "kappa_P_bare_MHz": to_mhz(c.kappa_P_bare),
        }
        if math.isfinite(c.omega_Q) and c.g > 0:
            row["n_crit"] = critical_photon_number(c.g, c.omega_Q, c.omega_R)
            dq = c.omega_Q - c.omega_R
            for key, with_filter in (("T1_purcell_filter_us", True), ("T1_purcell_no_filter_us", False)):
                try:
                    row[key] = purcell_t1_limit(c, fl, dq, with_filter=with_filter) * 1e6
                except NumericalError:
                    row[key] = None
        rows.append(row)
    return rows


def _single_qubit(config, channel, n_rep, seed):
    shots = generate_shots(ShotGeneratorConfig(n_rep, seed, config.herald), [channel], [[0], [1]])
    h = shots.heralded()
    s0 = h.s[h.prepared[:, 0] == 0, 0]
    s1 = h.s[h.prepared[:, 0] == 1, 0]
    thr, p_cor = optimize_threshold(s0, s1)
    p_e0, p_gpi = assignment_errors(s0, s1, thr)
    fit = fit_transition_mixture(s0, s1)
    snr = snr_from_histogram(fit)
    d = channel.snr_ql**2 / 4.0
    decay_est, tau_eff = decay_error_estimate(channel, thr)
    return {
        "threshold": thr,
        "P_cor": p_cor,
        "P_e_given_0": p_e0,
        "P_g_given_pi": p_gpi,
        "snr_fit": snr,
        "snr_model": channel.snr,
        "overlap_error": overlap_error(snr),
        "eta_estimate": snr**2 / (4.0 * d),
        "eta_config": channel.eta,
        "integrated_dephasing": d,
        "budget": error_budget(fit, p_e0, p_gpi),
        "decay_estimate": decay_est,
        "tau_eff_ns": tau_eff * 1e9,
        "herald_pass_fraction": float(np.mean(shots.herald_pass)) if len(shots) else float("nan"),
    }


def multiplexed_readout(config, n_rep, seed, channels=None):
    """Shots for all 2^N preparations with per-qubit thresholds from the marginals."""
    channels = channels if channels is not None else channel_models(config)
    preps = all_preparations(len(channels))
    shots = generate_shots(ShotGeneratorConfig(n_rep, seed, config.herald), channels, preps)
    h = shots.heralded()
    thresholds = []
    for k in range(len(channels)):
        thr, _ = optimize_threshold(h.s[h.prepared[:, k] == 0, k], h.s[h.prepared[:, k] == 1, k])
        thresholds.append(thr)
    return shots, np.array(thresholds)


def dephasing_matrices(config, tau_m=None):
    names = config.names
    chains = [dephasing_chain(config, n) for n in names]
    out = {}
    for shape in ("square", "gaussian_filtered_square"):
        pulses = [readout_pulse(config, n, shape, for_dephasing=True) for n in names]
        out[shape] = crosstalk_dephasing_matrix(chains, config.feedline, pulses,
                                                tau_m if tau_m is not None else config.tau_m)
    return out


def readout_report(config, n_rep=None, seed=None, single_n_rep=None):
    """All analyses for a device configuration, as a JSON-ready tree plus matrices."""
    n_rep = config.n_rep if n_rep is None else n_rep
    seed = config.seed if seed is None else seed
    single_n_rep = n_rep if single_n_rep is None else single_n_rep
    channels = channel_models(config)
    names = config.names

    single = {}
    for ch in channels:
        single[ch.name] = _single_qubit(config, ch, single_n_rep, derive_seed(seed, "single", ch.name))

    occupation = {}
    for entry in config.chains:
        pulse = readout_pulse(config, entry.name)
        tr = simulate_response(entry.chain, config.feedline, pulse, "g")
        n, span = photon_number(tr)
        occupation[entry.name] = {"peak_photons": float(n.max()), "occupation_time_ns": span * 1e9}

    shots, thr = multiplexed_readout(config, n_rep, derive_seed(seed, "assignment"), channels)
    A = assignment_matrix(shots, thr, min_shots=min(1000, max(1, n_rep // 2)))
    F = cross_fidelity(A)
    C = correlation_matrix(shots, thr)
    pcor_mux = A.single_qubit_pcor()
    deph = dephasing_matrices(config)

    n = len(names)
    report = {
        "config_hash": config.config_hash,
        "seed": seed,
        "n_rep_per_preparation": n_rep,
        "qubits": names,
        "chains": chain_table(config),
        "single_qubit": single,
        "occupation": occupation,
        "multiplexed": {
            "thresholds": thr,
            "P_cor": dict(zip(names, pcor_mux)),
            "P_all_excited_given_all_pi": float(A.probs[-1, -1]),
            "P_all_ground_given_all_0": float(A.probs[0, 0]),
            "row_sum_max_deviation": float(np.max(np.abs(A.probs.sum(axis=1) - 1.0))),
            "max_offdiag_cross_fidelity": float(np.max(np.abs(F.F[~np.eye(n, dtype=bool)]))) if n > 1 else 0.0,
            "max_offdiag_correlation": float(np.max(np.abs(C.C[~np.eye(n, dtype=bool)]))) if n > 1 else 0.0,
            "statistical_bound": 3.0 / math.sqrt(n_rep) if n_rep else None,
            "excluded_correlation_cells": C.excluded_cells,
        },
        "dephasing_per_us": {
            shape: {"tau_m_ns": m.tau_m * 1e9, "gamma": m.gamma * 1e-6}
            for shape, m in deph.items()},
    }
    matrices = {"assignment": A, "cross_fidelity": F, "correlation": C, "dephasing": deph}
    return report, matrices


def write_report(report, matrices, outdir, header):
    """Write report.json plus CSV matrices into ``outdir``; returns the file names."""
    os.makedirs(outdir, exist_ok=True)
    names = report["qubits"]
    A = matrices["assignment"]
    preps = all_preparations(len(names))
    rows_l = [prep_label(p) for p in preps]
    cols_l = [bit_label(p) for p in preps]
    files = {
        "report.json": output.json_text(report),
        "assignment_matrix.csv": output.csv_text(header, ["prepared"] + cols_l,
                                                 output.matrix_rows(rows_l, A.probs)),
        "assignment_long.csv": output.csv_text(header, ["prepared", "assigned", "probability"],
                                               output.long_rows(rows_l, cols_l, A.probs)),
        "cross_fidelity.csv": output.csv_text(header, ["qubit"] + names,
                                              output.matrix_rows(names, matrices["cross_fidelity"].F)),
        "correlation.csv": output.csv_text(header, ["qubit"] + names,
                                           output.matrix_rows(names, matrices["correlation"].C)),
    }
    for shape, m in matrices["dephasing"].items():
        files[f"dephasing_{shape}.csv"] = output.csv_text(
            header + [f"gamma_ij in 1/us, qubit i (row) under readout of j (column), tau_m = {m.tau_m * 1e9:g} ns"],
            ["qubit"] + names, output.matrix_rows(names, m.gamma * 1e-6))
    table = report["chains"]
    keys = list(table[0].keys())
    files["chains.csv"] = output.csv_text(header, keys, [[r.get(k) for k in keys] for r in table])
    for name, text in files.items():
        output.write_text(os.path.join(outdir, name), text)
    return sorted(files)
