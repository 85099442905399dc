"""Command-line interface: ``muxread <command> [options]``.

Exit codes: 0 success, 1 bad input, 2 numerical failure.
"""

import argparse
import logging
import os
import sys
import warnings

import numpy as np

from . import config as cfgmod
from . import output
from .analysis import (all_preparations, assignment_matrix, bit_label, correlation_matrix,
                       cross_fidelity, prep_label)
from .circuit import s21, s23
from .dynamics import photon_number, instantaneous_dephasing, simulate_response
from .errors import InputError, MuxreadError, NumericalError
from .fitting import (fit_dispersive_shift, fit_s21, initial_guess_from_spectrum,
                      read_spectrum_csv)
from .geometry import QuarterWaveGeometry, design_scan, length_for_frequency, solve_fundamental_mode
from .report import multiplexed_readout, readout_report, write_report
from .signal import ShotGeneratorConfig, generate_shots
from .units import TWO_PI, ghz

log = logging.getLogger("muxread")

PULSES = {"square": "square", "gaussian": "gaussian_filtered_square"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InputError(f"{self.prog}: {message}")


def _load(args):
    cfg = cfgmod.load(args.config) if args.config else cfgmod.load_default()
    return cfg


def _seed(args, cfg):
    return cfg.seed if getattr(args, "seed", None) is None else args.seed


def _header(cmd, cfg, seed, extra=()):
    return output.header_lines(cmd, cfg.config_hash, seed, extra)


def _names(cfg, requested):
    if not requested:
        return cfg.names
    for n in requested:
        cfg.entry(n)
    return [n for n in cfg.names if n in requested]


def cmd_spectrum(args):
    cfg = _load(args)
    names = _names(cfg, args.chain)
    f0, f1 = args.range
    if f1 < f0:
        raise InputError("--range needs start <= stop")
    if args.points < 1:
        raise InputError("--points must be at least 1")
    freqs = np.array([f0]) if f0 == f1 else np.linspace(f0, f1, args.points)
    omega = ghz(freqs)
    states = {"both": ["g", "e"], "none": [None], "g": ["g"], "e": ["e"]}[args.state]
    fn = s21 if args.source == "s21" else s23
    cols = ["frequency_hz"]
    data = [freqs * 1e9]
    composite = {s: np.ones(omega.shape, dtype=complex) for s in states}
    for n in names:
        chain = cfg.entry(n).chain
        for s in states:
            val = fn(chain, cfg.feedline, omega, s)
            composite[s] = composite[s] * val
            cols.append(f"{args.source}_mag_{n}" + (f"_{s}" if s else ""))
            data.append(np.abs(val))
    if args.source == "s21" and len(names) > 1:
        for s in states:
            cols.append("s21_mag_composite" + (f"_{s}" if s else ""))
            data.append(np.abs(composite[s]))
    rows = np.column_stack(data)
    text = output.csv_text(_header("spectrum", cfg, cfg.seed), cols, rows.tolist())
    output.write_text(args.out, text)


def cmd_timetrace(args):
    cfg = _load(args)
    entry = cfg.entry(args.qubit)
    pulse = cfgmod.readout_pulse(cfg, entry.name, PULSES[args.pulse])
    tg = simulate_response(entry.chain, cfg.feedline, pulse, "g")
    te = simulate_response(entry.chain, cfg.feedline, pulse, "e", tg.dt, tg.t[-1])
    ng, span_g = photon_number(tg)
    ne, span_e = photon_number(te)
    rate = instantaneous_dephasing(tg, te, entry.chain.chi)
    cols = ["t_ns", "envelope", "re_a_g", "im_a_g", "re_b_g", "im_b_g", "re_a_e", "im_a_e",
            "re_b_e", "im_b_e", "photons_g", "photons_e", "dephasing_rate_per_us"]
    rows = np.column_stack([tg.t * 1e9, pulse.envelope(tg.t), tg.a.real, tg.a.imag, tg.b.real, tg.b.imag,
                            te.a.real, te.a.imag, te.b.real, te.b.imag, ng, ne, rate * 1e-6])
    extra = [f"qubit: {entry.name}", f"pulse: {args.pulse}",
             f"occupation_time_ns g/e: {span_g * 1e9:.6g} / {span_e * 1e9:.6g}"]
    output.write_text(args.out, output.csv_text(_header("timetrace", cfg, cfg.seed, extra), cols, rows.tolist()))


def cmd_dephasing(args):
    cfg = _load(args)
    names = _names(cfg, args.qubit)
    from .dynamics import crosstalk_dephasing_matrix
    chains = [cfgmod.dephasing_chain(cfg, n) for n in names]
    pulses = [cfgmod.readout_pulse(cfg, n, PULSES[args.pulse], for_dephasing=True) for n in names]
    tau_m = args.tau_m * 1e-9 if args.tau_m is not None else cfg.tau_m
    m = crosstalk_dephasing_matrix(chains, cfg.feedline, pulses, tau_m)
    extra = [f"pulse: {args.pulse}", f"tau_m_ns: {m.tau_m * 1e9:g}",
             "gamma_ij in 1/us: qubit i (row) dephased by readout pulse of j (column)"]
    text = output.csv_text(_header("dephasing", cfg, cfg.seed, extra), ["qubit"] + names,
                           output.matrix_rows(names, m.gamma * 1e-6))
    output.write_text(args.out, text)


def _parse_preparations(spec, n):
    if spec == "all":
        return all_preparations(n)
    preps = []
    for item in spec.split(","):
        item = item.strip().replace("π", "1").replace("p", "1")
        if len(item) != n or set(item) - {"0", "1"}:
            raise InputError(f"preparation {item!r} must be {n} characters of 0 and 1 (or π)")
        preps.append(tuple(int(c) for c in item))
    return preps


def cmd_shots(args):
    cfg = _load(args)
    names = _names(cfg, args.qubit)
    n_rep = cfg.n_rep if args.n_rep is None else args.n_rep
    if n_rep < 0:
        raise InputError("--n-rep must be non-negative")
    seed = _seed(args, cfg)
    preps = _parse_preparations(args.preparations, len(names))
    cols = ["preparation", "herald_pass"] + [f"s_{n}" for n in names]
    header = _header("shots", cfg, seed, [f"n_rep: {n_rep}", "signals in units of the noise width"])
    if n_rep == 0:
        output.write_text(args.out, output.csv_text(header, cols, []))
        return
    channels = cfgmod.channel_models(cfg, names)
    shots = generate_shots(ShotGeneratorConfig(n_rep, cfgmod.derive_seed(seed, "shots"), cfg.herald),
                           channels, preps)
    labels = [prep_label(p) for p in preps]
    rows = ([labels[p], hp] + list(s) for p, hp, s in zip(shots.prep_index, shots.herald_pass, shots.s))
    output.write_text(args.out, output.csv_text(header, cols, rows))


def cmd_assignment(args):
    cfg = _load(args)
    seed = _seed(args, cfg)
    n_rep = cfg.n_rep if args.n_rep is None else args.n_rep
    shots, thr = multiplexed_readout(cfg, n_rep, cfgmod.derive_seed(seed, "assignment"))
    A = assignment_matrix(shots, thr)
    F = cross_fidelity(A)
    C = correlation_matrix(shots, thr)
    names = cfg.names
    preps = all_preparations(len(names))
    rows_l = [prep_label(p) for p in preps]
    cols_l = [bit_label(p) for p in preps]
    header = _header("assignment", cfg, seed, [f"n_rep: {n_rep}"])
    os.makedirs(args.out, exist_ok=True)
    files = {
        "assignment_matrix.csv": output.csv_text(header, ["prepared"] + cols_l, output.matrix_rows(rows_l, A.probs)),
        "assignment_long.csv": output.csv_text(header, ["prepared", "assigned", "probability"],
                                               output.long_rows(rows_l, cols_l, A.probs)),
        "cross_fidelity.csv": output.csv_text(header, ["qubit"] + names, output.matrix_rows(names, F.F)),
        "correlation.csv": output.csv_text(header, ["qubit"] + names, output.matrix_rows(names, C.C)),
        "summary.json": output.json_text({
            "config_hash": cfg.config_hash, "seed": seed, "n_rep_per_preparation": n_rep,
            "qubits": names, "thresholds": thr, "P_cor": dict(zip(names, A.single_qubit_pcor())),
            "P_all_excited_given_all_pi": A.probs[-1, -1], "heralded_shots_per_row": A.n_per_row}),
    }
    for name, text in files.items():
        output.write_text(os.path.join(args.out, name), text)


def cmd_fit(args):
    cfg = _load(args)
    data = read_spectrum_csv(args.data, args.source)
    if args.chain:
        initial = cfg.entry(args.chain).chain
    else:
        initial = initial_guess_from_spectrum(data, feedline=cfg.feedline)
    if args.data_e:
        data_e = read_spectrum_csv(args.data_e, args.source)
        result = fit_dispersive_shift(data, data_e, initial, cfg.feedline, method=args.method)
    else:
        result = fit_s21(data, initial, cfg.feedline, method=args.method)
    tree = result.to_dict()
    tree["config_hash"] = cfg.config_hash
    tree["seed"] = cfg.seed
    output.write_text(args.out, output.json_text(tree))
    if not result.converged:
        log.warning("fit did not meet the convergence criterion: %s", result.message)


def cmd_geometry(args):
    cfg = _load(args)
    geom = QuarterWaveGeometry.from_impedance(d=args.d_mm * 1e-3, x_c=args.xc_mm * 1e-3,
                                              C0=args.C0_fF * 1e-15, C_c=args.Cc_fF * 1e-15,
                                              Z0=args.Z0, v=args.v)
    header = _header("geometry", cfg, cfg.seed)
    if args.scan:
        param, start, stop, num = args.scan[0], float(args.scan[1]), float(args.scan[2]), int(args.scan[3])
        unit = {"d": 1e-3, "C_c": 1e-15, "C0": 1e-15}.get(param)
        if unit is None:
            raise InputError("--scan parameter must be one of d, C_c, C0")
        rows = design_scan(geom, param, np.linspace(start, stop, num) * unit)
        unit_name = "mm" if param == "d" else "fF"
        text = output.csv_text(header, [f"{param}_{unit_name}", "frequency_hz"],
                               [(v / unit, w / TWO_PI) for v, w in rows])
        output.write_text(args.out, text)
        return
    mode = solve_fundamental_mode(geom)
    tree = {"config_hash": cfg.config_hash, "seed": cfg.seed,
            "frequency_hz": mode.omega / TWO_PI, "unloaded_frequency_hz": geom.omega_unloaded / TWO_PI,
            "theta_rad": mode.theta, "B": mode.B}
    if args.target_ghz is not None:
        tree["length_for_target_mm"] = length_for_frequency(geom, ghz(args.target_ghz)) * 1e3
    output.write_text(args.out, output.json_text(tree))


def cmd_report(args):
    cfg = _load(args)
    seed = _seed(args, cfg)
    rep, mats = readout_report(cfg, n_rep=args.n_rep, seed=seed)
    header = _header("report", cfg, seed, [f"n_rep: {rep['n_rep_per_preparation']}"])
    for name in write_report(rep, mats, args.out, header):
        log.info("wrote %s", os.path.join(args.out, name))


def cmd_config(args):
    cfg = _load(args)
    output.write_text(args.out, cfg.dumps())


def build_parser():
    p = _Parser(prog="muxread", description="Multiplexed dispersive readout simulation and analysis.")
    p.add_argument("--config", help="device configuration JSON (default: shipped device)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("spectrum", help="|S21| or |S23| frequency sweep")
    s.add_argument("--chain", action="append", help="chain name (repeatable; default all)")
    s.add_argument("--state", choices=["g", "e", "both", "none"], default="both")
    s.add_argument("--range", nargs=2, type=float, metavar=("START_GHZ", "STOP_GHZ"), default=(6.2, 7.4))
    s.add_argument("--points", type=int, default=2001)
    s.add_argument("--source", choices=["s21", "s23"], default="s21")
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_spectrum)

    s = sub.add_parser("timetrace", help="filter and resonator field response to a readout pulse")
    s.add_argument("--qubit", required=True)
    s.add_argument("--pulse", choices=list(PULSES), default="square")
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_timetrace)

    s = sub.add_parser("dephasing", help="measurement-induced dephasing crosstalk matrix")
    s.add_argument("--pulse", choices=list(PULSES), default="square")
    s.add_argument("--qubit", action="append", help="restrict to these qubits (repeatable)")
    s.add_argument("--tau-m", type=float, help="normalization time in ns (default: pulse length)")
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_dephasing)

    s = sub.add_parser("shots", help="simulated single-shot integrated signals")
    s.add_argument("--qubit", action="append", help="restrict to these qubits (repeatable)")
    s.add_argument("--preparations", default="all", help="'all' or comma-separated bit strings like 0π0ππ")
    s.add_argument("--n-rep", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_shots)

    s = sub.add_parser("assignment", help="assignment matrix, cross-fidelity and correlations")
    s.add_argument("--n-rep", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_assignment)

    s = sub.add_parser("fit", help="fit chain parameters to a measured or synthetic spectrum")
    s.add_argument("--data", required=True, help="CSV with frequency_hz, magnitude[, phase_rad]")
    s.add_argument("--data-e", help="second spectrum with the qubit excited (dispersive-shift fit)")
    s.add_argument("--chain", help="use this configured chain as the initial guess")
    s.add_argument("--source", choices=["s21", "s23"], default="s21")
    s.add_argument("--method", choices=["auto", "least_squares", "nelder_mead"], default="auto")
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("geometry", help="quarter-wave resonator frequency from its geometry")
    s.add_argument("--d-mm", type=float, required=True)
    s.add_argument("--xc-mm", type=float, required=True)
    s.add_argument("--C0-fF", type=float, default=0.0)
    s.add_argument("--Cc-fF", type=float, default=0.0)
    s.add_argument("--Z0", type=float, default=50.0)
    s.add_argument("--v", type=float, default=1.2e8, help="phase velocity in m/s")
    s.add_argument("--target-ghz", type=float, help="also solve for the length giving this frequency")
    s.add_argument("--scan", nargs=4, metavar=("PARAM", "START", "STOP", "NUM"),
                   help="scan d (mm), C_c or C0 (fF)")
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_geometry)

    s = sub.add_parser("report", help="full report bundle (JSON + CSV)")
    s.add_argument("--n-rep", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("config", help="print the canonical form of the configuration")
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_config)
    return p


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="muxread: %(levelname)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        if args.verbose:
            logging.getLogger().setLevel(logging.INFO)
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            args.func(args)
    except NumericalError as exc:
        print(f"muxread: numerical failure: {exc}", file=sys.stderr)
        return 2
    except (MuxreadError, ValueError) as exc:
        print(f"muxread: error: {exc}", file=sys.stderr)
        return 1
    except BrokenPipeError:
        # downstream reader closed early (e.g. piped into head)
        devnull = os.open(os.devnull, os.O_WRONLY)
        os.dup2(devnull, sys.stdout.fileno())
        return 0
    except OSError as exc:
        print(f"muxread: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
