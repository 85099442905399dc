"""Device configuration: loading, validation, canonical re-emission and seeds.

The file is a JSON tree.  Frequencies are in GHz, rates and couplings in MHz
(all ordinary, not angular), times in ns except T1 in microseconds.  Filter
frequency and linewidth are the effective values seen in transmission
spectra; the bare filter parameters are recovered at load time.
"""

from dataclasses import dataclass, field
import copy
import hashlib
import json
import math

import yaml

from .circuit import FeedlineSpec, ReadoutChain
from .dynamics import PulseSpec, calibrate_amplitude
from .errors import InputError, MuxreadError
from .units import ghz, mhz, ns, us

SCHEMA_VERSION = 1

_CHAIN_KEYS = {
    "name": None, "f_R_GHz": None, "f_P_GHz": None, "kappa_P_MHz": None, "J_MHz": None,
    "chi_MHz": 0.0, "g_MHz": 0.0, "f_Q_GHz": None, "kappa_R_int_MHz": 0.0,
    "gamma_P_MHz": 0.0, "gamma_R_MHz": 0.0, "T1_us": None, "P_therm": 0.0,
    "readout": None, "generator": {}, "dephasing": None,
}
_READOUT_KEYS = {"f_GHz": None, "tau_p_ns": 80.0, "shape": "square", "sigma_filter_ns": 5.0,
                 "target_photons": None}
_GENERATOR_KEYS = {"eta": 1.0, "mixing_rate_per_us": 0.0, "prep_delay_ns": 0.0}
_DEPHASING_KEYS = {"f_R_GHz": None, "chi_MHz": None, "f_Q_GHz": None, "readout_f_GHz": None,
                   "target_photons": None}
_TOP_KEYS = {"schema_version": SCHEMA_VERSION, "feedline": {}, "chains": None, "generator": {},
             "dephasing": {}}
_FEEDLINE_KEYS = {"Z0_ohm": 50.0, "C_in_fF": 40.0}
_TOP_GENERATOR_KEYS = {"n_rep": 100000, "seed": 0, "herald": True}
_TOP_DEPHASING_KEYS = {"tau_m_ns": None}


class ConfigError(InputError):
    pass


def _line_index(node, path=(), out=None):
    """Map JSON paths to 1-based source lines using the YAML node tree."""
    out = {} if out is None else out
    out[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            _line_index(v, path + (k.value,), out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _line_index(v, path + (i,), out)
    return out


class _Context:
    def __init__(self, source, lines):
        self.source = source
        self.lines = lines

    def fail(self, path, msg):
        p = tuple(path)
        while p and p not in self.lines:
            p = p[:-1]
        line = self.lines.get(p)
        where = f"{self.source}:{line}" if line else self.source
        dotted = ".".join(str(x) for x in path) or "<root>"
        raise ConfigError(f"{where}: {dotted}: {msg}")


def _fill(ctx, path, block, spec):
    if not isinstance(block, dict):
        ctx.fail(path, "expected an object")
    unknown = sorted(set(block) - set(spec))
    if unknown:
        ctx.fail(path + (unknown[0],), "unknown key")
    out = {}
    for key, default in spec.items():
        if key in block:
            out[key] = block[key]
        elif default is None and key not in ("dephasing", "f_Q_GHz", "T1_us", "tau_m_ns"):
            ctx.fail(path, f"missing required key {key!r}")
        else:
            out[key] = copy.deepcopy(default)
    return out


def _number(ctx, path, value, lo=-math.inf, hi=math.inf, lo_open=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        ctx.fail(path, f"expected a number, got {value!r}")
    if not math.isfinite(value):
        ctx.fail(path, "must be finite")
    if value < lo or value > hi or (lo_open and value == lo):
        bound = f"> {lo}" if lo_open else f">= {lo}"
        ctx.fail(path, f"value {value} out of range (need {bound}" + (f", <= {hi})" if hi < math.inf else ")"))
    return value


def _normalize(ctx, raw):
    top = _fill(ctx, (), raw, _TOP_KEYS)
    if top["schema_version"] != SCHEMA_VERSION:
        ctx.fail(("schema_version",), f"unsupported schema version {top['schema_version']}")
    fl = _fill(ctx, ("feedline",), top["feedline"], _FEEDLINE_KEYS)
    _number(ctx, ("feedline", "Z0_ohm"), fl["Z0_ohm"], 0, lo_open=True)
    _number(ctx, ("feedline", "C_in_fF"), fl["C_in_fF"], 0)
    top["feedline"] = fl

    gen = _fill(ctx, ("generator",), top["generator"], _TOP_GENERATOR_KEYS)
    if isinstance(gen["n_rep"], bool) or not isinstance(gen["n_rep"], int) or gen["n_rep"] < 0:
        ctx.fail(("generator", "n_rep"), "must be a non-negative integer")
    if isinstance(gen["seed"], bool) or not isinstance(gen["seed"], int) or gen["seed"] < 0:
        ctx.fail(("generator", "seed"), "must be a non-negative integer")
    if not isinstance(gen["herald"], bool):
        ctx.fail(("generator", "herald"), "must be true or false")
    top["generator"] = gen

    deph = _fill(ctx, ("dephasing",), top["dephasing"], _TOP_DEPHASING_KEYS)
    if deph["tau_m_ns"] is not None:
        _number(ctx, ("dephasing", "tau_m_ns"), deph["tau_m_ns"], 0, lo_open=True)
    top["dephasing"] = deph

    chains = top["chains"]
    if not isinstance(chains, list) or not chains:
        ctx.fail(("chains",), "expected a non-empty list")
    seen = set()
    normalized = []
    for i, block in enumerate(chains):
        p = ("chains", i)
        c = _fill(ctx, p, block, _CHAIN_KEYS)
        if not isinstance(c["name"], str) or not c["name"]:
            ctx.fail(p + ("name",), "must be a non-empty string")
        if c["name"] in seen:
            ctx.fail(p + ("name",), f"duplicate chain name {c['name']!r}")
        seen.add(c["name"])
        for key in ("f_R_GHz", "f_P_GHz", "kappa_P_MHz", "J_MHz"):
            _number(ctx, p + (key,), c[key], 0, lo_open=True)
        _number(ctx, p + ("chi_MHz",), c["chi_MHz"])
        for key in ("g_MHz", "kappa_R_int_MHz", "gamma_P_MHz", "gamma_R_MHz"):
            _number(ctx, p + (key,), c[key], 0)
        if c["f_Q_GHz"] is not None:
            _number(ctx, p + ("f_Q_GHz",), c["f_Q_GHz"], 0, lo_open=True)
        if c["T1_us"] is not None:
            _number(ctx, p + ("T1_us",), c["T1_us"], 0, lo_open=True)
        _number(ctx, p + ("P_therm",), c["P_therm"], 0, 1)

        r = _fill(ctx, p + ("readout",), c["readout"], _READOUT_KEYS)
        _number(ctx, p + ("readout", "f_GHz"), r["f_GHz"], 0, lo_open=True)
        _number(ctx, p + ("readout", "tau_p_ns"), r["tau_p_ns"], 0, lo_open=True)
        _number(ctx, p + ("readout", "sigma_filter_ns"), r["sigma_filter_ns"], 0)
        _number(ctx, p + ("readout", "target_photons"), r["target_photons"], 0, lo_open=True)
        if r["shape"] not in ("square", "gaussian_filtered_square"):
            ctx.fail(p + ("readout", "shape"), f"unknown pulse shape {r['shape']!r}")
        c["readout"] = r

        g = _fill(ctx, p + ("generator",), c["generator"], _GENERATOR_KEYS)
        _number(ctx, p + ("generator", "eta"), g["eta"], 0, 1, lo_open=True)
        _number(ctx, p + ("generator", "mixing_rate_per_us"), g["mixing_rate_per_us"], 0)
        _number(ctx, p + ("generator", "prep_delay_ns"), g["prep_delay_ns"], 0)
        c["generator"] = g

        if c["dephasing"] is not None:
            d = c["dephasing"]
            if not isinstance(d, dict):
                ctx.fail(p + ("dephasing",), "expected an object")
            unknown = sorted(set(d) - set(_DEPHASING_KEYS))
            if unknown:
                ctx.fail(p + ("dephasing", unknown[0]), "unknown key")
            for key, value in d.items():
                if key == "chi_MHz":
                    _number(ctx, p + ("dephasing", key), value)
                else:
                    _number(ctx, p + ("dephasing", key), value, 0, lo_open=True)
            c["dephasing"] = dict(d)
        normalized.append(c)
    top["chains"] = normalized
    return top


@dataclass
class ChainEntry:
    name: str
    chain: ReadoutChain
    readout: dict
    generator: dict
    dephasing: dict = None

    @property
    def readout_omega(self):
        return ghz(self.readout["f_GHz"])

    def pulse_template(self, shape=None, readout_omega=None):
        r = self.readout
        shape = shape or r["shape"]
        return PulseSpec(tau_p=ns(r["tau_p_ns"]), amplitude=1.0,
                         carrier_omega=self.readout_omega if readout_omega is None else readout_omega,
                         shape=shape,
                         sigma_filter=ns(r["sigma_filter_ns"]) if shape != "square" else 0.0)


@dataclass
class DeviceConfig:
    feedline: FeedlineSpec
    chains: list
    n_rep: int
    seed: int
    herald: bool
    tau_m: float = None
    data: dict = field(default=None, repr=False)
    source: str = "<config>"

    @property
    def names(self):
        return [c.name for c in self.chains]

    def entry(self, name):
        for c in self.chains:
            if c.name == name:
                return c
        raise InputError(f"unknown chain {name!r}; known: {', '.join(self.names)}")

    def dumps(self):
        return dumps(self.data)

    @property
    def config_hash(self):
        return hashlib.sha256(self.dumps().encode()).hexdigest()[:16]

    def with_generator(self, **changes):
        data = copy.deepcopy(self.data)
        data["generator"].update(changes)
        return parse_config(data, self.source)


def _build_chain(ctx, i, c, feedline):
    try:
        chain = ReadoutChain.from_effective(
            ghz(c["f_P_GHz"]), mhz(c["kappa_P_MHz"]), feedline,
            omega_R=ghz(c["f_R_GHz"]), J=mhz(c["J_MHz"]), chi=mhz(c["chi_MHz"]), g=mhz(c["g_MHz"]),
            omega_Q=ghz(c["f_Q_GHz"]) if c["f_Q_GHz"] is not None else math.nan,
            kappa_b=mhz(c["kappa_R_int_MHz"]), gamma_a=mhz(c["gamma_P_MHz"]),
            gamma_b=mhz(c["gamma_R_MHz"]),
            T1=us(c["T1_us"]) if c["T1_us"] is not None else math.inf,
            P_therm=c["P_therm"], name=c["name"])
    except MuxreadError as exc:
        ctx.fail(("chains", i), str(exc))
    return ChainEntry(name=c["name"], chain=chain, readout=c["readout"],
                      generator=c["generator"], dephasing=c["dephasing"])


def parse_config(raw, source="<config>", lines=None):
    ctx = _Context(source, lines or {})
    data = _normalize(ctx, copy.deepcopy(raw))
    fl = FeedlineSpec(Z0=float(data["feedline"]["Z0_ohm"]), C_in=data["feedline"]["C_in_fF"] * 1e-15)
    entries = [_build_chain(ctx, i, c, fl) for i, c in enumerate(data["chains"])]
    tau = data["dephasing"]["tau_m_ns"]
    return DeviceConfig(feedline=fl, chains=entries, n_rep=data["generator"]["n_rep"],
                        seed=data["generator"]["seed"], herald=data["generator"]["herald"],
                        tau_m=ns(tau) if tau is not None else None, data=data, source=source)


def loads(text, source="<config>"):
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = f":{mark.line + 1}" if mark else ""
        raise ConfigError(f"{source}{line}: malformed config: {getattr(exc, 'problem', exc)}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}: invalid JSON: {exc.msg}") from None
    lines = _line_index(node) if node is not None else {}
    return parse_config(raw, source, lines)


def load(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return loads(text, str(path))


def dumps(data):
    """Canonical JSON text: sorted keys, two-space indent, trailing newline."""
    return json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def default_config_path():
    from importlib import resources
    return resources.files("muxread") / "data" / "device.json"


def load_default():
    path = default_config_path()
    return loads(path.read_text(encoding="utf-8"), "device.json")


def derive_seed(seed, subcommand, qubit="*"):
    """Stable 63-bit subsystem seed from (seed, subcommand, qubit)."""
    digest = hashlib.sha256(f"{seed}\x1f{subcommand}\x1f{qubit}".encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def readout_pulse(config, name, shape=None, for_dephasing=False):
    """Calibrated readout pulse of chain ``name``.

    The amplitude is set so the steady-state resonator population with the
    qubit in g equals the configured target photon number.  With
    ``for_dephasing`` the chain's dephasing overrides are applied.
    """
    entry = config.entry(name)
    chain = dephasing_chain(config, name) if for_dephasing else entry.chain
    omega_d, target = entry.readout_omega, entry.readout["target_photons"]
    if for_dephasing and entry.dephasing:
        if "readout_f_GHz" in entry.dephasing:
            omega_d = ghz(entry.dephasing["readout_f_GHz"])
        target = entry.dephasing.get("target_photons", target)
    template = entry.pulse_template(shape, readout_omega=omega_d)
    amp = calibrate_amplitude(chain, config.feedline, template, target)
    return template.scaled(amp)


def dephasing_chain(config, name):
    entry = config.entry(name)
    d = entry.dephasing or {}
    changes = {}
    if "f_R_GHz" in d:
        changes["omega_R"] = ghz(d["f_R_GHz"])
    if "chi_MHz" in d:
        changes["chi"] = mhz(d["chi_MHz"])
    if "f_Q_GHz" in d:
        changes["omega_Q"] = ghz(d["f_Q_GHz"])
    return entry.chain.with_updates(**changes) if changes else entry.chain


def channel_models(config, names=None, shape=None):
    """Shot-generator channel model for each chain, in config order."""
    from .signal import channel_model

    out = []
    for entry in config.chains:
        if names is not None and entry.name not in names:
            continue
        g = entry.generator
        pulse = readout_pulse(config, entry.name, shape)
        out.append(channel_model(entry.chain, config.feedline, pulse, eta=g["eta"],
                                 mixing_rate=g["mixing_rate_per_us"] * 1e6,
                                 prep_delay=ns(g["prep_delay_ns"])))
    return out
