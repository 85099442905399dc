import copy
import json
import math

import pytest

from muxread import config
from muxread.circuit import effective_filter_params, steady_state_photon
from muxread.config import ConfigError

DEFAULT_TEXT = config.default_config_path().read_text(encoding="utf-8")


@pytest.fixture(scope="module")
def device():
    return config.load_default()


def test_default_loads(device):
    assert device.names == ["Q2", "Q3", "Q5", "Q6", "Q7"]
    assert device.n_rep == 100000 and device.herald
    assert len(device.config_hash) == 16


def test_units_are_converted(device):
    e = device.entry("Q2")
    eff = effective_filter_params(e.chain, device.feedline)
    assert eff.omega_P_eff == pytest.approx(2 * math.pi * 7.057e9, rel=1e-12)
    assert eff.kappa_P_eff == pytest.approx(2 * math.pi * 32.2e6, rel=1e-12)
    assert e.chain.omega_R == pytest.approx(2 * math.pi * 7.058e9)
    assert e.chain.J == pytest.approx(2 * math.pi * 9.2e6)
    assert e.chain.T1 == pytest.approx(5.7e-6)
    assert e.pulse_template().tau_p == pytest.approx(80e-9)
    assert device.feedline.C_in == pytest.approx(40e-15)


def test_canonical_round_trip_is_idempotent(device):
    assert device.dumps() == DEFAULT_TEXT
    again = config.loads(device.dumps())
    assert again.dumps() == device.dumps()
    assert again.config_hash == device.config_hash


def test_readout_pulse_hits_target(device):
    e = device.entry("Q6")
    p = config.readout_pulse(device, "Q6")
    n = steady_state_photon(e.chain, device.feedline, p.carrier_omega, p.amplitude, "g")
    assert n == pytest.approx(e.readout["target_photons"], rel=1e-12)


def test_dephasing_overrides(device):
    base = device.entry("Q5").chain
    over = config.dephasing_chain(device, "Q5")
    assert over.omega_R == pytest.approx(2 * math.pi * 7.2e9)
    assert over.chi == pytest.approx(2 * math.pi * -0.9e6)
    assert over.J == base.J
    assert config.dephasing_chain(device, "Q6") is device.entry("Q6").chain


def _mutated(fn):
    data = json.loads(DEFAULT_TEXT)
    fn(data)
    return config.dumps(data)


def test_errors_carry_line_and_path():
    text = _mutated(lambda d: d["chains"][1].update(kappa_P_MHz=-1.0))
    with pytest.raises(ConfigError) as exc:
        config.loads(text, "dev.json")
    msg = str(exc.value)
    line = next(i for i, ln in enumerate(text.splitlines(), 1) if '"kappa_P_MHz": -1.0' in ln)
    assert msg.startswith(f"dev.json:{line}: chains.1.kappa_P_MHz:")


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown key"):
        config.loads(_mutated(lambda d: d["chains"][0].update(bogus=1)))
    with pytest.raises(ConfigError, match="unknown key"):
        config.loads(_mutated(lambda d: d.update(extra={})))


def test_duplicate_name_rejected():
    def dup(d):
        d["chains"][1]["name"] = d["chains"][0]["name"]
    with pytest.raises(ConfigError, match="duplicate chain name"):
        config.loads(_mutated(dup))


def test_missing_key_and_bad_types():
    def drop(d):
        del d["chains"][0]["J_MHz"]
    with pytest.raises(ConfigError, match="missing required key"):
        config.loads(_mutated(drop))
    with pytest.raises(ConfigError, match="expected a number"):
        config.loads(_mutated(lambda d: d["chains"][0].update(J_MHz="nine")))
    with pytest.raises(ConfigError, match="non-negative integer"):
        config.loads(_mutated(lambda d: d["generator"].update(n_rep=-5)))
    with pytest.raises(ConfigError, match="invalid JSON|malformed"):
        config.loads('{"chains": [}')


def test_unknown_chain_lookup(device):
    with pytest.raises(config.InputError, match="unknown chain"):
        device.entry("Q9")


def test_with_generator_changes_hash(device):
    other = device.with_generator(seed=1)
    assert other.seed == 1 and other.config_hash != device.config_hash
    assert device.seed == 20170501


def test_derive_seed_is_stable_and_distinct():
    a = config.derive_seed(1, "shots", "Q2")
    assert a == config.derive_seed(1, "shots", "Q2")
    assert 0 <= a < 2**63
    others = {config.derive_seed(1, "shots", "Q3"), config.derive_seed(2, "shots", "Q2"),
              config.derive_seed(1, "report", "Q2")}
    assert a not in others and len(others) == 3


def test_config_is_not_mutated_by_parse():
    raw = json.loads(DEFAULT_TEXT)
    before = copy.deepcopy(raw)
    config.parse_config(raw)
    assert raw == before
