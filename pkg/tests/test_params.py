import json
import math

import pytest
from hypothesis import given, strategies as st

from bridgestab.params import FIELD_NAMES, BridgeParams, ConfigError, default_tnb, load_config, load_config_file


def test_defaults_are_tacoma_narrows():
    p = default_tnb()
    assert p.L == 853.44 and p.ell == 6.0 and p.H0 == 5.83e7
    assert p.EI == pytest.approx(210e9 * 0.15)
    assert p.GK == pytest.approx(81e9 * 6.44e-6)
    assert p.cable_stiffness == pytest.approx(0.1228 * 210e9 / 868.62)


def test_empty_document_gives_defaults():
    assert load_config("") == default_tnb()
    assert load_config("  \n") == default_tnb()
    assert load_config("{}") == default_tnb()


def test_partial_override():
    p = load_config('{"H0": 6e7}')
    assert p.H0 == 6e7
    assert p.M == default_tnb().M


def test_unknown_key_is_named():
    with pytest.raises(ConfigError) as err:
        load_config('{"span": 800}')
    assert err.value.key == "span"
    assert "span" in str(err.value)


@pytest.mark.parametrize("doc", ['{"H0": "big"}', '{"H0": true}', '{"H0": null}'])
def test_non_numbers_rejected(doc):
    with pytest.raises(ConfigError) as err:
        load_config(doc)
    assert err.value.key == "H0"


@pytest.mark.parametrize("doc", ["[1, 2]", "{not json"])
def test_malformed(doc):
    with pytest.raises(ConfigError):
        load_config(doc)


@pytest.mark.parametrize("field", ["M", "EI", "H0", "A"])
@pytest.mark.parametrize("value", [0.0, -1.0, math.inf, math.nan])
def test_positivity(field, value):
    with pytest.raises(ConfigError) as err:
        default_tnb().replace(**{field: value})
    assert err.value.key == field


def test_geometry_constraints():
    with pytest.raises(ConfigError, match="ell"):
        BridgeParams(ell=50.0)
    with pytest.raises(ConfigError, match="Lc"):
        BridgeParams(Lc=800.0)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config_file(tmp_path / "nope.json")


def test_fingerprint_tracks_values():
    a = default_tnb()
    assert a.fingerprint() == default_tnb().fingerprint()
    assert a.fingerprint() != a.replace(H0=a.H0 * (1 + 1e-12)).fingerprint()


@given(st.dictionaries(st.sampled_from(FIELD_NAMES), st.floats(0.5, 2.0), max_size=4))
def test_json_round_trip(scales):
    base = default_tnb()
    try:
        p = base.replace(**{k: getattr(base, k) * s for k, s in scales.items()})
    except ConfigError:
        return  # scaled into an invalid geometry
    again = load_config(p.to_json())
    assert again == p
    assert again.fingerprint() == p.fingerprint()
    assert set(json.loads(p.to_json())) == set(FIELD_NAMES)
