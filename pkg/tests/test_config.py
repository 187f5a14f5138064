import dataclasses
import math
import re
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lastlook import config
from lastlook.config import (GridSpec, ModelParams, Protocol, ReputationParams, SizeBucket,
                             apply_overrides, config_hash, config_text, default_grid, from_mapping,
                             load_config, parse_text, preset, to_mapping, write_config)
from lastlook.errors import BadValue, InvariantViolation, MissingKey, UnknownPreset

SRC = Path(config.__file__).parent


def test_base_ladder():
    p = preset("base")
    assert p.sizes.tolist() == [1, 2, 5, 10, 20]
    assert p.intensities.tolist() == [2000, 800, 600, 400, 100]
    assert p.decays.tolist() == [3.0, 2.5, 2.0, 1.5, 1.0]
    assert p.sigma == 100.0 and p.gamma == 1e-3


def test_mark_dispersion():
    b = SizeBucket(1, 2000.0, 3.0, 0.1, 0.0, 0.5)
    assert b.mark_sd(100.0) == pytest.approx(100 * math.sqrt(0.5 / 86400), rel=1e-15)
    assert b.mark_sd(100.0) == pytest.approx(0.24056, abs=5e-6)


def test_rho_out_of_range():
    with pytest.raises(InvariantViolation, match="rho in"):
        ReputationParams(1.2, 0.0)


@pytest.mark.parametrize("kwargs", [dict(size=0), dict(base_intensity=0.0), dict(decay=-1.0),
                                    dict(toxicity=-0.1), dict(toxicity_decay=-1.0), dict(latency_s=-1.0)])
def test_bucket_invariants(kwargs):
    base = dict(size=1, base_intensity=1.0, decay=1.0)
    base.update(kwargs)
    with pytest.raises(InvariantViolation):
        SizeBucket(**base)


def test_sizes_strictly_increasing():
    b = SizeBucket(2, 1.0, 1.0)
    with pytest.raises(InvariantViolation, match="increasing"):
        ModelParams(buckets=(b, b))


def test_grid_needs_room_for_largest_bucket():
    with pytest.raises(InvariantViolation):
        GridSpec(q_max=10).check(preset("base"))


@pytest.mark.parametrize("name", config.PRESET_NAMES)
def test_presets_validate_and_round_trip(name, tmp_path):
    params = preset(name)
    grid = default_grid()
    path = tmp_path / "c.cfg"
    write_config(params, grid, path)
    p2, g2 = load_config(path)
    assert p2 == params and g2 == grid


def test_preset_contents():
    t = preset("table1_tau1s")
    assert {b.latency_s for b in t.buckets} == {1.0}
    assert {b.toxicity for b in t.buckets} == {0.1}
    assert {b.toxicity_decay for b in t.buckets} == {0.0}
    q = preset("quote_dependent_beta05")
    assert {b.toxicity_decay for b in q.buckets} == {0.5}
    assert {b.latency_s for b in q.buckets} == {0.5}
    assert float(q.buckets[0].mark_mean(1.0)) == pytest.approx(-0.1 * math.exp(-0.5))
    s = preset("simulation_fair")
    assert s.reputation.ema_weight == 0.01 and s.reputation.flow_decay == 0.01
    assert s.protocol is Protocol.FAIR
    assert {b.latency_s for b in s.buckets} == {0.5}


def test_unknown_preset():
    with pytest.raises(UnknownPreset):
        preset("nope")


def _text():
    return config_text(preset("base"), default_grid())


def test_missing_key():
    text = "\n".join(ln for ln in _text().splitlines() if not ln.startswith("gamma"))
    with pytest.raises(MissingKey) as e:
        from_mapping(parse_text(text))
    assert e.value.key == "gamma"


def test_bad_value_names_key():
    text = _text().replace("gamma = 0.001", "gamma = abc")
    with pytest.raises(BadValue) as e:
        from_mapping(parse_text(text))
    assert e.value.key == "gamma"


def test_rho_violation_from_file(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text(_text().replace("rho = 0.01", "rho = 1.2"))
    with pytest.raises(InvariantViolation):
        load_config(path)


def test_comments_and_scalar_broadcast():
    text = _text().replace("theta = [0.1, 0.1, 0.1, 0.1, 0.1]", "theta = 0.2  # all buckets")
    params, _ = from_mapping(parse_text("# header\n" + text))
    assert params.toxicities.tolist() == [0.2] * 5


def test_overrides_and_hash():
    params, grid = preset("base"), default_grid()
    p2, _ = apply_overrides(params, grid, {"rho_g": "0.1", "protocol": "fair"})
    assert p2.reputation.flow_decay == 0.1 and p2.protocol is Protocol.FAIR
    assert config_hash(params, grid) == config_hash(preset("base"), default_grid())
    assert config_hash(params, grid) != config_hash(p2, grid)
    with pytest.raises(BadValue):
        apply_overrides(params, grid, {"bogus": 1})


finite = st.floats(min_value=1e-6, max_value=1e6, allow_nan=False, allow_infinity=False)


@settings(max_examples=60, deadline=None)
@given(lam=finite, kappa=finite, theta=st.floats(0, 10), beta=st.floats(0, 10),
       tau=st.floats(0, 100), sigma=finite, gamma=st.floats(0, 1), rho=st.floats(1e-6, 0.999),
       rho_g=st.floats(0, 10), horizon=finite, dt=st.floats(1e-9, 1.0))
def test_round_trip_bit_exact(lam, kappa, theta, beta, tau, sigma, gamma, rho, rho_g, horizon, dt):
    bucket = SizeBucket(1, lam, kappa, theta, beta, tau)
    params = ModelParams((bucket, dataclasses.replace(bucket, size=3)), sigma, gamma,
                         ReputationParams(rho, rho_g), horizon, Protocol.FAIR)
    grid = GridSpec(q_max=7, r_points=11, dt=dt)
    p2, g2 = from_mapping(parse_text(config_text(params, grid)))
    assert p2 == params and g2 == grid
    assert to_mapping(p2, g2) == to_mapping(params, grid)


def test_unit_conversion_is_centralized():
    """The seconds-per-day literal appears only in the config module."""
    offenders = []
    for path in SRC.glob("*.py"):
        if path.name == "config.py":
            continue
        text = path.read_text()
        if re.search(r"86400|86_400", text):
            offenders.append(path.name)
    assert offenders == []
