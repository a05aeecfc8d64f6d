import pytest
from hypothesis import given, settings, strategies as st

from ahconstraint.config import (PROBES, ChartConfig, RunConfig, Tolerances, parse_config, serialize)
from ahconstraint.errors import ParseError, RangeError, UnknownKey


def test_minimal_config_gets_defaults():
    cfg = parse_config("[model]\ntau = 1\n[run]\nprobes = phi-zero\n")
    assert cfg.probes == ("evaluate",)
    assert cfg == RunConfig(probes=("evaluate",))


def test_kernel_delta_in_window():
    cfg = parse_config("[run]\nprobes = kernel\n[weights]\ndeltas = -1.5\n", strict=True)
    assert cfg.deltas == (-1.5,)


def test_kernel_delta_outside_window_strict():
    text = "[run]\nprobes = kernel\n[weights]\ndeltas = -3\n"
    with pytest.raises(RangeError):
        parse_config(text, strict=True)
    assert parse_config(text).deltas == (-3.0,)


def test_parse_error_location():
    with pytest.raises(ParseError) as e:
        parse_config("[run]\nseed = 0\n\n[model]\ntau = abc\n")
    assert (e.value.line, e.value.column) == (5, 7)
    with pytest.raises(ParseError) as e:
        parse_config("[run]\nthis line is junk\n")
    assert e.value.line == 2
    with pytest.raises(ParseError) as e:
        parse_config("seed = 1\n")
    assert e.value.line == 1


def test_unknown_keys_rejected():
    with pytest.raises(UnknownKey):
        parse_config("[run]\nsede = 1\n")
    with pytest.raises(UnknownKey):
        parse_config("[extras]\nx = 1\n")


@pytest.mark.parametrize("text", ["[model]\nlambda = 1.5\n", "[ladder]\nresolutions = 32\n",
                                  "[run]\nversion = 2\n", "[chart]\nr_inner = 0.99\n", "[weights]\nR = -1\n",
                                  "[tolerances]\nphi = 0\n", "[run]\nseed = -1\n"])
def test_range_errors(text):
    with pytest.raises(RangeError):
        parse_config(text)


def test_unknown_probe():
    with pytest.raises(ParseError):
        parse_config("[run]\nprobes = evaluate, bogus\n")


def test_all_alias():
    assert parse_config("[run]\nprobes = all\n").probes == PROBES


floats = st.floats(-1.9, -1.1, allow_nan=False)
configs = st.builds(
    RunConfig,
    probes=st.lists(st.sampled_from(PROBES), min_size=1, max_size=6, unique=True).map(tuple),
    seed=st.integers(0, 2**64 - 1),
    out=st.from_regex(r"[a-z][a-z0-9_/]{0,12}", fullmatch=True),
    warn_and_proceed=st.booleans(),
    tau=st.floats(-5, 5, allow_nan=False),
    lam=st.floats(0.01, 0.99),
    deltas=st.lists(floats, min_size=1, max_size=4).map(tuple),
    radii=st.lists(st.floats(0.1, 5), min_size=1, max_size=3).map(tuple),
    resolutions=st.lists(st.integers(4, 256), min_size=2, max_size=4).map(tuple),
    kernel_ladder=st.lists(st.integers(2, 64), min_size=2, max_size=4).map(tuple),
    family_size=st.integers(1, 200),
    input_seeds=st.integers(1, 20),
    chart=st.builds(ChartConfig, r_inner=st.floats(0.05, 0.4), r_outer=st.floats(0.5, 0.99),
                    n_ang=st.integers(2, 30), q_radial=st.integers(1, 6)),
    tolerances=st.builds(Tolerances, phi=st.floats(1e-14, 1), rate=st.floats(0.5, 3)),
)


@settings(max_examples=200, deadline=None)
@given(cfg=configs)
def test_roundtrip_fixed_point(cfg):
    text = serialize(cfg)
    back = parse_config(text)
    assert back == cfg
    assert serialize(back) == text
