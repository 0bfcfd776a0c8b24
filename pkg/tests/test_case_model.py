import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from marketclear.case_model import (Commitment, NetworkCase, load_case, load_commitment,
                                    parse_case, parse_commitment, reduce_commitment,
                                    serialize_case)
from marketclear.errors import (BoundsError, EmptyFreeSet, InputError, ParseError,
                                ValidationError)

from helpers import INF, make_case, triangle

DATA = Path(__file__).resolve().parents[1] / "data" / "ieee118"

NATIVE = {
    "base_mva": 100,
    "buses": [{"id": 1, "load": 0}, {"id": 2, "load": 200}],
    "lines": [{"id": 7, "from": 1, "to": 2, "b": 5.0, "fmax": 150}],
    "generators": [{"id": 1, "bus": 1, "q": 0.01, "c": 20, "pmin": 0, "pmax": 300},
                   {"id": 2, "bus": 2, "q": 0.02, "c": 30}],
}


def test_native_units_are_per_unit():
    case = parse_case(json.dumps(NATIVE))
    assert case.loads.tolist() == [0.0, 2.0]
    assert case.flow_limits.tolist() == [1.5]
    assert case.quad_costs[0] == pytest.approx(100.0)  # 0.01 $/MW^2h * 100^2
    assert case.lin_costs[0] == pytest.approx(2000.0)
    assert case.p_max[0] == 3.0 and case.p_max[1] == INF


def test_null_limit_means_unlimited():
    raw = json.loads(json.dumps(NATIVE))
    raw["lines"][0]["fmax"] = None
    assert math.isinf(parse_case(json.dumps(raw)).flow_limits[0])


@pytest.mark.parametrize("mutate, exc", [
    (lambda r: r["lines"][0].update(to=1), ValidationError),
    (lambda r: r["lines"][0].update(b=-1.0), ValidationError),
    (lambda r: r["lines"][0].update(fmax=0), ValidationError),
    (lambda r: r["generators"][0].update(pmin=400), ValidationError),
    (lambda r: r["generators"][0].update(bus=9), InputError),
    (lambda r: r["buses"].append({"id": 3, "load": 1}), ValidationError),  # islanded
    (lambda r: r["buses"].append({"id": 1, "load": 1}), ValidationError),  # duplicate id
])
def test_invalid_networks_rejected(mutate, exc):
    raw = json.loads(json.dumps(NATIVE))
    mutate(raw)
    with pytest.raises(exc):
        parse_case(json.dumps(raw))


def test_parse_error_carries_line_number():
    text = '{\n "base_mva": 100,\n "buses": [\n  {"id": 1 "load": 0}\n ]\n}'
    with pytest.raises(ParseError) as info:
        parse_case(text)
    assert info.value.line == 4
    assert info.value.exit_code == 2


def test_matpower_ieee118_fixture():
    case = load_case(DATA / "case118.m")
    assert (case.n_bus, case.n_line, case.n_gen) == (118, 186, 54)
    assert case.base_mva == 100
    assert np.all(case.susceptance > 0)


def test_matpower_unknown_table_is_parse_error():
    text = "mpc.baseMVA = 100;\nmpc.areas = [\n 1 1;\n];\n"
    with pytest.raises(ParseError):
        parse_case(text, format="matpower")


def test_matpower_out_of_service_branch_skipped():
    text = """mpc.baseMVA = 100;
mpc.bus = [
 1 3 0 0 0 0 1 1 0 100 1 1.1 0.9;
 2 1 50 0 0 0 1 1 0 100 1 1.1 0.9;
];
mpc.gen = [
 1 0 0 0 0 1 100 1 200 0;
];
mpc.branch = [
 1 2 0 0.1 0 100 0 0 0 0 1 -360 360;
 1 2 0 0.2 0 100 0 0 0 0 0 -360 360;
];
mpc.gencost = [
 2 0 0 3 0.01 20 0;
];
"""
    case = parse_case(text, format="matpower")
    assert case.n_line == 1
    assert case.susceptance[0] == pytest.approx(10.0)
    assert case.loads.tolist() == [0.0, 0.5]


def _random_case(draw):
    n = draw(st.integers(2, 6))
    loads = draw(st.lists(st.floats(-2, 5, allow_nan=False), min_size=n, max_size=n))
    lines = [(i, i + 1, draw(st.floats(0.5, 50)), draw(st.sampled_from([INF, 0.7, 3.3])))
             for i in range(n - 1)]
    gens = [(draw(st.integers(0, n - 1)), draw(st.floats(0.01, 10)), draw(st.floats(-5, 50)))
            for _ in range(draw(st.integers(1, 3)))]
    return make_case(loads, lines, gens)


@given(st.data())
@settings(max_examples=40, deadline=None)
def test_serialize_round_trip(data):
    case = _random_case(data.draw)
    back = parse_case(serialize_case(case))
    for attr in ("loads", "flow_limits", "susceptance", "quad_costs", "lin_costs", "p_min",
                 "p_max"):
        a, b = getattr(case, attr), getattr(back, attr)
        assert np.array_equal(np.isinf(a), np.isinf(b))
        fin = np.isfinite(a)
        np.testing.assert_allclose(b[fin], a[fin], rtol=4 * np.finfo(float).eps, atol=0)


def test_config1_reduces_to_ten_free_generators():
    case = load_case(DATA / "case118.m")
    rc = reduce_commitment(case, load_commitment(DATA / "config1.json"))
    assert rc.n_gen == 10
    assert [g.id for g in rc.generators] == [3, 5, 11, 12, 18, 30, 34, 40, 42, 43]


def test_residual_load_subtracts_committed_output():
    case = triangle(loads=(0.0, 1.0, 2.0), gens=((0, 1.0, 10.0), (1, 1.0, 20.0)))
    rc = reduce_commitment(case, Commitment(free=(1,), committed={2: 50.0}))
    np.testing.assert_allclose(rc.loads, [0.0, 0.5, 2.0])
    assert rc.n_gen == 1 and rc.gen_bus.tolist() == [0]


@pytest.mark.parametrize("config, exc", [
    (Commitment(free=(), committed={1: 0.0, 2: 0.0}), EmptyFreeSet),
    (Commitment(free=(1,), committed={}), ValidationError),           # gen 2 unassigned
    (Commitment(free=(1, 2), committed={2: 1.0}), ValidationError),   # assigned twice
    (Commitment(free=(1, 9), committed={2: 1.0}), ValidationError),   # unknown id
    (Commitment(free=(1,), committed={2: 500.0}), BoundsError),
])
def test_bad_commitments(config, exc):
    case = triangle(gens=((0, 1.0, 10.0, 0.0, 2.0), (1, 1.0, 20.0, 0.0, 2.0)))
    with pytest.raises(exc):
        reduce_commitment(case, config)


def test_free_generator_needs_quadratic_cost():
    case = triangle(gens=((0, 0.0, 10.0),))
    with pytest.raises(ValidationError):
        reduce_commitment(case, Commitment.all_free(case))


def test_commitment_json_round_trip():
    cm = Commitment(free=(3, 1), committed={2: 12.5})
    back = parse_commitment(cm.to_json())
    assert sorted(back.free) == [1, 3] and back.committed == {2: 12.5}
    with pytest.raises(ParseError):
        parse_commitment('{"committed": {}}')


def test_fingerprint_tracks_content():
    a = triangle(loads=(0, 0, 1.0))
    b = triangle(loads=(0, 0, 1.0))
    c = triangle(loads=(0, 0, 1.1))
    fp = [reduce_commitment(x, Commitment.all_free(x)).fingerprint for x in (a, b, c)]
    assert fp[0] == fp[1] != fp[2]


def test_network_case_is_immutable():
    case = triangle()
    assert isinstance(case, NetworkCase)
    with pytest.raises(AttributeError):
        case.base_mva = 1.0
