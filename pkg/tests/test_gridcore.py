import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridsec.gridcore import (CaseError, GridCase, InfeasibleError, IslandingError, Line, Measurement,
                              MeasurementSet, PerturbationPlan, UnobservableError, apply_perturbation,
                              build_measurement_matrix, bundled_case, case_digest, case_to_dict, connectivity,
                              dc_opf, dc_power_flow, dispatch_injections, load_case, measure)

from conftest import random_connected_case, random_dispatch_case
from oracles import dense_flow_oracle, lp_vertex_oracle

RING3_DOC = {
    "buses": [1, 2, 3],
    "slack_bus": 1,
    "lines": [
        {"id": "L12", "from": 1, "to": 2, "x": 0.1, "limit": 1.0, "dfacts": True},
        {"id": "L13", "from": 1, "to": 3, "x": 0.1, "limit": 1.0, "dfacts": True},
        {"id": "L23", "from": 2, "to": 3, "x": 0.1, "limit": 1.0, "dfacts": False},
    ],
    "generators": [{"id": "G1", "bus": 1, "cost": 10.0, "p_min": 0.0, "p_max": 2.0}],
    "loads": [{"id": "D3", "bus": 3, "p": 1.0}],
}


# -- case documents ---------------------------------------------------------------

def test_load_valid_ring():
    case = load_case(RING3_DOC)
    assert case.n_buses == 3 and len(case.lines) == 3
    assert load_case(json.dumps(RING3_DOC)) == case


def test_round_trip_through_dict(case5):
    assert load_case(case_to_dict(case5)) == case5


def test_zero_reactance_rejected():
    doc = json.loads(json.dumps(RING3_DOC))
    doc["lines"][1]["x"] = 0
    with pytest.raises(CaseError, match="nonpositive reactance") as exc:
        load_case(doc)
    assert exc.value.path == "lines[1].x"


def test_missing_slack_named():
    doc = {k: v for k, v in RING3_DOC.items() if k != "slack_bus"}
    with pytest.raises(CaseError, match="slack_bus"):
        load_case(doc)


def test_disconnected_topology_rejected():
    doc = json.loads(json.dumps(RING3_DOC))
    doc["buses"].append(4)
    with pytest.raises(CaseError, match="disconnected"):
        load_case(doc)


def test_line_between_same_bus_rejected():
    doc = json.loads(json.dumps(RING3_DOC))
    doc["lines"][0]["to"] = 1
    with pytest.raises(CaseError, match="distinct"):
        load_case(doc)


# -- power flow ---------------------------------------------------------------------

def test_ring_example(ring3):
    sol = dc_power_flow(ring3, {1: 0.0, 2: 1.0, 3: -1.0})
    theta, flows = dense_flow_oracle(ring3, np.array([0.0, 1.0, -1.0]))
    assert np.allclose(sol.angles, theta, atol=1e-12)
    assert np.allclose(sol.flows, flows, atol=1e-12)
    assert sol.angle(2) == pytest.approx(1 / 30, abs=1e-12)
    assert sol.angle(3) == pytest.approx(-1 / 30, abs=1e-12)
    assert sol.flow("L12") == pytest.approx(-1 / 3, abs=1e-12)
    assert sol.flow("L13") == pytest.approx(1 / 3, abs=1e-12)
    assert sol.flow("L23") == pytest.approx(2 / 3, abs=1e-12)


def test_zero_injection(ring3):
    sol = dc_power_flow(ring3, [0.0, 0.0, 0.0])
    assert not sol.angles.any() and not sol.flows.any()


def test_unbalanced_rejected(ring3):
    with pytest.raises(ValueError, match="unbalanced"):
        dc_power_flow(ring3, [0.0, 1.0, 0.0])


def test_isolated_bus_islanding(ring3):
    cut = ring3.with_line_status("L13", False).with_line_status("L23", False)
    with pytest.raises(IslandingError) as exc:
        dc_power_flow(cut, [0.0, 0.0, 0.0])
    assert [3] in exc.value.components


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 9))
def test_flow_matches_dense_oracle(seed, n):
    rng = np.random.default_rng(seed)
    case = random_connected_case(rng, n)
    p = rng.normal(size=n)
    p -= p.mean()
    sol = dc_power_flow(case, p)
    theta, flows = dense_flow_oracle(case, p)
    assert np.allclose(sol.angles, theta, atol=1e-9)
    assert np.allclose(sol.flows, flows, atol=1e-9)
    # nodal balance and antisymmetry
    for i, b in enumerate(case.buses):
        net = sum(sol.flow(ln.id) for ln in case.lines if ln.from_bus == b)
        net -= sum(sol.flow(ln.id) for ln in case.lines if ln.to_bus == b)
        assert net == pytest.approx(p[i], abs=1e-9)
    for ln in case.lines:
        assert sol.flow(ln.id, -1) == -sol.flow(ln.id)


# -- measurement matrix -----------------------------------------------------------

def test_flow_row_entries(ring3):
    ms = MeasurementSet((Measurement("flow", "L23", 0.01), Measurement("flow", "L12", 0.01)))
    H = build_measurement_matrix(ring3, ms)
    assert H[0].tolist() == [10.0, -10.0]
    assert np.count_nonzero(H[1]) == 1  # incident to slack


def test_ring_all_measurements_rank(ring3):
    ms = MeasurementSet.all_flows_and_injections(ring3)
    H = build_measurement_matrix(ring3, ms)
    assert H.shape == (6, 2)
    assert np.linalg.matrix_rank(H) == 2


def test_unobservable_rejected(case5):
    ms = MeasurementSet(tuple(Measurement("flow", lid, 0.01) for lid in ("L12", "L13", "L23")))
    with pytest.raises(UnobservableError):
        build_measurement_matrix(case5, ms)


def _direct_measurements(case, ms, theta):
    idx = {b: i for i, b in enumerate(case.buses)}
    out = []
    for m in ms:
        if m.kind == "flow":
            ln = case.line(m.target)
            out.append(m.direction * (theta[idx[ln.from_bus]] - theta[idx[ln.to_bus]]) / ln.x)
        else:
            tot = 0.0
            for ln in case.in_service_lines:
                f = (theta[idx[ln.from_bus]] - theta[idx[ln.to_bus]]) / ln.x
                if ln.from_bus == m.target:
                    tot += f
                elif ln.to_bus == m.target:
                    tot -= f
            out.append(tot)
    return np.array(out)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 8))
def test_linear_model_consistency(seed, n):
    rng = np.random.default_rng(seed)
    case = random_connected_case(rng, n)
    ms = MeasurementSet.all_flows_and_injections(case)
    H = build_measurement_matrix(case, ms)
    injections = MeasurementSet(tuple(Measurement("injection", b, 1.0) for b in case.buses))
    for _ in range(3):
        x = rng.normal(scale=0.1, size=case.n_states)
        theta = np.concatenate([[0.0], x])
        assert np.max(np.abs(H @ x - _direct_measurements(case, ms, theta))) < 1e-9
        # the same state reached through the solver
        sol = dc_power_flow(case, _direct_measurements(case, injections, theta))
        assert np.max(np.abs(H @ x - measure(case, ms, sol))) < 1e-9


# -- perturbation -----------------------------------------------------------------

def test_empty_plan_is_identity(ring3):
    assert apply_perturbation(ring3, PerturbationPlan()) == ring3


def test_perturbation_scales_one_line(ring3):
    before = case_digest(ring3)
    moved = apply_perturbation(ring3, PerturbationPlan((("L23", 1.2),)))
    assert moved.line("L23").x == pytest.approx(0.12)
    assert moved.line("L12").x == ring3.line("L12").x
    assert case_digest(ring3) == before


def test_perturbation_needs_dfacts():
    case = load_case(RING3_DOC)
    with pytest.raises(ValueError, match="D-FACTS"):
        apply_perturbation(case, PerturbationPlan((("L23", 1.1),)))


def test_plan_bounds_enforced():
    with pytest.raises(ValueError, match="outside bounds"):
        PerturbationPlan((("L12", 1.5),), (0.8, 1.2))


# -- dispatch -------------------------------------------------------------------------

def test_single_generator_covers_load():
    res = dc_opf(load_case(RING3_DOC))
    assert res.dispatch == pytest.approx((1.0,))
    assert res.cost == pytest.approx(10.0)


def test_cheap_generator_capacity_limited(ring3):
    case = GridCase(ring3.buses, 1, tuple(Line(ln.id, ln.from_bus, ln.to_bus, ln.x) for ln in ring3.lines),
                    (ring3.generators[0].__class__("G1", 1, 10.0, 0.0, 0.6), ring3.generators[1]), ring3.loads)
    res = dc_opf(case)
    assert res.dispatch == pytest.approx((0.6, 0.4), abs=1e-12)
    assert res.cost == pytest.approx(lp_vertex_oracle(case)[0], abs=1e-8)


def test_infeasible_limit(ring3):
    lines = tuple(Line(ln.id, ln.from_bus, ln.to_bus, ln.x, limit=0.3) for ln in ring3.lines)
    case = GridCase(ring3.buses, 1, lines, ring3.generators, ring3.loads)
    assert lp_vertex_oracle(case) is None
    with pytest.raises(InfeasibleError) as exc:
        dc_opf(case)
    assert exc.value.binding


@pytest.mark.parametrize("name", ["ring3", "case5"])
def test_bundled_opf_matches_vertex_enumeration(name):
    case = bundled_case(name)
    res = dc_opf(case)
    cost, p = lp_vertex_oracle(case)
    assert res.cost == pytest.approx(cost, abs=1e-8)
    assert np.allclose(res.dispatch, p, atol=1e-8)


def test_opf_flows_respect_limits(case5):
    res = dc_opf(case5)
    sol = dc_power_flow(case5, dispatch_injections(case5, res.dispatch))
    assert np.allclose(sol.flows, res.flows, atol=1e-9)
    for ln, f in zip(case5.lines, sol.flows):
        assert abs(f) <= ln.limit + 1e-9


# -- topology -------------------------------------------------------------------------

def test_connectivity(ring3):
    assert connectivity(ring3) == [[1, 2, 3]]
    path = GridCase((1, 2, 3), 1, (Line("a", 1, 2, 0.1), Line("b", 2, 3, 0.1)))
    assert connectivity(path.with_line_status("b", False)) == [[1, 2], [3]]
    bare = path.with_line_status("a", False).with_line_status("b", False)
    assert connectivity(bare) == [[1], [2], [3]]


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), ng=st.integers(1, 3))
def test_opf_matches_vertex_enumeration(seed, ng):
    case = random_dispatch_case(np.random.default_rng(seed), ng)
    expected = lp_vertex_oracle(case)
    if expected is None:
        with pytest.raises(InfeasibleError):
            dc_opf(case)
        return
    res = dc_opf(case)
    assert res.cost == pytest.approx(expected[0], abs=1e-8)
