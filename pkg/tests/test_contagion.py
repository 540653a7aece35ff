import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from contagion_lens.contagion import (
    NONE, AssignmentTable, CascadeRecord, ConfigurationError, Mechanism, NodeAssignment, epidemic_curve,
    simulate_network, simulate_star_ensemble, threshold_reached, time_to_fraction,
)
from contagion_lens.netgen import FixedDegree, Graph, ModelSpec, ParameterError, TruncatedBinomial, generate


def path_graph(n):
    return Graph.from_edges(n, [(i, i + 1) for i in range(n - 1)])


def star_graph(k):
    return Graph.from_edges(k + 1, [(0, j) for j in range(1, k + 1)])


def test_mechanism_labels_and_parse():
    assert [m.label for m in Mechanism] == ["Sm", "Cx", "St"]
    assert Mechanism.parse("cx") == Mechanism.CX
    assert Mechanism.parse(2) == Mechanism.ST
    with pytest.raises(ValueError):
        Mechanism.parse("xx")


def test_threshold_is_strict():
    assert not threshold_reached(2, 4, 0.5)
    assert threshold_reached(3, 4, 0.5)
    assert not threshold_reached(1, 10, 0.1)
    assert threshold_reached(np.array([1, 2]), 10, 0.1).tolist() == [False, True]


def test_node_assignment_validation():
    NodeAssignment(0, Mechanism.SM, beta=0.3)
    with pytest.raises(ConfigurationError):
        NodeAssignment(0, Mechanism.SM, phi=0.3)
    with pytest.raises(ConfigurationError):
        NodeAssignment(0, Mechanism.CX, beta=0.1, phi=0.3)
    with pytest.raises(ConfigurationError):
        NodeAssignment(0, Mechanism.ST, beta=0.3)
    with pytest.raises(ConfigurationError):
        NodeAssignment(0, Mechanism.CX, phi=1.5)


def test_assignment_table_from_list_needs_every_node():
    items = [NodeAssignment(0, Mechanism.SM, beta=0.2), NodeAssignment(1, Mechanism.CX, phi=0.4)]
    t = AssignmentTable.from_list(items, 2)
    assert t[1].phi == 0.4 and t[0].beta == 0.2
    with pytest.raises(ConfigurationError):
        AssignmentTable.from_list(items, 3)


def test_balanced_assignment_shares():
    t = AssignmentTable.balanced(1000, [0.1, 0.5], [0.3], np.random.default_rng(0))
    assert (t.mech == Mechanism.SM).sum() in (666, 667)
    assert set(np.round(t.param[t.mech == Mechanism.SM], 2)) == {0.1, 0.5}


def test_cascade_rejects_bad_inputs():
    g = path_graph(4)
    with pytest.raises(ConfigurationError):
        simulate_network(g, AssignmentTable.uniform(3, Mechanism.SM, 0.5), 0.0)
    with pytest.raises(ParameterError):
        simulate_network(g, AssignmentTable.uniform(4, Mechanism.SM, 0.5), 1.5)


def test_beta_one_spreads_one_hop_per_step():
    g = path_graph(6)
    c = simulate_network(g, AssignmentTable.uniform(6, Mechanism.SM, 1.0), 0.0, seed=0, seed_node=0)
    assert c.adoption_time.tolist() == [0, 1, 2, 3, 4, 5]
    assert c.fired[0] == NONE and (c.fired[1:] == Mechanism.SM).all()
    assert c.complete


def test_complex_threshold_boundary_blocks_adoption():
    # centre of a 2-star with phi = 0.5 sees 1 of 2 infected: 1 - 0.5*2 = 0, no adoption
    g = star_graph(2)
    a = AssignmentTable(np.array([1, 0, 0], dtype=np.int8), np.array([0.5, 0.0, 0.0]))
    c = simulate_network(g, a, 0.0, T_max=20, seed=0, seed_node=1)
    assert c.adoption_time[0] == NONE
    assert not c.complete


def test_complex_adopts_when_threshold_exceeded():
    g = star_graph(2)
    a = AssignmentTable(np.array([1, 0, 0], dtype=np.int8), np.array([0.4, 0.0, 0.0]))
    c = simulate_network(g, a, 0.0, T_max=20, seed=0, seed_node=1)
    assert c.adoption_time[0] == 1 and c.fired[0] == Mechanism.CX


def test_spontaneous_only_when_r_one():
    g = path_graph(5)
    c = simulate_network(g, AssignmentTable.uniform(5, Mechanism.SM, 0.0), 1.0, seed=3, seed_node=2)
    assert (c.adoption_time[[0, 1, 3, 4]] == 1).all()
    assert (c.fired[[0, 1, 3, 4]] == Mechanism.ST).all()


def test_stop_fraction_halts_early():
    g = generate(ModelSpec.er(500, 0.01), seed=0)
    c = simulate_network(g, AssignmentTable.uniform(g.n_nodes, Mechanism.SM, 0.5), 0.0, stop_fraction=0.5, seed=1)
    assert c.infected_counts[-1] >= 0.5 * g.n_nodes
    assert c.infected_counts[-2] < 0.5 * g.n_nodes
    assert time_to_fraction(c, 0.5) == c.horizon


def test_simulation_reproducible():
    g = generate(ModelSpec.er(300, 0.015), seed=0)
    a = AssignmentTable.balanced(g.n_nodes, [0.3], [0.2], np.random.default_rng(1))
    c1 = simulate_network(g, a, 0.01, seed=9)
    c2 = simulate_network(g, a, 0.01, seed=9)
    assert np.array_equal(c1.adoption_time, c2.adoption_time)
    assert np.array_equal(c1.fired, c2.fired)


def test_fired_complex_adopters_had_threshold_met():
    g = generate(ModelSpec.er(1000, 0.004), seed=4)
    a = AssignmentTable.balanced(g.n_nodes, [0.5], [0.3], np.random.default_rng(4))
    c = simulate_network(g, a, 0.005, seed=4)
    t = c.adoption_time
    for v in np.flatnonzero(c.fired == Mechanism.CX):
        nb = g.neighbors(v)
        n_before = int(((t[nb] >= 0) & (t[nb] < t[v])).sum())
        n_prev = int(((t[nb] >= 0) & (t[nb] < t[v] - 1)).sum())
        assert threshold_reached(n_before, len(nb), a.param[v])
        assert not threshold_reached(n_prev, len(nb), a.param[v])


def test_jsonl_round_trip(tmp_path):
    g = generate(ModelSpec.er(200, 0.03), seed=0)
    a = AssignmentTable.balanced(g.n_nodes, [0.3], [0.2], np.random.default_rng(0))
    c = simulate_network(g, a, 0.01, seed=2)
    p = tmp_path / "c.jsonl"
    c.to_jsonl(p)
    back = CascadeRecord.from_jsonl(p, g, a)
    assert np.array_equal(back.adoption_time, c.adoption_time)
    assert np.array_equal(back.fired, c.fired)
    assert np.array_equal(back.infected_counts, c.infected_counts)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(0.0, 0.2))
def test_epidemic_curve_is_monotone(seed, beta, phi, r):
    g = generate(ModelSpec.er(150, 0.03), seed=seed % 7)
    a = AssignmentTable.balanced(g.n_nodes, [beta], [phi], np.random.default_rng(seed))
    c = simulate_network(g, a, r, T_max=300, seed=seed)
    counts = np.array([x for _, x in epidemic_curve(c)])
    assert (np.diff(counts) >= 0).all()
    assert counts[0] == 1
    assert counts[-1] == (c.adoption_time >= 0).sum()


def test_star_ensemble_fixed_degree_shapes():
    ens = simulate_star_ensemble(FixedDegree(5), [("Sm", 0.5), ("Cx", 0.3)], 0.05, 10_000, 100, seed=0)
    assert len(ens) == 200
    assert (ens.degree == 5).all()
    assert (ens.adoption_time > 0).all()
    assert set(ens.fired.tolist()) <= {0, 1}


def test_star_ensemble_complex_adopts_at_crossing():
    ens = simulate_star_ensemble(TruncatedBinomial(1000, 0.004), [("Cx", 0.5)], 0.05, 100_000, 300, seed=1)
    for i in range(len(ens)):
        nt = ens.ego_times(i)
        k = len(nt)
        m = int(np.floor(0.5 * k + 1e-9)) + 1
        if m > k:
            assert ens.adoption_time[i] == NONE
            continue
        cross = np.sort(nt)[m - 1]
        assert ens.adoption_time[i] == cross + 1


def test_star_record_materialises_ego():
    ens = simulate_star_ensemble(FixedDegree(3), [("Sm", 0.7)], 0.1, 1000, 5, seed=2)
    rec = ens.record(0)
    assert rec.graph.n_nodes == 4
    assert rec.adoption_time[0] == ens.adoption_time[0]
    assert rec.fired[0] == Mechanism.SM
