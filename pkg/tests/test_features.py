import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from contagion_lens.contagion import NONE, AssignmentTable, Mechanism, simulate_network
from contagion_lens.features import (
    FEATURE_NAMES, SENTINEL, EgoObservation, ExtractionError, adopter_table, event_observation, extract,
    feature_matrix, observation_from_cascade, observation_from_events, read_feature_csv, write_feature_csv,
)
from contagion_lens.netgen import ModelSpec, generate


def obs(times, t_a, ego=0):
    times = np.asarray(times, dtype=np.int64)
    before = (times >= 0) & (times < t_a)
    nt = np.where(before, times, NONE)
    stim = np.where(before, t_a - times, 0)
    return EgoObservation(ego, len(times), t_a, nt, stim, 0)


def test_hand_computed_toy_trajectory():
    fv = extract(obs([2, 5, -1], 7))
    assert fv.degree == 3
    assert fv.sum_stimuli == 7 and fv.n_infected == 2
    assert fv.prop_infected == pytest.approx(2 / 3)
    assert fv.time_since_first == 5 and fv.time_since_last == 2
    assert fv.mean_stimuli == pytest.approx(7 / 3)
    assert fv.std_stimuli == pytest.approx(math.sqrt(38 / 9))


def test_minimal_adoption():
    fv = extract(obs([0], 1))
    assert fv.time_since_first == fv.time_since_last == 1
    assert fv.sum_stimuli == 1


def test_simultaneous_neighbours():
    fv = extract(obs([4, 4, 4], 5))
    assert fv.prop_infected == 1 and fv.time_since_first == fv.time_since_last == 1


def test_no_infected_neighbour_gives_sentinels():
    fv = extract(obs([-1, -1], 3))
    assert fv.time_since_first == fv.time_since_last == SENTINEL
    assert fv.sum_stimuli == 0


def test_isolated_ego_has_finite_features():
    X = feature_matrix([0], [0], [0], [0], [4], [NONE], [NONE])
    assert np.isfinite(X).all()
    assert X[0, 1] == 0.0


def test_infected_only_statistics():
    fv = extract(obs([2, 5, -1], 7), all_neighbours=False)
    assert fv.mean_stimuli == pytest.approx(3.5)
    assert fv.std_stimuli == pytest.approx(1.5)


def test_extraction_errors():
    with pytest.raises(ExtractionError):
        extract(EgoObservation(0, 0, 3, np.zeros(0, np.int64), np.zeros(0, np.int64), 0))
    with pytest.raises(ExtractionError):
        extract(EgoObservation(0, 1, None, np.array([NONE]), np.array([0]), 0))


@pytest.fixture(scope="module")
def cascade():
    g = generate(ModelSpec.er(1000, 0.004), seed=11)
    a = AssignmentTable.balanced(g.n_nodes, [0.5], [0.3], np.random.default_rng(11))
    return simulate_network(g, a, 0.005, seed=11)


def test_adopter_table_matches_per_ego_extraction(cascade):
    t = adopter_table(cascade)
    X = t.features()
    for row, v in enumerate(t.node[:200]):
        o = observation_from_cascade(cascade, int(v))
        assert np.allclose(X[row], extract(o).as_array())


def test_feature_identities(cascade):
    X = adopter_table(cascade).features()
    f1, f2, f3, f4, f5 = X[:, 0], X[:, 1], X[:, 2], X[:, 3], X[:, 4]
    assert np.allclose(f2 * f1, f3)
    assert np.allclose(f4, f5 * f1)
    has = f3 >= 1
    assert (X[has, 6] >= X[has, 7]).all() and (X[has, 7] >= 1).all()
    assert (f3 <= f1).all()


def test_complex_adoptions_have_last_infection_one_step_before(cascade):
    t = adopter_table(cascade)
    X = t.features()
    cx = t.fired == Mechanism.CX
    assert cx.any()
    assert (X[cx, 7] == 1).all()


def test_seed_has_no_observation(cascade):
    with pytest.raises(ValueError):
        observation_from_cascade(cascade, cascade.seed_node)


def test_event_clock_counts_followee_posts():
    # followees post 10 plain posts then one tagged post; adoption observed right after
    actors = np.array([1] * 10 + [2])
    tagged = np.array([False] * 10 + [True])
    o = event_observation(0, actors, tagged)
    assert o.adoption_time == 11
    fv = extract(o)
    assert fv.sum_stimuli == 1
    assert fv.time_since_first == fv.time_since_last == 0
    assert fv.degree == 2


def test_event_observation_last_stimulus_new_flag():
    o = event_observation(0, [1, 2, 1], [True, True, True])
    assert o.last_stimulus_new is False
    o = event_observation(0, [1, 2], [True, True])
    assert o.last_stimulus_new is True


def test_observation_from_events_applies_window_then_event_clock():
    # (actor, ts in seconds, tagged); the window is in days
    day = 86400.0
    stream = [(1, 0.0, True), (2, 5 * day, False), (3, 9 * day, True), (0, 10 * day, True)]
    o = observation_from_events(stream, ego=0, window=2.0)
    assert o.adoption_time == 1  # only the post on day 9 is in the window
    assert extract(o).n_infected == 1
    o_all = observation_from_events(stream, ego=0)
    assert o_all.adoption_time == 3


def test_feature_csv_round_trip(tmp_path, cascade):
    t = adopter_table(cascade)
    X = t.features()
    p = tmp_path / "f.csv"
    write_feature_csv(p, X, t.fired, ids=t.node, t_a=t.t_a, n_prev=t.n_prev)
    rows = read_feature_csv(p)
    assert np.array_equal(rows.X, X)
    assert np.array_equal(rows.labels, t.fired)
    assert np.array_equal(rows.t_a, t.t_a)
    assert np.array_equal(rows.n_prev, t.n_prev)
    header = p.read_text().splitlines()[0].split(",")
    assert tuple(header[1:9]) == FEATURE_NAMES


def test_feature_csv_missing_column(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("id,degree\n0,3\n")
    with pytest.raises(ExtractionError):
        read_feature_csv(p)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(-1, 30), min_size=1, max_size=25), st.integers(1, 40))
def test_feature_invariants_on_random_trajectories(times, t_a):
    fv = extract(obs(times, t_a))
    x = fv.as_array()
    assert 0 <= fv.prop_infected <= 1
    assert fv.prop_infected * fv.degree == pytest.approx(fv.n_infected)
    assert fv.sum_stimuli == pytest.approx(fv.mean_stimuli * fv.degree)
    if fv.n_infected:
        assert fv.time_since_first >= fv.time_since_last >= 1
    else:
        assert x[6] == x[7] == SENTINEL
