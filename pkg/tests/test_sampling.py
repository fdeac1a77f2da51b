import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ubad.field import FieldModel, GridSpec, synthesize
from ubad.sampling import (
    DuplicateObservation,
    ObservationSet,
    add_observation,
    complement,
    latin_init,
    masked_matrix,
)


def test_latin_init_n1():
    assert latin_init(1, np.random.default_rng(0)) == [(1, 1)]


@given(n=st.integers(1, 50), seed=st.integers(0, 2**32))
def test_latin_init_is_a_transversal(n, seed):
    cells = latin_init(n, np.random.default_rng(seed))
    assert len(cells) == n
    assert sorted(i for i, _ in cells) == list(range(1, n + 1))
    assert sorted(j for _, j in cells) == list(range(1, n + 1))


def test_latin_init_deterministic_for_seed():
    assert latin_init(30, np.random.default_rng(5)) == latin_init(30, np.random.default_rng(5))


def test_latin_init_uniform_cell_marginals():
    n, draws = 6, 100_000
    rng = np.random.default_rng(123)
    counts = np.zeros((n, n))
    for _ in range(draws):
        for i, j in latin_init(n, rng):
            counts[i - 1, j - 1] += 1
    p = 1 / n
    se = np.sqrt(p * (1 - p) / draws)
    assert np.all(np.abs(counts / draws - p) <= 3 * se)


def test_add_observation_and_duplicates():
    obs = ObservationSet(3)
    add_observation(obs, (1, 1), 5.0)
    assert len(obs) == 1 and obs[(1, 1)] == 5.0
    with pytest.raises(DuplicateObservation):
        add_observation(obs, (1, 1), 1.0)
    with pytest.raises(IndexError):
        obs.add((4, 1), 1.0)


def test_exhaustion():
    n = 4
    obs = ObservationSet(n)
    for i in range(1, n + 1):
        for j in range(1, n + 1):
            obs.add((i, j), i * j)
    assert len(obs) == n * n
    assert list(complement(obs)) == []


def test_complement_order():
    obs = ObservationSet(2)
    obs.add((1, 1), 0.0)
    assert list(complement(obs)) == [(1, 2), (2, 1), (2, 2)]


def test_complement_after_latin_init():
    n = 9
    obs = ObservationSet(n)
    for idx in latin_init(n, np.random.default_rng(1)):
        obs.add(idx, 1.0)
    assert len(list(obs.complement())) == n * n - n


@settings(max_examples=50)
@given(n=st.integers(1, 12), data=st.data())
def test_complement_partitions_grid(n, data):
    cells = data.draw(st.sets(st.tuples(st.integers(1, n), st.integers(1, n))))
    obs = ObservationSet(n, {c: 0.5 for c in cells})
    comp = list(obs.complement())
    assert len(comp) == len(set(comp)) == n * n - len(cells)
    assert set(comp).isdisjoint(cells)
    assert set(comp) | set(cells) == {(i, j) for i in range(1, n + 1) for j in range(1, n + 1)}
    assert comp == sorted(comp)


def test_masked_matrix():
    assert np.array_equal(masked_matrix(ObservationSet(3)), np.zeros((3, 3)))
    obs = ObservationSet(2)
    obs.add((1, 2), 3.0)
    assert np.array_equal(masked_matrix(obs), [[0.0, 3.0], [0.0, 0.0]])


def test_masked_matrix_full_noiseless_equals_field():
    g = GridSpec(5.0, 7)
    H = synthesize(g, FieldModel("laplacian", 1.0, (3, 6))).H
    obs = ObservationSet(7)
    for i in range(7):
        for j in range(7):
            obs.add((i + 1, j + 1), H[i, j])
    assert np.array_equal(obs.masked_matrix(), H)


def test_observed_zero_is_still_observed():
    obs = ObservationSet(2)
    obs.add((2, 1), 0.0)
    assert (2, 1) in obs
    assert (2, 1) not in list(obs.complement())


def test_csv_round_trip(tmp_path):
    obs = ObservationSet(5)
    for idx, v in [((2, 3), 0.125), ((5, 1), -1e-17), ((1, 1), 3.0)]:
        obs.add(idx, v)
    path = tmp_path / "obs.csv"
    obs.to_csv(path)
    assert path.read_text().splitlines()[0] == "i,j,value"
    back = ObservationSet.from_csv(path, 5)
    assert list(back.items()) == list(obs.items())
