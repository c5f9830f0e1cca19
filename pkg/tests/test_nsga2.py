from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prefego.nsga2 import (
    FrontApproximation,
    _polynomial_mutation,
    _sbx,
    crowding_distance,
    dominates,
    fast_non_dominated_sort,
    non_dominated_mask,
    run_nsga2,
)
from prefego.testbed import POL


def brute_force_fronts(F):
    """Peel fronts by checking every remaining pair."""
    remaining = list(range(len(F)))
    fronts = []
    while remaining:
        front = [i for i in remaining
                 if not any(all(F[j] <= F[i]) and any(F[j] < F[i]) for j in remaining if j != i)]
        fronts.append(sorted(front))
        remaining = [i for i in remaining if i not in front]
    return fronts


def hypervolume_2d(F, ref):
    pts = sorted(map(tuple, F[np.all(F < ref, axis=1)]))
    hv, best_f2 = 0.0, ref[1]
    for f1, f2 in pts:
        if f2 < best_f2:
            hv += (ref[0] - f1) * (best_f2 - f2)
            best_f2 = f2
    return hv


def test_dominates_examples():
    assert dominates((1, 2), (2, 2))
    assert not dominates((1, 2), (2, 1))
    assert not dominates((1, 2), (1, 2))
    with pytest.raises(ValueError):
        dominates((1, 2), (1, 2, 3))


def test_sort_examples():
    assert [sorted(f) for f in fast_non_dominated_sort([(1, 2), (2, 1), (3, 3)])] == [[0, 1], [2]]
    assert fast_non_dominated_sort([(4.0, 4.0)]) == [[0]]
    with pytest.raises(ValueError):
        fast_non_dominated_sort(np.zeros((0, 2)))


def test_sort_200_points_vs_brute_force():
    F = np.random.default_rng(0).random((200, 2))
    assert [sorted(f) for f in fast_non_dominated_sort(F)] == brute_force_fronts(F)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 300), K=st.integers(2, 3), grid=st.booleans())
def test_sort_matches_brute_force(seed, n, K, grid):
    rng = np.random.default_rng(seed)
    # integer grids force ties and duplicate vectors
    F = rng.integers(0, 6, (n, K)).astype(float) if grid else rng.random((n, K))
    fronts = fast_non_dominated_sort(F)
    assert sorted(i for f in fronts for i in f) == list(range(n))
    assert [sorted(f) for f in fronts] == brute_force_fronts(F)


def test_crowding_examples():
    assert np.all(np.isinf(crowding_distance([(0, 1), (1, 0)])))
    line = np.column_stack([np.linspace(0, 1, 5), np.linspace(1, 0, 5)])
    d = crowding_distance(line)
    assert np.isinf(d[0]) and np.isinf(d[-1])
    np.testing.assert_allclose(d[1:-1], 1.0)  # (0.5 / 1) per objective, two objectives
    dup = crowding_distance([(0, 1), (0.5, 0.5), (0.5, 0.5), (1, 0)])
    assert np.all(np.isfinite(dup[1:3]))
    flat = crowding_distance([(1, 1), (1, 1), (1, 1)])
    assert not np.any(np.isnan(flat))


def test_identity_evaluator_finds_corner():
    bounds = [(-2.0, 3.0), (1.0, 5.0)]
    lo = np.array([-2.0, 1.0])
    span = np.array([5.0, 4.0])
    front = run_nsga2(lambda X: X.copy(), bounds, 40, 100, np.random.default_rng(0))
    assert np.all(np.abs((front.designs - lo) / span) <= 0.05)


def test_linear_front_hypervolume():
    front = run_nsga2(lambda X: np.column_stack([X[:, 0], 1 - X[:, 0]]), [(0, 1), (0, 1)], 100, 100,
                      np.random.default_rng(1))
    hv = hypervolume_2d(front.objectives, np.array([1.1, 1.1]))
    assert hv == pytest.approx(0.705, rel=0.05)
    assert front.objectives[:, 0].min() < 0.01 and front.objectives[:, 0].max() > 0.99


def test_pol_front_is_non_dominated():
    front = run_nsga2(POL.evaluate, POL.bounds, 100, 300, np.random.default_rng(2))
    assert len(front) > 10
    assert non_dominated_mask(front.objectives).all()
    assert np.all(front.designs >= POL.lower) and np.all(front.designs <= POL.upper)
    np.testing.assert_array_equal(POL.evaluate(front.designs), front.objectives)


def test_elitism():
    previous = []

    def check(gen, X, F):
        nd = F[non_dominated_mask(F)]
        if previous:
            for new in nd:
                assert not any(dominates(old, new) for old in previous[-1])
        previous.append(nd)

    run_nsga2(POL.evaluate, POL.bounds, 40, 60, np.random.default_rng(3), callback=check)
    assert len(previous) == 61


def test_offspring_clamped_to_bounds():
    rng = np.random.default_rng(4)
    lo, hi = np.array([-1.0, 0.0]), np.array([1.0, 0.5])
    P1 = np.tile(lo, (500, 1))
    P2 = np.tile(hi, (500, 1))
    for _ in range(10):
        C1, C2 = _sbx(P1, P2, lo, hi, 15.0, 1.0, rng)
        M = _polynomial_mutation(np.vstack([C1, C2, P1, P2]), lo, hi, 20.0, 1.0, rng)
        for A in (C1, C2, M):
            assert np.all(A >= lo) and np.all(A <= hi)


def test_deterministic_given_stream():
    a = run_nsga2(POL.evaluate, POL.bounds, 20, 20, np.random.default_rng(5))
    b = run_nsga2(POL.evaluate, POL.bounds, 20, 20, np.random.default_rng(5))
    np.testing.assert_array_equal(a.designs, b.designs)


def test_nonfinite_evaluator_names_design():
    def bad(X):
        F = X.copy()
        F[0, 1] = np.nan
        return F

    with pytest.raises(ValueError, match="design"):
        run_nsga2(bad, [(0, 1), (0, 1)], 8, 2, np.random.default_rng(0))


@pytest.mark.parametrize("pop", [3, 7, 2])
def test_population_validation(pop):
    with pytest.raises(ValueError):
        run_nsga2(lambda X: X, [(0, 1), (0, 1)], pop, 1)


def test_front_json_round_trip():
    front = run_nsga2(POL.evaluate, POL.bounds, 20, 5, np.random.default_rng(6), descriptor="POL truth")
    back = FrontApproximation.from_json(front.to_json(), front.generations, front.pop_size, front.descriptor)
    np.testing.assert_array_equal(back.designs, front.designs)
    np.testing.assert_array_equal(back.objectives, front.objectives)
    assert all(ind.rank == 0 for ind in front.individuals)
