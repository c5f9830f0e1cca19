from __future__ import annotations

import json
import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prefego.dm import (
    AlreadyPicked,
    InteractiveDM,
    NotAwaiting,
    ReferenceBest,
    SimulatedDM,
    _grid_search,
    compute_reference_best,
    final_pick,
    opportunity_cost,
    pick_from_front,
)
from prefego.nsga2 import FrontApproximation, non_dominated_mask
from prefego.scalarize import UtilityModel, sample_theta, utility
from prefego.testbed import HOLE2, POL

HOLE2_TCH_HALF_USTAR = -0.55  # frozen grid-plus-polish value


def front_of(objectives):
    Y = np.asarray(objectives, dtype=float)
    return FrontApproximation(np.zeros((len(Y), 2)), Y, 0, 0)


def test_pick_examples():
    f = front_of([(1, 3), (3, 1)])
    assert pick_from_front(SimulatedDM(UtilityModel("linear", (0.9, 0.1))), f) == 0
    assert pick_from_front(SimulatedDM(UtilityModel("linear", (0.1, 0.9))), f) == 1
    assert pick_from_front(SimulatedDM(UtilityModel("tchebychev", (0.5, 0.5))), f) == 0
    assert pick_from_front(SimulatedDM(UtilityModel("linear", (0.5, 0.5))), front_of([(2, 2)])) == 0
    with pytest.raises(ValueError):
        pick_from_front(SimulatedDM(UtilityModel("linear", (0.5, 0.5))), front_of(np.zeros((0, 2))))


@settings(max_examples=30)
@given(seed=st.integers(0, 10_000), a=st.floats(0.01, 100), b=st.floats(-100, 100))
def test_pick_invariant_to_affine_utility(seed, a, b):
    rng = np.random.default_rng(seed)
    Y = rng.uniform(0, 5, (30, 2))
    model = UtilityModel("tchebychev", tuple(sample_theta(2, rng)))
    idx = pick_from_front(SimulatedDM(model), front_of(Y))
    assert idx == int(np.argmax(a * utility(Y, model) + b))


def test_final_pick_examples():
    dm = SimulatedDM(UtilityModel("tchebychev", (0.5, 0.5)))
    X = np.arange(6.0).reshape(3, 2)
    idx, x, y = final_pick(dm, X, np.ones((3, 2)))
    assert idx == 0
    # (2,2) is dominated; a linear DM with weight on f2 alone would like it as much, yet it is filtered
    idx, _, y = final_pick(SimulatedDM(UtilityModel("linear", (0.5, 0.5))), X[:2], [(2.0, 2.0), (1.0, 1.0)])
    assert idx == 1 and tuple(y) == (1.0, 1.0)


def test_final_pick_vs_exhaustive():
    rng = np.random.default_rng(0)
    for _ in range(50):
        Y = rng.uniform(0, 4, (5, 2))
        model = UtilityModel("tchebychev", tuple(sample_theta(2, rng)))
        idx, _, _ = final_pick(SimulatedDM(model), rng.random((5, 2)), Y)
        u = [utility(y, model) for y in Y]
        assert u[idx] == max(u)
        assert non_dominated_mask(Y)[idx]


def test_final_pick_shuffle_invariant():
    rng = np.random.default_rng(1)
    Y = rng.uniform(0, 4, (40, 2))
    X = rng.random((40, 2))
    dm = SimulatedDM(UtilityModel("linear", (0.3, 0.7)))
    _, x0, y0 = final_pick(dm, X, Y)
    for _ in range(10):
        perm = rng.permutation(40)
        _, x1, y1 = final_pick(dm, X[perm], Y[perm])
        np.testing.assert_array_equal(x0, x1)
        np.testing.assert_array_equal(y0, y1)


def test_final_pick_rejects_interactive():
    with pytest.raises(TypeError):
        final_pick(InteractiveDM(), np.zeros((1, 2)), np.zeros((1, 2)))


def test_reference_best_pol_analytic():
    r = compute_reference_best(POL, UtilityModel("linear", (0.0, 1.0)), cache_dir=False)
    assert r.u_star == pytest.approx(0.0, abs=1e-10)
    np.testing.assert_allclose(r.x_star, (-3.0, -1.0), atol=1e-5)
    r = compute_reference_best(POL, UtilityModel("linear", (1.0, 0.0)), cache_dir=False)
    assert r.u_star == pytest.approx(-1.0, abs=1e-10)


def test_reference_best_hole2_golden():
    model = UtilityModel("tchebychev", (0.5, 0.5))
    r = compute_reference_best(HOLE2, model, cache_dir=False)
    _, grid_u = _grid_search(HOLE2, model, 1001, 1)
    assert r.u_star >= grid_u[0]
    assert r.u_star == pytest.approx(HOLE2_TCH_HALF_USTAR, abs=1e-9)
    assert utility(HOLE2.evaluate(np.array(r.x_star)), model) == pytest.approx(r.u_star, abs=1e-12)


def test_reference_best_beats_random_probes():
    rng = np.random.default_rng(3)
    model = UtilityModel("tchebychev", tuple(sample_theta(2, rng)))
    r = compute_reference_best(POL, model, grid=301)
    probes = rng.uniform(-np.pi, np.pi, (20_000, 2))
    assert r.u_star >= utility(POL.evaluate(probes), model).max()


def test_reference_cache(tmp_path):
    model = UtilityModel("tchebychev", (0.3, 0.7))
    a = compute_reference_best(POL, model, grid=101, cache_dir=tmp_path)
    files = list(tmp_path.glob("*.json"))
    assert len(files) == 1
    assert set(json.loads(files[0].read_text())) == {"problem", "kind", "theta", "rho", "u_star", "x_star"}
    # a hit is read back rather than recomputed
    doctored = a.to_dict() | {"u_star": a.u_star + 1.0}
    files[0].write_text(json.dumps(doctored))
    assert compute_reference_best(POL, model, grid=101, cache_dir=tmp_path).u_star == a.u_star + 1.0
    assert ReferenceBest.from_dict(a.to_dict()) == a


def test_reference_needs_two_dimensions():
    from dataclasses import replace

    with pytest.raises(ValueError):
        compute_reference_best(replace(POL, D=3), UtilityModel("linear", (0.5, 0.5)), cache_dir=False)


def test_opportunity_cost_examples():
    model = UtilityModel("linear", (0.0, 1.0))
    ref = compute_reference_best(POL, model)
    assert opportunity_cost(ref, POL.evaluate(np.array(ref.x_star)), model) == pytest.approx(0.0, abs=1e-9)
    y00 = POL.evaluate(np.array([0.0, 0.0]))
    assert y00[1] == 10.0
    assert opportunity_cost(ref, y00, model) == pytest.approx(10.0, abs=1e-9)


def test_opportunity_cost_nonnegative_on_random_points():
    rng = np.random.default_rng(4)
    for kind in ("tchebychev", "linear"):
        model = UtilityModel(kind, tuple(sample_theta(2, rng)))
        ref = compute_reference_best(HOLE2, model)
        Y = HOLE2.evaluate(rng.uniform(-1, 1, (2000, 2)))
        assert min(opportunity_cost(ref, y, model) for y in Y) >= -1e-9


def test_opportunity_cost_guards():
    ref = ReferenceBest("POL", "linear", (0.5, 0.5), 0.05, -5.0, (0.0, 0.0))
    with pytest.raises(ValueError, match="stale"):
        opportunity_cost(ref, (1.0, 1.0))
    with pytest.raises(ValueError, match="does not match"):
        opportunity_cost(ref, (9.0, 9.0), UtilityModel("linear", (0.4, 0.6)))


def test_interactive_rendezvous_exactly_once():
    dm = InteractiveDM(timeout=5)
    with pytest.raises(NotAwaiting):
        dm.deliver(0)
    front = front_of([(1, 3), (2, 2), (3, 1)])
    got = []
    t = threading.Thread(target=lambda: got.append(pick_from_front(dm, front)))
    t.start()
    while not dm.awaiting:
        pass
    with pytest.raises(IndexError):
        dm.deliver(3)
    outcomes = []

    def attempt(i):
        try:
            dm.deliver(i)
            outcomes.append(("ok", i))
        except AlreadyPicked:
            outcomes.append(("dup", i))

    threads = [threading.Thread(target=attempt, args=(i % 3,)) for i in range(16)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    t.join(5)
    oks = [i for kind, i in outcomes if kind == "ok"]
    assert len(oks) == 1 and got == oks
    assert not dm.awaiting


def test_interactive_timeouts():
    with pytest.raises(TimeoutError, match="without an attached UI"):
        pick_from_front(InteractiveDM(timeout=0), front_of([(1, 1)]))
    with pytest.raises(TimeoutError):
        pick_from_front(InteractiveDM(timeout=0.05), front_of([(1, 1)]))
