import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from selfref.retrieval import ReferenceWindow
from selfref.rewards import AptReward, CountGridReward, RndReward, make_intrinsic


def test_count_first_visit_and_after_three():
    r = CountGridReward()
    s = np.array([0.33, -0.41, 0.0, 0.0])
    assert r.reward(s) == 1.0
    for _ in range(3):
        r.observe(s)
    assert r.reward(s) == 0.5


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(-1, 1), st.floats(-1, 1)), min_size=1, max_size=30))
def test_count_monotone_and_local(points):
    r = CountGridReward()
    probe = np.array([0.95, 0.95])
    probe_cell = r.cells(probe[None, :])
    last = r.reward(probe)
    for p in points:
        p = np.array(p)
        before_probe = r.reward(probe)
        r.observe(p)
        if r.cells(p[None, :]) == probe_cell:
            assert r.reward(probe) < before_probe
        else:
            assert r.reward(probe) == before_probe
        assert r.reward(probe) <= last
        last = r.reward(probe)


def test_count_reward_is_pure_until_observe():
    r = CountGridReward()
    s = np.zeros((5, 4))
    np.testing.assert_array_equal(r.reward(s), r.reward(s))
    assert r.counts.sum() == 0


def test_apt_identical_particles_zero():
    r = AptReward()
    s = np.array([0.2, -0.3, 0.1, 0.0])
    for _ in range(20):
        r.observe(s)
    assert r.reward(s) == 0.0


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 40), st.integers(0, 2**31 - 1))
def test_apt_nonnegative_and_zero_iff_coincident(n, seed):
    rng = np.random.default_rng(seed)
    r = AptReward(k=3, capacity=64)
    pts = rng.standard_normal((n, 2))
    for p in pts:
        r.observe(p)
    probe = rng.standard_normal(2)
    assert r.reward(probe) > 0
    nearest = r.particles()[np.argsort(np.linalg.norm(r.particles() - pts[0], axis=1))[: min(3, n)]]
    coincide = np.all(nearest == pts[0])
    assert (r.reward(pts[0]) == 0.0) == coincide


def test_apt_fifo_capacity():
    r = AptReward(k=1, capacity=3)
    for x in range(5):
        r.observe(np.array([float(x)]))
    np.testing.assert_array_equal(r.particles()[:, 0], [2, 3, 4])
    assert r.reward(np.array([0.0])) == pytest.approx(np.log1p(2.0))


def test_apt_reads_window_when_given():
    w = ReferenceWindow(100)
    w.append_states(np.array([[0.0, 0.0], [1.0, 0.0]]), 0)
    r = make_intrinsic("apt_knn", 2, window=w)
    r.observe(np.array([5.0, 5.0]))  # ignored: the window is the particle source
    assert r.reward(np.array([0.0, 0.0])) == pytest.approx(np.log1p(0.5))


def test_rnd_learns_on_seen_states_only():
    r = RndReward(4, seed=0, lr=1e-3)
    rng = np.random.default_rng(0)
    seen = rng.standard_normal((64, 4))
    target_before = r.target.state_dict()
    start = r.reward(seen).mean()
    for _ in range(200):
        r.update(seen)
    assert r.reward(seen).mean() < 0.5 * start
    assert np.all(r.reward(seen) >= 0)
    for k, v in r.target.state_dict().items():
        np.testing.assert_array_equal(v, target_before[k])
    assert r.predictor(seen).shape == (64, 8)


def test_unknown_intrinsic():
    with pytest.raises(ValueError):
        make_intrinsic("icm", 4)
