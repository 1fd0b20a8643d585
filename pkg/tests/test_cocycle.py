import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from dicholin import (
    BiSeq,
    ConstantSequence,
    DenseMatrix,
    ItinerarySequence,
    ShapeError,
    WeightedShift,
    WindowedSequence,
    global_growth_bound,
    make_dimension_exchange,
    growth_bound,
    norm,
    orbit,
    transition,
)


@pytest.fixture(scope="module")
def seq(dimx):
    return dimx.seq


def test_identity_at_equal_times(seq):
    v = np.array([0.3, -1.2])
    for n in range(-5, 6):
        assert np.array_equal(transition(seq, n, n, v), v)


def test_hand_products(seq, frozen):
    assert np.allclose(transition(seq, 2, -1, np.ones(2)), frozen["transition_2_m1"], rtol=0, atol=1e-15)
    assert np.allclose(transition(seq, -2, 0, np.ones(2)), frozen["transition_m2_0"], rtol=0, atol=1e-15)
    assert np.allclose(frozen["transition_2_m1"], [1 / 8, 1 / 2])
    assert np.allclose(frozen["transition_m2_0"], [4, 1 / 4])


def test_matches_explicit_matrix_products(seq):
    rng = np.random.default_rng(0)
    for _ in range(30):
        m, n = rng.integers(-8, 9, 2)
        v = rng.standard_normal(2)
        ref = oracles.cocycle(oracles.dimension_exchange_A, int(m), int(n)) @ v
        assert np.allclose(transition(seq, int(m), int(n), v), ref, rtol=1e-14, atol=1e-14)


def test_growth_bounds(seq):
    ident = ConstantSequence(DenseMatrix(np.eye(2)))
    assert growth_bound(ident, (-3, 3)) == 0.0
    assert growth_bound(seq, (-5, 5)) == pytest.approx(math.log(2))
    assert growth_bound(seq, (-1, -1)) == pytest.approx(math.log(2))
    assert growth_bound(ConstantSequence(DenseMatrix(np.diag([0.5, 2.0]))), (0, 3)) == pytest.approx(math.log(2))
    assert global_growth_bound(seq) == pytest.approx(math.log(2))
    with pytest.raises(ValueError):
        growth_bound(seq, (3, 2))


def test_windowed_extension():
    a, b = DenseMatrix([[2.0]]), DenseMatrix([[3.0]])
    w = WindowedSequence(0, [a, b])
    assert w[-100] is a and w[0] is a and w[1] is b and w[100] is b


def test_itinerary_periodic():
    a, b = DenseMatrix([[2.0]]), DenseMatrix([[3.0]])
    it = ItinerarySequence.periodic([a, b], [0, 1, 1])
    assert [it.letter(n) for n in range(-3, 3)] == [0, 1, 1, 0, 1, 1]
    with pytest.raises(ValueError):
        ItinerarySequence.periodic([a], [0, 1])


def test_shift_transition_is_exact():
    S = ConstantSequence(WeightedShift(lambda n: 2.0 if n >= 1 else 0.5, (0.5, 2.0)))
    assert transition(S, 3, 0, BiSeq.delta(0)) == BiSeq({-3: 0.125})
    assert transition(S, -3, 0, BiSeq.delta(0)) == BiSeq({3: 0.125})


def test_space_mismatch(seq):
    with pytest.raises(ShapeError):
        transition(seq, 1, 0, np.ones(3))


def test_orbit_overflow(seq):
    with pytest.raises(OverflowError, match="backward"):
        orbit(seq, 0, np.array([1.0, 0.0]), -600, 0, limit=1e150)


_SEQ = make_dimension_exchange().seq
times = st.integers(-12, 12)
vecs = st.lists(st.floats(-10, 10, allow_nan=False), min_size=2, max_size=2).map(np.array)


@given(times, times, times, vecs)
def test_cocycle_law(m, k, n, v):
    seq = _SEQ
    lhs = transition(seq, m, k, transition(seq, k, n, v))
    rhs = transition(seq, m, n, v)
    assert norm(lhs - rhs) <= 1e-10 * (1 + norm(v))


@given(times, st.integers(-10, 10), vecs)
def test_growth_soundness(n, lag, v):
    seq = _SEQ
    if norm(v) == 0:
        return
    u = v / norm(v)
    rho = growth_bound(seq, (-25, 25))
    assert norm(transition(seq, n + lag, n, u)) <= math.exp(rho * abs(lag)) * (1 + 1e-10)

