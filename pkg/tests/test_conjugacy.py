import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from conftest import sin_pert
from dicholin import (
    BiSeq,
    ConjugacyProblem,
    ContractionError,
    DenseMatrix,
    Embed,
    H,
    Hbar,
    MatrixProjections,
    NonlinearSystem,
    OrbitOverflowError,
    PerturbationSequence,
    Sin,
    SmallnessError,
    UnverifiedCertificateError,
    WindowedSequence,
    certify,
    conjugacy_residual,
    inverse_residual,
    make_dimension_exchange,
    make_nonuniqueness_witness,
    norm,
    range_check,
    range_distance,
    smallness_check,
    solve_h,
    solve_h_table,
    solve_hbar,
    truncation_window,
)

LN2 = math.log(2)

_G = make_dimension_exchange()
_SMALL = ConjugacyProblem(NonlinearSystem(_G.seq, sin_pert(0.02)), _G.cert, iter_tol=1e-13, depth=8)


def test_smallness_examples():
    assert smallness_check(0.0, 1.0, LN2) == (True, 0.0, pytest.approx(1 / 3))
    ok, q, cs = smallness_check(0.1, 1.0, LN2)
    assert ok and q == pytest.approx(0.3) and cs == pytest.approx(1 / 3)
    ok, q, _ = smallness_check(0.4, 1.0, LN2)
    assert not ok and q == pytest.approx(1.2)
    with pytest.raises(ValueError):
        smallness_check(0.1, 0.0, LN2)


def test_truncation_window_examples():
    assert truncation_window(1.0, LN2, 0.0, 1e-9) == 1
    assert truncation_window(1.0, LN2, 0.05, 1e-9) == 27
    assert truncation_window(1.0, LN2, 0.05, 1e-6) == 17


def test_problem_refuses_large_c(dimx):
    sys_ = NonlinearSystem(dimx.seq, sin_pert(0.4))
    with pytest.raises(SmallnessError, match=r"c\* = 0.333333"):
        ConjugacyProblem(sys_, dimx.cert)


def test_problem_refuses_unverified(dimx):
    bad = certify(dimx.seq, dimx.proj, (-5, 5), 1.0, 1.0)
    with pytest.raises(UnverifiedCertificateError):
        ConjugacyProblem(NonlinearSystem(dimx.seq, sin_pert(0.02)), bad)


def test_zero_perturbation_exact(dimx_zero):
    for n, x in [(-3, [1.0, 2.0]), (0, [0.5, -0.1]), (4, [-2.0, 0.0])]:
        t = solve_h_table(dimx_zero, n, np.array(x))
        assert t.iterations == 1 and norm(t.center) == 0.0
        assert norm(solve_hbar(dimx_zero, n, np.array(x))[0]) == 0.0
        assert conjugacy_residual(dimx_zero, n, np.array(x)) == 0.0
        assert inverse_residual(dimx_zero, n, np.array(x)) == (0.0, 0.0)
        assert range_check(dimx_zero, n, np.array(x)) == 0.0


def test_scalar_closed_form_point(scalar_prob, frozen):
    h, err = solve_h(scalar_prob, 0, np.array([0.0]))
    assert h[0] == 0.0 and frozen["scalar_t"] == 0.0
    assert solve_hbar(scalar_prob, 0, np.array([0.0]))[0][0] == 0.0


def test_scalar_inverse_composition(scalar_prob):
    x = np.array([1.0])
    assert norm(Hbar(scalar_prob, 0, H(scalar_prob, 0, x)) - x) <= scalar_prob.inverse_bound
    r1, r2 = inverse_residual(scalar_prob, 0, x)
    assert max(r1, r2) <= scalar_prob.inverse_bound


def test_scalar_conjugacy_residual(scalar_prob):
    assert conjugacy_residual(scalar_prob, 0, np.array([1.0])) <= 4 * scalar_prob.h_err_bound


@pytest.mark.parametrize("key,which", [("scalar_h_N8", "scalar"), ("dimension_exchange_h_N8", "dimx")])
def test_frozen_truncated_fixed_points(key, which, frozen, scalar, dimx):
    gen, amp = (scalar, 0.05) if which == "scalar" else (dimx, 0.02)
    sys_ = NonlinearSystem(gen.seq, sin_pert(amp, dim=gen.seq.space.dim))
    prob = ConjugacyProblem(sys_, gen.cert, iter_tol=1e-13, depth=8)
    for row in frozen[key]:
        h, _ = solve_h(prob, row["n"], np.array(row["x"]))
        assert np.allclose(h, row["h"], rtol=0, atol=1e-12)


def test_dimension_exchange_solve_example(dimx_prob):
    x = np.array([1.0, 1.0])
    h, err = solve_h(dimx_prob, -1, x)
    assert h[1] == 0.0
    assert conjugacy_residual(dimx_prob, -1, x) <= err


def test_dimension_exchange_batches(dimx_prob):
    rng = np.random.default_rng(11)
    for _ in range(50):
        n = int(rng.integers(-15, 16))
        x = rng.uniform(-2, 2, 2)
        assert conjugacy_residual(dimx_prob, n, x) <= 4 * dimx_prob.h_err_bound
    for _ in range(20):
        n = int(rng.integers(-15, 16))
        x = rng.uniform(-2, 2, 2)
        assert max(inverse_residual(dimx_prob, n, x)) <= dimx_prob.inverse_bound


def test_range_check_examples(dimx, dimx_prob):
    rng = np.random.default_rng(2)
    for _ in range(10):
        x = rng.uniform(-2, 2, 2)
        h, _ = solve_h(dimx_prob, -1, x)
        assert range_check(dimx_prob, -1, x) == pytest.approx(abs(h[1]), abs=1e-15)
        assert range_check(dimx_prob, -1, x) <= 1e-10
        for n in (-2, -5):
            assert range_check(dimx_prob, n, x) == 0.0


def test_range_distance_direct(dimx):
    assert range_distance(dimx.seq, dimx.proj, -1, np.array([3.0, 0.5])) == pytest.approx(0.5)
    assert range_distance(dimx.seq, dimx.proj, 5, np.array([3.0, 0.5])) == pytest.approx(0.0, abs=1e-15)


def test_range_distance_sparse(shift):
    # stable part at 0 is j <= 0; A_0^{-1} of the unstable part at 1 is j >= 2
    v = BiSeq({-1: 1.0, 1: 0.25, 2: 3.0})
    assert range_distance(shift.seq, shift.proj, 0, v) == pytest.approx(0.25)


def test_picard_rate_and_uniform_bound(dimx_prob):
    rng = np.random.default_rng(4)
    q = dimx_prob.q
    for _ in range(20):
        n = int(rng.integers(-10, 11))
        t = solve_h_table(dimx_prob, n, rng.uniform(-2, 2, 2))
        assert all(r <= q + 0.05 for r in t.rates())
        assert norm(t.center) <= dimx_prob.uniform_bound + dimx_prob.h_err_bound


def test_uniqueness_from_random_tables(dimx_prob):
    x = np.array([0.7, -1.1])
    base = solve_h_table(dimx_prob, -2, x)
    rng = np.random.default_rng(9)
    for _ in range(10):
        init = rng.uniform(-1, 1, base.values.shape)
        t = solve_h_table(dimx_prob, -2, x, init=init)
        assert norm(t.center - base.center) <= 10 * dimx_prob.iter_tol


def test_overflow_is_reported(dimx):
    prob = ConjugacyProblem(NonlinearSystem(dimx.seq, sin_pert(0.02)), dimx.cert, depth=300)
    with pytest.raises(OrbitOverflowError, match="backward"):
        solve_h(prob, 0, np.array([1.0, 0.0]))


def test_hbar_refuses_without_backward_contraction(dimx):
    # large growth: q < 1 while c e^rho >= 1
    seq = WindowedSequence(0, [DenseMatrix(np.diag([1 / 64, 64.0]))])
    cert = certify(seq, MatrixProjections.constant(np.diag([1.0, 0.0])), (-5, 5), 1.0, math.log(64))
    prob = ConjugacyProblem(NonlinearSystem(seq, sin_pert(0.02)), cert)
    assert prob.q < 1 and prob.sys.backward_factor >= 1
    with pytest.raises(ContractionError):
        solve_hbar(prob, 0, np.ones(2))


def test_sparse_shift_conjugacy(shift):
    pert = PerturbationSequence(Embed(Sin(0, 0.02), {0: 0.6, 1: 0.8}), 0.02, 0.02)
    prob = ConjugacyProblem(NonlinearSystem(shift.seq, pert), shift.cert)
    rng = np.random.default_rng(6)
    seen_nonzero = False
    for _ in range(6):
        n = int(rng.integers(-4, 5))
        x = BiSeq(zip(range(-2, 3), rng.uniform(-1, 1, 5).tolist()))
        h, _ = solve_h(prob, n, x)
        seen_nonzero |= norm(h) > 0
        assert conjugacy_residual(prob, n, x) <= 4 * prob.h_err_bound
        assert max(inverse_residual(prob, n, x)) <= prob.inverse_bound
        assert range_check(prob, n, x) <= prob.h_err_bound
    assert seen_nonzero


def test_nonuniqueness_without_range_condition(dimx, dimx_zero):
    w = make_nonuniqueness_witness(dimx.seq, dimx.proj, np.array([0.0, 1.0]))
    rng = np.random.default_rng(0)
    for _ in range(20):
        n = int(rng.integers(-10, 10))
        x = rng.uniform(-2, 2, 2)
        assert w.residual(n, x) == 0.0
        # the canonical solution is the identity here
        assert norm(H(dimx_zero, n, x) - x) == 0.0
    assert w.sup_norm == 1.0
    assert range_distance(dimx.seq, dimx.proj, -1, w.shift(-1)) == pytest.approx(0.5)


@settings(max_examples=15)
@given(st.integers(-6, 6), st.lists(st.floats(-2, 2, allow_nan=False), min_size=2, max_size=2))
def test_oracle_equivalence_property(n, x):
    prob = _SMALL
    x = np.array(x)
    ts = oracles.TruncatedSystem(
        oracles.dimension_exchange_A, oracles.dimension_exchange_P,
        lambda v: np.array([0.02 * math.sin(v[0]), 0.0]), n, x, 8,
    )
    ref = ts.center(ts.damped(np.zeros(ts.C * 2)))
    assert norm(solve_h(prob, n, x)[0] - ref) <= 1e-9
