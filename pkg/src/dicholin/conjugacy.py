"""Construction of the conjugacies ``H_n = Id + h_n`` and their inverses.

``h_n(x)`` is the fixed point of the map

    (T h)_m(x_m) = sum_{k<=m} A(m,k) P_k f_{k-1}(x_{k-1} + h_{k-1}(x_{k-1}))
                 - sum_{k>m}  A(m,k) (I-P_k) f_{k-1}(x_{k-1} + h_{k-1}(x_{k-1}))

which only ever consults ``h`` along the linear orbit ``x_m = A(m,n) x``. A
query therefore solves a finite contraction on a table of orbit slots
``[n - 2N, n + 2N]``, where ``N`` is the truncation depth making each discarded
one-sided tail at most ``tail_tol``.

``hbar_n(x)`` needs no iteration: it is the same Green operator applied to
``-f_{k-1}`` evaluated along the *nonlinear* orbit ``F(k-1, n) x``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
import scipy.linalg

from .cocycle import DenseSpace, SequenceSpace, orbit
from .dichotomy import DichotomyCertificate, _dense_stacks, green_sums, truncation_depth
from .linops import BiSeq, ConvergenceError, ScaledIdentity, WeightedShift, as_vector, norm
from .perturbation import ContractionError, NonlinearSystem, inverse_step

__all__ = [
    "SmallnessResult",
    "SmallnessError",
    "OrbitOverflowError",
    "smallness_check",
    "truncation_window",
    "ConjugacyProblem",
    "OrbitTable",
    "solve_h_table",
    "solve_h",
    "solve_hbar",
    "H",
    "Hbar",
    "conjugacy_residual",
    "inverse_residual",
    "range_distance",
    "range_check",
]

OVERFLOW_LIMIT = 1e150
PICARD_MAX_ITER = 1000


class SmallnessResult(NamedTuple):
    passed: bool
    q: float
    c_star: float


class SmallnessError(ValueError):
    def __init__(self, result: SmallnessResult, c: float):
        super().__init__(
            f"contraction factor q = {result.q:.6g} >= 1 for c = {c:g}; "
            f"the smallness threshold is c* = {result.c_star:.6g}"
        )
        self.result = result


class OrbitOverflowError(ArithmeticError):
    pass


def smallness_check(c: float, D: float, lam: float) -> SmallnessResult:
    """``q = c D (1 + e^{-lam}) / (1 - e^{-lam})``; passes iff ``q < 1``."""
    if D <= 0 or lam <= 0 or c < 0:
        raise ValueError("need D > 0, lambda > 0, c >= 0")
    r = math.exp(-lam)
    gain = D * (1.0 + r) / (1.0 - r)
    q = c * gain
    return SmallnessResult(q < 1.0, q, 1.0 / gain)


def truncation_window(D: float, lam: float, M: float, tail_tol: float) -> int:
    """Smallest ``N >= 1`` with ``D M e^{-lam N} / (1 - e^{-lam}) <= tail_tol``."""
    return truncation_depth(D, lam, M, tail_tol)


class ConjugacyProblem:
    """Nonlinear system plus verified dichotomy plus solver tolerances."""

    def __init__(
        self,
        sys: NonlinearSystem,
        cert: DichotomyCertificate,
        tail_tol: float = 1e-9,
        iter_tol: float = 1e-10,
        depth: int | None = None,
        inverse_tol: float | None = None,
    ):
        cert.require()
        if type(sys.seq.space) is not type(cert.seq.space):
            raise ValueError("system and certificate live in different state spaces")
        if tail_tol <= 0 or iter_tol <= 0:
            raise ValueError("tolerances must be positive")
        self.sys = sys
        self.cert = cert
        self.tail_tol = float(tail_tol)
        self.iter_tol = float(iter_tol)
        self.inverse_tol = float(inverse_tol if inverse_tol is not None else iter_tol)
        self.smallness = smallness_check(sys.c, cert.D, cert.lam)
        if not self.smallness.passed:
            raise SmallnessError(self.smallness, sys.c)
        self.N = int(depth) if depth is not None else truncation_window(cert.D, cert.lam, sys.pert.M, tail_tol)
        if self.N < 1:
            raise ValueError("truncation depth must be at least 1")

    @property
    def seq(self):
        return self.sys.seq

    @property
    def proj(self):
        return self.cert.proj

    @property
    def q(self) -> float:
        return self.smallness.q

    @property
    def p(self) -> float:
        return self.sys.p

    @property
    def dense(self) -> bool:
        return isinstance(self.seq.space, DenseSpace)

    @property
    def h_err_bound(self) -> float:
        return self.iter_tol + 2.0 * self.tail_tol / (1.0 - self.q)

    @property
    def hbar_err_bound(self) -> float:
        """Two tails plus backward-solve errors carried through the stable sum.

        A point ``d`` inverse steps back carries at most
        ``tol * sum_{i<d} L^i`` with ``L = e^rho / (1 - c e^rho)``; it enters
        the series with weight ``D c e^{-lam (d-1)}``.
        """
        sys, cert = self.sys, self.cert
        if sys.c == 0.0:
            return 2.0 * self.tail_tol
        back = sys.backward_factor
        if back >= 1.0:
            return math.inf
        L = math.exp(sys.rho) / (1.0 - back)
        prop, carried = 0.0, 0.0
        for d in range(1, self.N + 2):
            carried = carried * L + self.inverse_tol
            prop += cert.D * sys.c * math.exp(-cert.lam * (d - 1)) * carried
        return 2.0 * self.tail_tol + prop

    @property
    def inverse_bound(self) -> float:
        """Acceptance bound used for both compositions ``Hbar o H`` and ``H o Hbar``."""
        return 4.0 * (self.h_err_bound + self.hbar_err_bound)

    @property
    def uniform_bound(self) -> float:
        """Sup bound on ``|h_n|``: ``D M (1 + e^{-lam}) / (1 - e^{-lam})``."""
        r = math.exp(-self.cert.lam)
        return self.cert.D * self.sys.pert.M * (1.0 + r) / (1.0 - r)


@dataclass
class OrbitTable:
    """Per-query state of the Picard iteration."""

    n: int
    x: object
    lo: int
    hi: int
    points: object
    values: object
    changes: list = field(default_factory=list)

    @property
    def center(self):
        return self.values[self.n - self.lo]

    @property
    def iterations(self) -> int:
        return len(self.changes)

    def rates(self, floor: float = 1e-13) -> list[float]:
        """Ratios of consecutive sup-changes, skipping changes at round-off level."""
        c = self.changes
        return [c[i] / c[i - 1] for i in range(1, len(c)) if c[i - 1] > floor]


def _orbit_points(prob, n, x, lo, hi):
    try:
        pts = orbit(prob.seq, n, x, lo, hi, limit=OVERFLOW_LIMIT, p=prob.p)
    except OverflowError as exc:
        raise OrbitOverflowError(str(exc)) from exc
    return [pts[m] for m in range(lo, hi + 1)]


def _sup_change(new, old, p, dense):
    if dense:
        return float(np.linalg.norm(new - old, ord=p, axis=1).max())
    return max(norm(a - b, p) for a, b in zip(new, old))


def solve_h_table(prob: ConjugacyProblem, n: int, x, init=None, max_iter: int = PICARD_MAX_ITER) -> OrbitTable:
    """Picard iteration for ``h`` on the orbit table of ``(n, x)``.

    The unknowns are ``h_m(x_m)`` for the core slots ``m in [n-N, n+N]``.
    Orbit points are materialised on ``[n-2N, n+2N]`` so every core series
    has a full window; ``h`` stays 0 on the outer slots, whose effect on the
    centre is within the tail budget. Keeping the unknowns off the outer
    slots also keeps the iteration away from orbit points of size
    ``e^{2 rho N}``, where ``x_m + h_m`` cannot resolve ``h_m``.

    ``init`` optionally seeds the core values (array of shape (2N+1, d) for
    dense spaces, list of vectors otherwise); the default is zero.
    """
    x = as_vector(x)
    prob.seq.space.check(x)
    N = prob.N
    lo, hi = n - 2 * N, n + 2 * N
    core = slice(N, 3 * N + 1)
    times = list(range(lo, hi + 1))
    pts = _orbit_points(prob, n, x, lo, hi)
    pert, p = prob.sys.pert, prob.p
    stop = prob.iter_tol * (1.0 - prob.q)
    if prob.dense:
        X = np.array(pts)
        stacks = _dense_stacks(prob.seq, prob.proj, lo, hi)
        Hfull = np.zeros_like(X)
        if init is not None:
            Hfull[core] = np.array(init, dtype=float).reshape(Hfull[core].shape)
        step = lambda: green_sums(prob.seq, prob.proj, lo, hi, pert.eval_many(times, X + Hfull), stacks)[core]
    else:
        X = pts
        Hfull = [BiSeq()] * len(X)
        if init is not None:
            init = list(init)
            if len(init) != 2 * N + 1:
                raise ValueError(f"init must have {2 * N + 1} entries")
            Hfull[core] = init
        step = lambda: green_sums(prob.seq, prob.proj, lo, hi, [pert(t, a + b) for t, a, b in zip(times, X, Hfull)])[core]
    table = OrbitTable(n, x, n - N, n + N, X[core], Hfull[core])
    for _ in range(max_iter):
        new = step()
        change = _sup_change(new, table.values, p, prob.dense)
        table.values = new
        Hfull[core] = new
        table.changes.append(change)
        if change <= stop:
            return table
    raise ConvergenceError(f"Picard iteration for h_{n} did not reach {stop:.3e} in {max_iter} steps", table)


def solve_h(prob: ConjugacyProblem, n: int, x):
    """``(h_n(x), err_bound)``."""
    return solve_h_table(prob, n, x).center, prob.h_err_bound


def _nonlinear_orbit(prob, n, x, lo, hi):
    sys = prob.sys
    z = {n: x}
    v = x
    for k in range(n, hi):
        v = sys.F(k, v)
        if norm(v, prob.p) > OVERFLOW_LIMIT:
            raise OrbitOverflowError(f"forward nonlinear orbit from time {n} exceeds {OVERFLOW_LIMIT:g} at time {k + 1}")
        z[k + 1] = v
    v = x
    for k in range(n - 1, lo - 1, -1):
        v = inverse_step(sys, k, v, prob.inverse_tol)
        if norm(v, prob.p) > OVERFLOW_LIMIT:
            raise OrbitOverflowError(f"backward nonlinear orbit from time {n} exceeds {OVERFLOW_LIMIT:g} at time {k}")
        z[k] = v
    return [z[m] for m in range(lo, hi + 1)]


def solve_hbar(prob: ConjugacyProblem, n: int, x):
    """``(hbar_n(x), err_bound)`` from the truncated explicit series."""
    x = as_vector(x)
    prob.seq.space.check(x)
    sys = prob.sys
    if sys.backward_factor >= 1.0:
        raise ContractionError(
            f"hbar needs c*e^rho < 1, got c={sys.c:g}, rho={sys.rho:g}, c*e^rho={sys.backward_factor:g}"
        )
    N = prob.N
    lo, hi = n - N - 1, n + N - 1
    times = list(range(lo, hi + 1))
    Z = _nonlinear_orbit(prob, n, x, lo, hi)
    if prob.dense:
        G = sys.pert.eval_many(times, np.array(Z))
    else:
        G = [sys.pert(t, z) for t, z in zip(times, Z)]
    xs = green_sums(prob.seq, prob.proj, lo, hi, G)
    return -xs[n - lo], prob.hbar_err_bound


def H(prob: ConjugacyProblem, n: int, x):
    x = as_vector(x)
    return x + solve_h(prob, n, x)[0]


def Hbar(prob: ConjugacyProblem, n: int, x):
    x = as_vector(x)
    return x + solve_hbar(prob, n, x)[0]


def conjugacy_residual(prob: ConjugacyProblem, n: int, x) -> float:
    """``|H_{n+1}(A_n x) - (A_n + f_n)(H_n(x))|``."""
    x = as_vector(x)
    lhs = H(prob, n + 1, prob.seq[n].apply(x))
    rhs = prob.sys.F(n, H(prob, n, x))
    return norm(lhs - rhs, prob.p)


def inverse_residual(prob: ConjugacyProblem, n: int, x) -> tuple[float, float]:
    """``(|Hbar_n(H_n x) - x|, |H_n(Hbar_n x) - x|)``."""
    x = as_vector(x)
    r1 = norm(Hbar(prob, n, H(prob, n, x)) - x, prob.p)
    r2 = norm(H(prob, n, Hbar(prob, n, x)) - x, prob.p)
    return r1, r2


def range_distance(seq, proj, n: int, v, p=2) -> float:
    """Distance from ``v`` to ``S(n) + A_n^{-1} U(n+1)``.

    Dense: orthogonal projection onto an SVD basis of the assembled spanning
    set, residual measured in the p-norm. Returns ``nan`` when the spanning
    set has singular values in the ambiguous band (1e-12, 1e-6) relative to
    the largest, i.e. its rank is not numerically determined.
    Sequence spaces: the mass of ``v`` outside the union of index sets.
    """
    v = as_vector(v)
    if isinstance(seq.space, DenseSpace):
        d = seq.space.dim
        P0 = proj.matrix(n)
        Q1 = np.eye(d) - proj.matrix(n + 1)
        B = np.concatenate([P0, seq[n].inverse_matrix(d) @ Q1], axis=1)
        U, s, _ = scipy.linalg.svd(B, full_matrices=False)
        if s.size == 0 or s[0] == 0.0:
            return norm(v, p)
        rel = s / s[0]
        if np.any((rel > 1e-12) & (rel < 1e-6)):
            return math.nan
        Qb = U[:, rel >= 1e-6]
        return norm(v - Qb @ (Qb.T @ v), p)
    op = seq[n]
    if isinstance(op, WeightedShift):
        pre = lambda j: j - 1
    elif isinstance(op, ScaledIdentity):
        pre = lambda j: j
    else:
        return math.nan
    keep = lambda j: proj.keep(n, j) or not proj.keep(n + 1, pre(j))
    return BiSeq._wrap({j: a for j, a in v.items() if not keep(j)}).norm(p)


def range_check(prob: ConjugacyProblem, n: int, x) -> float:
    """Distance of ``h_n(x) = H_n(x) - x`` to ``S(n) + A_n^{-1} U(n+1)``."""
    h, _ = solve_h(prob, n, x)
    return range_distance(prob.seq, prob.proj, n, h, prob.p)
