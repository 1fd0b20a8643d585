"""Generalized exponential dichotomies on finite windows.

Subspaces are represented only through projections: ``S(n) = range P_n`` and
``U(n) = ker P_n``. Dense spaces use idempotent matrices, sequence spaces use
coordinate projectors given by an index predicate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .cocycle import DenseSpace, OperatorSequence, SequenceSpace, transition
from .linops import BiSeq, _matrix_norm, as_vector, check_p, norm, zeros_like

__all__ = [
    "ProjectionFamily",
    "MatrixProjections",
    "IndexProjections",
    "Check",
    "VerificationReport",
    "DichotomyCertificate",
    "UnverifiedCertificateError",
    "verify_dichotomy",
    "certify",
    "decay_profile",
    "fit_constants",
    "truncation_depth",
    "green_sums",
    "BoundedSolution",
    "bounded_solution",
    "OrbitWitness",
    "check_full_orbit_bounded",
]

SPLIT_TOL = 1e-12
NEST_TOL = 1e-10
DECAY_SLACK = 1e-9
EXHAUSTIVE_DIM = 32


class ProjectionFamily:
    """Rule ``n -> P_n`` with P_n a projection onto S(n) along U(n)."""

    def project(self, n: int, v):
        raise NotImplementedError

    def complement(self, n: int, v):
        return v - self.project(n, v)

    def norm(self, n: int, p=2) -> float:
        raise NotImplementedError


class MatrixProjections(ProjectionFamily):
    """Dense projections on a window, extended constantly on both sides."""

    def __init__(self, n_min: int, matrices: Sequence):
        mats = []
        for m in matrices:
            m = np.array(m, dtype=float)
            m.setflags(write=False)
            mats.append(m)
        if not mats:
            raise ValueError("need at least one projection matrix")
        self.n_min = int(n_min)
        self.mats = tuple(mats)
        self.dim = mats[0].shape[0]
        self._norms: dict = {}

    @classmethod
    def constant(cls, matrix):
        return cls(0, [matrix])

    def matrix(self, n: int) -> np.ndarray:
        i = min(max(n - self.n_min, 0), len(self.mats) - 1)
        return self.mats[i]

    def project(self, n, v):
        return self.matrix(n) @ v

    def norm(self, n, p=2):
        mat = self.matrix(n)
        key = (id(mat), check_p(p))
        if key not in self._norms:
            self._norms[key] = _matrix_norm(mat, key[1]) if mat.any() else 0.0
        return self._norms[key]

    def rank(self, n: int) -> int:
        return int(round(float(np.trace(self.matrix(n)))))


class IndexProjections(ProjectionFamily):
    """Coordinate projector keeping indices ``j`` with ``keep(n, j)``."""

    def __init__(self, keep: Callable[[int, int], bool]):
        self.keep = keep

    @classmethod
    def half_line(cls, threshold: Callable[[int], float] | float):
        """Keep ``j <= threshold(n)``; ``inf`` keeps everything (U = {0})."""
        rule = threshold if callable(threshold) else (lambda n, t=float(threshold): t)
        proj = cls(lambda n, j: j <= rule(n))
        proj.threshold = rule
        return proj

    def project(self, n, v):
        return BiSeq._wrap({j: x for j, x in v.items() if self.keep(n, j)})

    def complement(self, n, v):
        return BiSeq._wrap({j: x for j, x in v.items() if not self.keep(n, j)})

    def norm(self, n, p=2):
        # coordinate projectors have norm 1 in every l_p unless they are zero
        rule = getattr(self, "threshold", None)
        if rule is not None:
            return 0.0 if rule(n) == -math.inf else 1.0
        return 1.0 if any(self.keep(n, j) for j in range(-1000, 1001)) else 0.0


@dataclass
class Check:
    name: str
    passed: bool
    margin: float
    witness: tuple | None = None

    def to_dict(self):
        out = {"passed": self.passed, "margin": self.margin}
        if self.witness is not None:
            n, m, v = self.witness
            out["witness"] = {"n": n, "m": m, "vector": _vec_to_json(v)}
        return out


def _vec_to_json(v):
    if isinstance(v, BiSeq):
        return {str(j): x for j, x in v.to_dict().items()}
    return [float(x) for x in np.asarray(v)]


@dataclass
class VerificationReport:
    checks: dict[str, Check]
    projection_bound: float

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def failures(self) -> list[str]:
        return [name for name, c in self.checks.items() if not c.passed]

    def to_dict(self):
        return {
            "passed": self.passed,
            "projection_bound": self.projection_bound,
            "checks": {k: c.to_dict() for k, c in self.checks.items()},
        }


class UnverifiedCertificateError(ValueError):
    pass


@dataclass
class DichotomyCertificate:
    seq: OperatorSequence
    proj: ProjectionFamily
    D: float
    lam: float
    window: tuple[int, int]
    report: VerificationReport
    p: float = 2.0
    notes: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.report.passed

    def require(self):
        if not self.passed:
            raise UnverifiedCertificateError(
                f"dichotomy certificate (D={self.D}, lambda={self.lam}) failed: {self.report.failures()}"
            )
        return self


def _test_vectors(seq, proj, n, rng, samples):
    """Test vectors for S(n) and U(n): projected basis vectors, plus random
    combinations for dense spaces (random only above EXHAUSTIVE_DIM)."""
    space = seq.space
    if isinstance(space, DenseSpace):
        d = space.dim
        P = proj.matrix(n)
        Q = np.eye(d) - P
        cols = np.eye(d) if d <= EXHAUSTIVE_DIM else np.empty((d, 0))
        extra = rng.standard_normal((d, samples)) if samples else np.empty((d, 0))
        base = np.concatenate([cols, extra], axis=1)
        out = []
        for M in (P, Q):
            V = M @ base
            keep = np.linalg.norm(V, axis=0) > 1e-14
            out.append(V[:, keep])
        return out
    basis = space.basis()
    S = [v for v in basis if len(proj.project(n, v))]
    U = [v for v in basis if len(proj.complement(n, v))]
    return S, U


def _col_norms(V, p):
    return np.linalg.norm(V, ord=p, axis=0)


def decay_profile(seq, proj, window, p=2, samples=8, seed=0):
    """Worst-case growth ratio per lag on the window.

    Returns ``(stable, unstable)`` where ``stable[k] = (ratio, witness)`` is
    the largest ``|A(n+k, n) v| / |v|`` over ``v`` in S(n), and
    ``unstable[k]`` the largest ``|A(n-k, n) v| / |v|`` over ``v`` in U(n),
    for ``n, n +- k`` inside the window.
    """
    p = check_p(p)
    n0, n1 = window
    rng = np.random.default_rng(seed)
    span = n1 - n0
    stable = [(0.0, None)] * (span + 1)
    unstable = [(0.0, None)] * (span + 1)
    dense = isinstance(seq.space, DenseSpace)

    def bump(profile, k, r, wit):
        if r > profile[k][0]:
            profile[k] = (r, wit)

    for n in range(n0, n1 + 1):
        S, U = _test_vectors(seq, proj, n, rng, samples)
        if dense:
            for V, forward, profile in ((S, True, stable), (U, False, unstable)):
                if V.shape[1] == 0:
                    continue
                base = _col_norms(V, p)
                W = V.copy()
                steps = (n1 - n) if forward else (n - n0)
                for k in range(steps + 1):
                    if k:
                        m = n + k if forward else n - k
                        W = seq[m - 1].matrix(seq.space.dim) @ W if forward else seq[m].inverse_matrix(seq.space.dim) @ W
                    ratios = _col_norms(W, p) / base
                    i = int(np.argmax(ratios))
                    bump(profile, k, float(ratios[i]), (n, n + k if forward else n - k, V[:, i]))
        else:
            for vecs, forward, profile in ((S, True, stable), (U, False, unstable)):
                for v in vecs:
                    base = v.norm(p)
                    w = v
                    steps = (n1 - n) if forward else (n - n0)
                    for k in range(steps + 1):
                        if k:
                            m = n + k if forward else n - k
                            w = seq[m - 1].apply(w) if forward else seq[m].apply_inverse(w)
                        bump(profile, k, w.norm(p) / base, (n, n + k if forward else n - k, v))
    return stable, unstable


def verify_dichotomy(seq, proj, window, D, lam, samples=8, p=2, seed=0) -> VerificationReport:
    """Check splitting, nesting, both decay estimates and the projection bound
    on ``window``. Deterministic for a fixed ``seed``."""
    p = check_p(p)
    n0, n1 = window
    if n1 - n0 < 1:
        raise ValueError(f"window {window} must contain at least two times")
    if D <= 0 or lam <= 0:
        raise ValueError("D and lambda must be positive")
    rng = np.random.default_rng(seed)
    space = seq.space
    dense = isinstance(space, DenseSpace)
    if dense and getattr(proj, "dim", space.dim) != space.dim:
        raise ValueError(f"projection dim {proj.dim} does not match space dim {space.dim}")

    if dense:
        probes = np.concatenate([np.eye(space.dim), rng.standard_normal((space.dim, samples))], axis=1)
        probe_list = [probes[:, i] for i in range(probes.shape[1])]
    else:
        probe_list = space.basis()

    split_worst, split_wit = 0.0, None
    nest_worst, nest_wit = 0.0, None
    pbound = 0.0
    for n in range(n0, n1 + 1):
        pbound = max(pbound, proj.norm(n, p))
        for v in probe_list:
            nv = norm(v, p)
            pv = proj.project(n, v)
            qv = proj.complement(n, v)
            r = max(norm(v - pv - qv, p), norm(proj.project(n, pv) - pv, p)) / nv
            if r > split_worst:
                split_worst, split_wit = r, (n, n, v)
            if n < n1:
                a = proj.complement(n + 1, seq[n].apply(pv))
                b = proj.project(n, seq[n].apply_inverse(proj.complement(n + 1, v)))
                r = max(norm(a, p), norm(b, p)) / nv
                if r > nest_worst:
                    nest_worst, nest_wit = r, (n, n + 1, v)

    stable, unstable = decay_profile(seq, proj, window, p=p, samples=samples, seed=seed)

    def decay_check(name, profile):
        worst, wit = 0.0, None
        for k, (ratio, w) in enumerate(profile):
            if w is None:
                continue
            r = ratio / (D * math.exp(-lam * k))
            if r > worst:
                worst, wit = r, w
        return Check(name, worst <= 1.0 + DECAY_SLACK, 1.0 - worst, wit if worst > 1.0 + DECAY_SLACK else None)

    checks = {
        "splitting": Check("splitting", split_worst <= SPLIT_TOL, SPLIT_TOL - split_worst,
                           split_wit if split_worst > SPLIT_TOL else None),
        "nesting": Check("nesting", nest_worst <= NEST_TOL, NEST_TOL - nest_worst,
                         nest_wit if nest_worst > NEST_TOL else None),
        "stable_decay": decay_check("stable_decay", stable),
        "unstable_decay": decay_check("unstable_decay", unstable),
        "projection_bound": Check("projection_bound", math.isfinite(pbound), 0.0 if math.isfinite(pbound) else -math.inf),
    }
    return VerificationReport(checks, pbound)


def certify(seq, proj, window, D, lam, p=2, samples=8, seed=0, notes=None) -> DichotomyCertificate:
    report = verify_dichotomy(seq, proj, window, D, lam, samples=samples, p=p, seed=seed)
    return DichotomyCertificate(seq, proj, float(D), float(lam), tuple(window), report, check_p(p), dict(notes or {}))


def fit_constants(seq, proj, window, lam_grid, p=2, cap=1e6, samples=8, seed=0):
    """Largest grid rate admitting a finite constant on the window.

    ``D(lambda) = max_k ratio_k e^{lambda k}``. A rate is rejected when its
    constant exceeds ``cap`` or is still growing over the second half of the
    lag range (no finite D on Z). Returns ``(lambda, D)`` or ``None``.
    """
    stable, unstable = decay_profile(seq, proj, window, p=p, samples=samples, seed=seed)
    ratios = np.array([max(s[0], u[0]) for s, u in zip(stable, unstable)])
    lags = np.arange(len(ratios))
    half = len(ratios) // 2
    best = None
    for lam in sorted(float(x) for x in lam_grid):
        if lam <= 0:
            raise ValueError("lambda grid values must be positive")
        scaled = ratios * np.exp(lam * lags)
        D_full = float(scaled.max())
        D_half = float(scaled[: half + 1].max())
        if D_full <= cap and D_full <= D_half * (1.0 + DECAY_SLACK):
            best = (lam, D_full)
    return best


def truncation_depth(D, lam, bound, tail_tol) -> int:
    """Smallest N >= 1 with ``D * bound * e^{-lam N} / (1 - e^{-lam}) <= tail_tol``."""
    if bound <= 0:
        return 1
    if D <= 0 or lam <= 0 or tail_tol <= 0:
        raise ValueError("D, lambda and tail_tol must be positive")
    scale = D * bound / (1.0 - math.exp(-lam))
    N = max(1, math.ceil(math.log(scale / tail_tol) / lam))
    while N > 1 and scale * math.exp(-lam * (N - 1)) <= tail_tol:
        N -= 1
    while scale * math.exp(-lam * N) > tail_tol:
        N += 1
    return N


def _dense_stacks(seq, proj, lo, hi):
    d = seq.space.dim
    A = np.stack([seq[m].matrix(d) for m in range(lo, hi + 1)])
    Ainv = np.stack([seq[m].inverse_matrix(d) for m in range(lo, hi + 1)])
    P = np.stack([proj.matrix(k) for k in range(lo + 1, hi + 2)])
    return A, Ainv, P


def green_sums(seq, proj, lo, hi, ys, stacks=None):
    """Truncated dichotomy Green operator on the slots ``m in [lo, hi]``.

    ``ys[i]`` holds ``y_k`` for ``k = lo + 1 + i`` (so ``k`` runs over
    ``[lo+1, hi+1]``). Returns ``x_m`` for every slot, where

        x_m = sum_{k=lo+1}^{m} A(m,k) P_k y_k - sum_{k=m+1}^{hi+1} A(m,k) (I-P_k) y_k,

    evaluated by the two first-order recursions
    ``s_m = A_{m-1} s_{m-1} + P_m y_m`` and
    ``u_m = A_m^{-1} (u_{m+1} + (I-P_{m+1}) y_{m+1})``.
    Dense inputs (2-d arrays) return an array, otherwise a list.
    """
    L = hi - lo + 1
    if isinstance(seq.space, DenseSpace):
        Y = np.asarray(ys, dtype=float)
        if Y.shape[0] != L:
            raise ValueError(f"expected {L} inputs, got {Y.shape[0]}")
        A, Ainv, P = stacks if stacks is not None else _dense_stacks(seq, proj, lo, hi)
        PY = np.einsum("kij,kj->ki", P, Y)
        QY = Y - PY
        S = np.zeros_like(Y)
        for i in range(1, L):
            S[i] = A[i - 1] @ S[i - 1] + PY[i - 1]
        U = np.empty_like(Y)
        U[L - 1] = Ainv[L - 1] @ QY[L - 1]
        for i in range(L - 2, -1, -1):
            U[i] = Ainv[i] @ (U[i + 1] + QY[i])
        return S - U
    ys = list(ys)
    if len(ys) != L:
        raise ValueError(f"expected {L} inputs, got {len(ys)}")
    zero = zeros_like(ys[0])
    S = [zero] * L
    for i in range(1, L):
        m = lo + i
        S[i] = seq[m - 1].apply(S[i - 1]) + proj.project(m, ys[i - 1])
    U = [zero] * L
    U[L - 1] = seq[hi].apply_inverse(proj.complement(hi + 1, ys[L - 1]))
    for i in range(L - 2, -1, -1):
        m = lo + i
        U[i] = seq[m].apply_inverse(U[i + 1] + proj.complement(m + 1, ys[i]))
    return [s - u for s, u in zip(S, U)]


class BoundedSolution:
    """Bounded solution ``x`` of ``x_{n+1} - A_n x_n = y_{n+1}`` on a window.

    Indexable by time; ``depth`` is the one-sided truncation depth.
    """

    def __init__(self, values: dict, depth: int, tail_tol: float):
        self.values = values
        self.depth = depth
        self.tail_tol = tail_tol

    def __getitem__(self, n):
        return self.values[n]

    def __call__(self, n):
        return self.values[n]

    def times(self):
        return sorted(self.values)


def bounded_solution(cert: DichotomyCertificate, y: Callable[[int], object], window, tail_tol, y_sup) -> BoundedSolution:
    """Series solution built from the certificate's projections.

    ``y_sup`` is the declared bound on ``sup |y_n|``; the truncation depth makes
    each discarded one-sided tail at most ``tail_tol``.
    """
    cert.require()
    if tail_tol <= 0:
        raise ValueError("tail_tol must be positive")
    a, b = window
    N = truncation_depth(cert.D, cert.lam, float(y_sup), tail_tol)
    lo, hi = a - N - 1, b + N - 1
    ys = [as_vector(y(k)) for k in range(lo + 1, hi + 2)]
    xs = green_sums(cert.seq, cert.proj, lo, hi, np.array(ys) if isinstance(cert.seq.space, DenseSpace) else ys)
    values = {m: xs[m - lo] for m in range(a, b + 1)}
    return BoundedSolution(values, N, tail_tol)


@dataclass
class OrbitWitness:
    bounded: bool
    max_norm: float
    first_exit: int | None
    orbit: dict = field(repr=False)

    def __bool__(self):
        return self.bounded


def check_full_orbit_bounded(seq, x0, window, bound, p=2, tail_steps=5) -> OrbitWitness:
    """Evaluate ``x_n = A(n, 0) x0`` on the window and test boundedness.

    A witness requires ``max |x_n| <= bound`` and non-increasing norms over the
    last ``tail_steps`` steps at both ends.
    """
    x0 = as_vector(x0)
    if norm(x0, p) == 0.0:
        raise ValueError("x0 must be nonzero")
    n0, n1 = window
    pts = {0: x0}
    v = x0
    for k in range(0, n1):
        v = seq[k].apply(v)
        pts[k + 1] = v
    v = x0
    for k in range(-1, n0 - 1, -1):
        v = seq[k].apply_inverse(v)
        pts[k] = v
    pts = {n: pts[n] for n in range(n0, n1 + 1) if n in pts}
    norms = {n: norm(v, p) for n, v in pts.items()}
    first_exit = None
    for r in range(0, max(abs(n0), abs(n1)) + 1):
        for n in ((r, -r) if r else (0,)):
            if n in norms and norms[n] > bound:
                first_exit = n
                break
        if first_exit is not None:
            break
    fwd = [norms[n] for n in range(n1 - tail_steps, n1 + 1) if n in norms]
    bwd = [norms[n] for n in range(n0 + tail_steps, n0 - 1, -1) if n in norms]
    tails_ok = all(b <= a for a, b in zip(fwd, fwd[1:])) and all(b <= a for a, b in zip(bwd, bwd[1:]))
    bounded = first_exit is None and tails_ok
    return OrbitWitness(bounded, max(norms.values()), first_exit, pts)
