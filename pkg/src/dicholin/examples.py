"""Ready-made systems with verified dichotomy certificates.

Every generator runs ``verify_dichotomy`` before returning and raises
``GeneratorError`` (carrying the report) when the claimed constants fail.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .cocycle import (
    ConstantSequence,
    DenseSpace,
    ItinerarySequence,
    OperatorSequence,
    SequenceSpace,
    WindowedSequence,
    transition,
)
from .dichotomy import (
    DichotomyCertificate,
    IndexProjections,
    MatrixProjections,
    ProjectionFamily,
    VerificationReport,
    certify,
    check_full_orbit_bounded,
)
from .linops import BiSeq, DenseMatrix, Operator, WeightedShift, as_vector, check_p, norm

__all__ = [
    "GeneratorError",
    "GeneratedSystem",
    "ShiftSpec",
    "make_weighted_shift",
    "make_dimension_exchange",
    "make_scalar",
    "FamilySpec",
    "make_family_switch",
    "NonUniquenessWitness",
    "make_nonuniqueness_witness",
]

DEFAULT_WINDOW = (-20, 20)
INVARIANCE_TOL = 1e-12


class GeneratorError(ValueError):
    def __init__(self, message: str, report: VerificationReport | None = None):
        super().__init__(message)
        self.report = report


@dataclass
class GeneratedSystem:
    """Sequence, projections and certificate; unpacks as that triple."""

    seq: OperatorSequence
    proj: ProjectionFamily
    cert: DichotomyCertificate
    witness: object = None
    notes: dict = field(default_factory=dict)

    def __iter__(self):
        return iter((self.seq, self.proj, self.cert))


def _certified(seq, proj, window, D, lam, p, notes=None) -> DichotomyCertificate:
    cert = certify(seq, proj, window, D, lam, p=p, notes=notes)
    if not cert.passed:
        raise GeneratorError(
            f"certificate (D={D:g}, lambda={lam:g}) failed on {window}: {cert.report.failures()}", cert.report
        )
    return cert


@dataclass(frozen=True)
class ShiftSpec:
    """Weights ``w_n`` for a bilateral weighted left shift.

    ``stable_bound`` bounds ``|w_n|`` for ``n <= crossing`` from above (< 1);
    ``unstable_bound`` bounds ``|w_n|`` for ``n > crossing`` from below (> 1),
    or is ``None`` when every index is stable. ``bounds`` are the global
    ``(inf |w|, sup |w|)``.
    """

    weight: Callable[[int], float]
    stable_bound: float
    unstable_bound: float | None
    bounds: tuple[float, float]
    crossing: int = 0
    p: float = 2.0
    window: tuple[int, int] = DEFAULT_WINDOW

    def __post_init__(self):
        lo, hi = self.bounds
        if not (lo > 0 and math.isfinite(hi)):
            raise ValueError(f"weights need 0 < inf|w| and sup|w| < inf, got {self.bounds}")
        if not 0 < self.stable_bound < 1:
            raise ValueError("stable-side weight bound must lie in (0, 1)")
        if self.unstable_bound is not None and self.unstable_bound <= 1:
            raise ValueError("unstable-side weight bound must exceed 1")

    @classmethod
    def two_sided(cls, stable: float, unstable: float | None, crossing: int = 0, **kw) -> "ShiftSpec":
        """Constant ``stable`` weight up to ``crossing``, constant ``unstable`` after."""
        if unstable is None:
            rule = lambda n: stable
            bounds = (stable, stable)
        else:
            rule = lambda n: stable if n <= crossing else unstable
            bounds = (min(stable, unstable), max(stable, unstable))
        return cls(rule, stable, unstable, bounds, crossing, **kw)


def make_weighted_shift(spec: ShiftSpec) -> GeneratedSystem:
    """Constant sequence ``A_n = S_w`` split at the crossing index.

    ``D = 1`` and ``lambda = min(-log stable_bound, log unstable_bound)``.
    The ``delta_crossing`` orbit is attached as a bounded-orbit witness when
    both sides are present.
    """
    p = check_p(spec.p)
    op = WeightedShift(spec.weight, spec.bounds, name="S_w")
    seq = ConstantSequence(op, SequenceSpace(probe=spec.window))
    if spec.unstable_bound is None:
        proj = IndexProjections.half_line(math.inf)
        lam = -math.log(spec.stable_bound)
    else:
        proj = IndexProjections.half_line(float(spec.crossing))
        lam = min(-math.log(spec.stable_bound), math.log(spec.unstable_bound))
    cert = _certified(seq, proj, spec.window, 1.0, lam, p)
    witness = BiSeq.delta(spec.crossing) if spec.unstable_bound is not None else None
    return GeneratedSystem(seq, proj, cert, witness)


def make_dimension_exchange(window: tuple[int, int] = DEFAULT_WINDOW, p=2) -> GeneratedSystem:
    """``A_n = diag(1/2, 2)`` for ``n < 0`` and ``diag(1/2, 1/2)`` for ``n >= 0``.

    ``S(n) = span(e1)`` before time 0 and the whole plane from time 0 on, so
    the stable dimension jumps. ``e2`` at time 0 has a bounded full orbit,
    which rules out a classical dichotomy; it is attached as ``witness``.
    """
    ops = [DenseMatrix(np.diag([0.5, 2.0])), DenseMatrix(np.diag([0.5, 0.5]))]
    seq = WindowedSequence(-1, ops)
    proj = MatrixProjections(-1, [np.diag([1.0, 0.0]), np.eye(2)])
    cert = _certified(seq, proj, window, 1.0, math.log(2.0), check_p(p))
    return GeneratedSystem(seq, proj, cert, np.array([0.0, 1.0]))


def make_scalar(a: float = 0.5, window: tuple[int, int] = DEFAULT_WINDOW, p=2) -> GeneratedSystem:
    """Autonomous scalar ``A_n = a`` with ``|a| != 1``."""
    a = float(a)
    if a == 0 or abs(a) == 1:
        raise ValueError("scalar multiplier must satisfy 0 < |a| != 1")
    seq = ConstantSequence(DenseMatrix([[a]]))
    proj = MatrixProjections.constant([[1.0 if abs(a) < 1 else 0.0]])
    cert = _certified(seq, proj, window, 1.0, abs(math.log(abs(a))), check_p(p))
    return GeneratedSystem(seq, proj, cert)


U_LETTER = "U"


@dataclass
class FamilySpec:
    """Letters sharing one splitting, an optional connector ``U`` and a
    periodic itinerary.

    ``word`` entries are letter indices or ``"U"``. ``projection`` is the
    shared splitting: a matrix for dense letters, an ``IndexProjections``
    otherwise. Each letter must satisfy its own dichotomy with ``D = 1`` and
    rate ``lambdas[i]``.
    """

    letters: Sequence[Operator]
    lambdas: Sequence[float]
    projection: object
    word: Sequence[int | str]
    U: Operator | None = None
    offset: int = 0
    p: float = 2.0
    window: tuple[int, int] = DEFAULT_WINDOW


def _shared_projection(spec: FamilySpec) -> ProjectionFamily:
    if isinstance(spec.projection, ProjectionFamily):
        return spec.projection
    return MatrixProjections.constant(spec.projection)


def _invariance_defect(op: Operator, proj: ProjectionFamily, basis) -> tuple[float, float]:
    """Largest ``|(I-P) op P v|`` and ``|P op^{-1} (I-P) v|`` over the basis."""
    fwd = max(norm(proj.complement(0, op.apply(proj.project(0, v)))) for v in basis)
    bwd = max(norm(proj.project(0, op.apply_inverse(proj.complement(0, v)))) for v in basis)
    return fwd, bwd


def make_family_switch(spec: FamilySpec) -> GeneratedSystem:
    """Periodic itinerary over letters with a shared splitting.

    Without a connector the certificate is ``D = 1``,
    ``lambda = min(lambdas)``. With a connector ``U`` whose norms satisfy
    ``u = max(|U|, |U^{-1}|) < e^{lt}`` (``lt = min(lambdas)``) and which
    never occurs twice in a row, two consecutive steps contract by at most
    ``u e^{-lt}`` and a single step by at most ``u``, giving
    ``lambda = (lt - log u) / 2`` and ``D = sqrt(u e^{lt})``.
    """
    p = check_p(spec.p)
    letters = list(spec.letters)
    if not letters:
        raise ValueError("family needs at least one letter")
    if len(spec.lambdas) != len(letters):
        raise ValueError("one rate per letter required")
    word = [w if w == U_LETTER else int(w) for w in spec.word]
    if not word:
        raise ValueError("empty itinerary")
    uses_u = U_LETTER in word
    if uses_u and spec.U is None:
        raise ValueError("itinerary uses the connector but none was given")
    for i, w in enumerate(word):
        if w == U_LETTER and word[(i + 1) % len(word)] == U_LETTER:
            raise GeneratorError(
                f"connector U occurs at consecutive positions {i} and {(i + 1) % len(word)} of the periodic itinerary;"
                " U must never appear twice in a row"
            )
        if w != U_LETTER and not 0 <= w < len(letters):
            raise ValueError(f"itinerary letter {w} outside alphabet of size {len(letters)}")

    proj = _shared_projection(spec)
    dense = letters[0].dense
    space = DenseSpace(letters[0].dim) if dense else SequenceSpace(probe=spec.window)
    basis = space.basis()
    short = (0, 6)
    for i, (T, lam_i) in enumerate(zip(letters, spec.lambdas)):
        if lam_i <= 0:
            raise ValueError("letter rates must be positive")
        one = certify(ConstantSequence(T, space), proj, short, 1.0, lam_i, p=p)
        if not one.passed:
            raise GeneratorError(f"letter {i} fails its own dichotomy (D=1, lambda={lam_i:g})", one.report)

    lt = min(float(x) for x in spec.lambdas)
    notes = {"lambda_letters": lt}
    if uses_u:
        U = spec.U
        fwd, bwd = _invariance_defect(U, proj, basis)
        if fwd > INVARIANCE_TOL or bwd > INVARIANCE_TOL:
            raise GeneratorError(
                f"connector must map S into S and U^(-1) must map the unstable space into itself"
                f" (defects {fwd:.3g}, {bwd:.3g})"
            )
        un, uin = U.norm(p), U.inverse_norm(p)
        u = max(un, uin)
        if not u < math.exp(lt):
            raise GeneratorError(
                f"connector norms |U|={un:.6g}, |U^-1|={uin:.6g} must both be below e^lambda={math.exp(lt):.6g}"
            )
        lam = (lt - math.log(u)) / 2.0
        D = math.sqrt(u * math.exp(lt))
        alphabet = letters + [U]
        word_idx = [len(letters) if w == U_LETTER else w for w in word]
        notes.update({"U_norm": un, "U_inverse_norm": uin})
    else:
        lam, D = lt, 1.0
        alphabet = letters
        word_idx = word
    seq = ItinerarySequence.periodic(alphabet, word_idx, offset=spec.offset, space=space)
    cert = _certified(seq, proj, spec.window, D, lam, p, notes)
    return GeneratedSystem(seq, proj, cert, notes=notes)


class NonUniquenessWitness:
    """The family ``H'_n(x) = x + x_n`` built on a bounded linear orbit."""

    def __init__(self, seq: OperatorSequence, x0, orbit: dict, sup_norm: float, p: float):
        self.seq = seq
        self.x0 = x0
        self.orbit = orbit
        self.sup_norm = sup_norm
        self.p = p

    def point(self, n: int):
        if n in self.orbit:
            return self.orbit[n]
        return transition(self.seq, n, 0, self.x0)

    def shift(self, n: int):
        """``H'_n - Id``, i.e. the orbit point ``x_n``."""
        return self.point(n)

    def __call__(self, n: int, x):
        return as_vector(x) + self.point(n)

    def residual(self, n: int, x) -> float:
        """``|H'_{n+1}(A_n x) - A_n H'_n(x)|`` (unperturbed conjugacy equation)."""
        A = self.seq[n]
        return norm(self(n + 1, A.apply(as_vector(x))) - A.apply(self(n, x)), self.p)


def make_nonuniqueness_witness(seq: OperatorSequence, proj: ProjectionFamily, x0, window=(-30, 30), bound=None, p=2):
    """Wrap a bounded orbit through ``x0`` (at time 0) as an alternative conjugacy.

    Refuses ``x0 = 0`` and orbits that leave ``bound`` (default ``1e3 |x0|``)
    or grow at the ends of the window.
    """
    p = check_p(p)
    x0 = as_vector(x0)
    size = norm(x0, p)
    if size == 0.0:
        raise ValueError("x0 must be nonzero")
    bound = 1e3 * size if bound is None else float(bound)
    w = check_full_orbit_bounded(seq, x0, window, bound, p=p)
    if not w.bounded:
        raise GeneratorError(f"orbit of x0 is not bounded on {window} (first exit at n={w.first_exit})")
    return NonUniquenessWitness(seq, x0, w.orbit, w.max_norm, p)
