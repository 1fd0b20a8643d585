"""Two-sided operator sequences and the linear cocycle they generate."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .linops import BiSeq, Operator, ShapeError, as_vector, check_p, norm

__all__ = [
    "DenseSpace",
    "SequenceSpace",
    "OperatorSequence",
    "ConstantSequence",
    "WindowedSequence",
    "ItinerarySequence",
    "transition",
    "orbit",
    "growth_bound",
    "global_growth_bound",
]


@dataclass(frozen=True)
class DenseSpace:
    dim: int

    def check(self, v):
        if isinstance(v, BiSeq) or np.shape(v) != (self.dim,):
            raise ShapeError(f"expected dense({self.dim},) vector, got {type(v).__name__} {np.shape(v)}")

    def basis(self):
        return list(np.eye(self.dim))


@dataclass(frozen=True)
class SequenceSpace:
    """Finitely supported bilateral sequences.

    ``probe`` is the index range whose unit vectors are used as test vectors
    when a finite check over the space is needed.
    """

    probe: tuple[int, int] = (-10, 10)

    def check(self, v):
        if not isinstance(v, BiSeq):
            raise ShapeError(f"expected biseq vector, got dense {np.shape(v)}")

    def basis(self):
        return [BiSeq.delta(j) for j in range(self.probe[0], self.probe[1] + 1)]


def _infer_space(op: Operator):
    return DenseSpace(op.dim) if op.dense else SequenceSpace()


class OperatorSequence:
    """Rule ``n -> A_n`` over all of Z."""

    space: DenseSpace | SequenceSpace

    def __getitem__(self, n: int) -> Operator:
        raise NotImplementedError

    def distinct_operators(self) -> list[Operator]:
        """Every operator the rule can produce (deduplicated by identity)."""
        raise NotImplementedError

    def operators(self, lo: int, hi: int) -> list[Operator]:
        return [self[n] for n in range(lo, hi + 1)]


class ConstantSequence(OperatorSequence):
    def __init__(self, op: Operator, space=None):
        self.op = op
        self.space = space or _infer_space(op)

    def __getitem__(self, n):
        return self.op

    def distinct_operators(self):
        return [self.op]


class WindowedSequence(OperatorSequence):
    """Explicit operators on ``[n_min, n_min + len - 1]``, extended constantly.

    ``A_n = ops[0]`` for ``n < n_min`` and ``A_n = ops[-1]`` beyond the window.
    """

    def __init__(self, n_min: int, ops: Sequence[Operator], space=None):
        if not ops:
            raise ValueError("windowed sequence needs at least one operator")
        self.n_min = int(n_min)
        self.ops = tuple(ops)
        self.n_max = self.n_min + len(self.ops) - 1
        self.space = space or _infer_space(self.ops[0])

    def __getitem__(self, n):
        i = min(max(n - self.n_min, 0), len(self.ops) - 1)
        return self.ops[i]

    def distinct_operators(self):
        return list({id(op): op for op in self.ops}.values())


class ItinerarySequence(OperatorSequence):
    """Finite alphabet plus an index map ``n -> letter``."""

    def __init__(self, alphabet: Sequence[Operator], index_map: Callable[[int], int], space=None, used=None):
        self.alphabet = tuple(alphabet)
        self.index_map = index_map
        self.space = space or _infer_space(self.alphabet[0])
        self._used = sorted(set(used)) if used is not None else list(range(len(self.alphabet)))

    @classmethod
    def periodic(cls, alphabet: Sequence[Operator], word: Sequence[int], offset: int = 0, space=None):
        """``A_n = alphabet[word[(n - offset) mod len(word)]]``."""
        word = tuple(int(w) for w in word)
        if not word:
            raise ValueError("empty itinerary word")
        if min(word) < 0 or max(word) >= len(alphabet):
            raise ValueError(f"word {word} references letters outside alphabet of size {len(alphabet)}")
        seq = cls(alphabet, lambda n: word[(n - offset) % len(word)], space=space, used=word)
        seq.word = word
        seq.offset = offset
        return seq

    def letter(self, n: int) -> int:
        return int(self.index_map(n))

    def __getitem__(self, n):
        return self.alphabet[self.letter(n)]

    def distinct_operators(self):
        return [self.alphabet[i] for i in self._used]


def transition(seq: OperatorSequence, m: int, n: int, v):
    """Apply the cocycle ``A(m, n)`` to ``v``: forward products for m > n,
    inverse products for m < n, identity for m == n."""
    v = as_vector(v)
    seq.space.check(v)
    if m >= n:
        for k in range(n, m):
            v = seq[k].apply(v)
    else:
        for k in range(n - 1, m - 1, -1):
            v = seq[k].apply_inverse(v)
    return v


def orbit(seq: OperatorSequence, n: int, x, lo: int, hi: int, limit: float = math.inf, p=2):
    """Points ``A(m, n) x`` for ``m`` in ``[lo, hi]`` (``lo <= n <= hi``).

    Returns a dict keyed by time. Raises OverflowError as soon as a point's
    norm exceeds ``limit``.
    """
    x = as_vector(x)
    seq.space.check(x)
    pts = {n: x}
    v = x
    for k in range(n, hi):
        v = seq[k].apply(v)
        if norm(v, p) > limit:
            raise OverflowError(f"forward orbit from time {n} exceeds {limit:g} at time {k + 1}")
        pts[k + 1] = v
    v = x
    for k in range(n - 1, lo - 1, -1):
        v = seq[k].apply_inverse(v)
        if norm(v, p) > limit:
            raise OverflowError(f"backward orbit from time {n} exceeds {limit:g} at time {k}")
        pts[k] = v
    return pts


def _step_growth(ops, p) -> float:
    rho = 0.0
    for op in ops:
        rho = max(rho, math.log(op.norm(p)), math.log(op.inverse_norm(p)))
    return rho


def growth_bound(seq: OperatorSequence, window: tuple[int, int], p=2) -> float:
    """rho = max over the window of log max(|A_n|, |A_n^{-1}|), clamped at 0."""
    lo, hi = window
    if hi < lo:
        raise ValueError(f"empty window {window}")
    return _step_growth(seq.operators(lo, hi), check_p(p))


def global_growth_bound(seq: OperatorSequence, p=2) -> float:
    """Growth bound over all of Z (sequences are finitely described)."""
    return _step_growth(seq.distinct_operators(), check_p(p))
