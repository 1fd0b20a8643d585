"""State-space vectors, norms and invertible linear operators.

Two kinds of state space are supported:

* dense vectors, stored as one-dimensional ``numpy`` float arrays;
* finitely supported bilateral sequences (:class:`BiSeq`), modelling
  elements of l_p(Z) or c_0(Z) with finite support.

Every operator is invertible and exposes exact ``apply`` / ``apply_inverse``.
"""
from __future__ import annotations

import math
import warnings
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
import scipy.linalg

__all__ = [
    "BiSeq",
    "Operator",
    "DenseMatrix",
    "WeightedShift",
    "BlockDiagonal",
    "ScaledIdentity",
    "ShapeError",
    "SingularOperatorError",
    "ConvergenceError",
    "as_vector",
    "zeros_like",
    "is_sparse",
    "check_p",
    "apply",
    "apply_inverse",
    "norm",
    "operator_norm",
]

#: sparse entries at or below this magnitude are dropped
SPARSE_DROP = 1e-300
#: LU pivot ratio below which a dense matrix is treated as singular
PIVOT_RTOL = 1e-12
POWER_ITER_RTOL = 1e-10
POWER_ITER_MAX = 10_000


class ShapeError(ValueError):
    """Operator and vector live in incompatible spaces."""


class SingularOperatorError(ValueError):
    def __init__(self, message: str, condition: float):
        super().__init__(f"{message} (condition estimate {condition:.3e})")
        self.condition = condition


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


def check_p(p) -> float:
    """Normalise a norm selector to one of 1.0, 2.0, inf."""
    if isinstance(p, str):
        p = p.strip().lower()
        p = math.inf if p in ("inf", "infinity", "max") else float(p)
    p = float(p)
    if p not in (1.0, 2.0, math.inf):
        raise ValueError(f"unsupported norm p={p!r}; expected 1, 2 or inf")
    return p


class BiSeq:
    """Finitely supported bilateral sequence ``(x_j)_{j in Z}``.

    Immutable. Explicit zeros (|x_j| <= 1e-300) are never stored.
    """

    __slots__ = ("_data",)
    # keep numpy scalars from broadcasting over us: ``np.float64(2) * s``
    # must dispatch to ``BiSeq.__rmul__``
    __array_ufunc__ = None

    def __init__(self, entries: Mapping[int, float] | Iterable[tuple[int, float]] | None = None):
        data = {}
        if entries is not None:
            items = entries.items() if isinstance(entries, Mapping) else entries
            for j, v in items:
                v = float(v)
                if abs(v) > SPARSE_DROP:
                    data[int(j)] = v
        self._data = data

    @classmethod
    def delta(cls, j: int, value: float = 1.0) -> "BiSeq":
        return cls({j: value})

    @classmethod
    def _wrap(cls, data: dict) -> "BiSeq":
        out = cls.__new__(cls)
        out._data = {j: v for j, v in data.items() if abs(v) > SPARSE_DROP}
        return out

    def __getitem__(self, j: int) -> float:
        return self._data.get(j, 0.0)

    def items(self):
        return self._data.items()

    def support(self) -> list[int]:
        return sorted(self._data)

    def bounds(self) -> tuple[int, int] | None:
        if not self._data:
            return None
        return min(self._data), max(self._data)

    def __len__(self) -> int:
        return len(self._data)

    def __add__(self, other):
        if not isinstance(other, BiSeq):
            return NotImplemented
        out = dict(self._data)
        for j, v in other._data.items():
            out[j] = out.get(j, 0.0) + v
        return BiSeq._wrap(out)

    def __sub__(self, other):
        if not isinstance(other, BiSeq):
            return NotImplemented
        out = dict(self._data)
        for j, v in other._data.items():
            out[j] = out.get(j, 0.0) - v
        return BiSeq._wrap(out)

    def __neg__(self):
        return BiSeq._wrap({j: -v for j, v in self._data.items()})

    def __mul__(self, scalar):
        if isinstance(scalar, BiSeq):
            return NotImplemented
        s = float(scalar)
        return BiSeq._wrap({j: s * v for j, v in self._data.items()})

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return self * (1.0 / float(scalar))

    def __eq__(self, other):
        if not isinstance(other, BiSeq):
            return NotImplemented
        return self._data == other._data

    def __hash__(self):
        return hash(frozenset(self._data.items()))

    def norm(self, p=2) -> float:
        p = check_p(p)
        if not self._data:
            return 0.0
        vals = np.fromiter(self._data.values(), dtype=float)
        return float(np.linalg.norm(vals, ord=p))

    def to_dict(self) -> dict[int, float]:
        return dict(sorted(self._data.items()))

    def __repr__(self) -> str:
        inner = ", ".join(f"{j}: {v:g}" for j, v in sorted(self._data.items()))
        return f"BiSeq({{{inner}}})"


def is_sparse(v) -> bool:
    return isinstance(v, BiSeq)


def as_vector(x):
    """Coerce lists / arrays to dense vectors and int-keyed mappings to BiSeq."""
    if isinstance(x, BiSeq):
        return x
    if isinstance(x, Mapping):
        return BiSeq({int(k): v for k, v in x.items()})
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1 or arr.size < 1:
        raise ShapeError(f"dense vectors must be 1-d with d >= 1, got shape {arr.shape}")
    return arr


def zeros_like(v):
    return BiSeq() if isinstance(v, BiSeq) else np.zeros_like(v, dtype=float)


def norm(v, p=2) -> float:
    if isinstance(v, BiSeq):
        return v.norm(p)
    return float(np.linalg.norm(np.asarray(v, dtype=float).ravel(), ord=check_p(p)))


def _shape(v) -> str:
    return "biseq" if isinstance(v, BiSeq) else f"dense{tuple(np.shape(v))}"


class Operator:
    """Invertible bounded linear operator.

    Subclasses implement ``apply``, ``apply_inverse``, ``norm`` and
    ``inverse_norm``. Dense variants additionally provide ``matrix``.
    """

    dense: bool = True
    dim: int | None = None

    def apply(self, v):
        raise NotImplementedError

    def apply_inverse(self, v):
        raise NotImplementedError

    def norm(self, p=2) -> float:
        raise NotImplementedError

    def inverse_norm(self, p=2) -> float:
        raise NotImplementedError

    def matrix(self, dim: int | None = None) -> np.ndarray:
        raise ShapeError(f"{type(self).__name__} has no finite matrix form")

    def inverse_matrix(self, dim: int | None = None) -> np.ndarray:
        raise ShapeError(f"{type(self).__name__} has no finite matrix form")

    def _check_dense(self, v):
        if isinstance(v, BiSeq):
            raise ShapeError(f"{type(self).__name__} acts on dense({self.dim},), got {_shape(v)}")
        v = np.asarray(v, dtype=float)
        if self.dim is not None and v.shape != (self.dim,):
            raise ShapeError(f"{type(self).__name__} acts on dense({self.dim},), got {_shape(v)}")
        return v


def _power_norm2(mat: np.ndarray) -> float:
    """Largest singular value by power iteration on the Gram matrix."""
    d = mat.shape[1]
    gram = mat.T @ mat
    diag = np.diag(gram)
    if np.count_nonzero(gram - np.diag(diag)) == 0:
        return float(math.sqrt(diag.max()))
    v = np.ones(d) / math.sqrt(d)
    # a deterministic perturbation avoids starting orthogonal to the top vector
    v += 1e-3 * np.cos(np.arange(d) + 1.0)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(POWER_ITER_MAX):
        w = gram @ v
        nw = float(np.linalg.norm(w))
        if nw == 0.0:
            return 0.0
        new = float(v @ w)
        v = w / nw
        if abs(new - est) <= POWER_ITER_RTOL * abs(new):
            return math.sqrt(new)
        est = new
    raise ConvergenceError("power iteration for the 2-norm did not converge", last_iterate=v)


def _matrix_norm(mat: np.ndarray, p: float) -> float:
    if p == 1.0:
        return float(np.abs(mat).sum(axis=0).max())
    if p == math.inf:
        return float(np.abs(mat).sum(axis=1).max())
    return _power_norm2(mat)


class DenseMatrix(Operator):
    """Dense invertible d x d matrix, LU-factorised once at construction."""

    def __init__(self, matrix):
        mat = np.array(matrix, dtype=float)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1] or mat.shape[0] < 1:
            raise ShapeError(f"expected a square matrix, got shape {mat.shape}")
        with warnings.catch_warnings():
            # singularity is judged by the pivot test below
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            lu, piv = scipy.linalg.lu_factor(mat, check_finite=True)
        pivots = np.abs(np.diag(lu))
        if pivots.min() <= PIVOT_RTOL * pivots.max():
            with np.errstate(all="ignore"):
                cond = float(np.linalg.cond(mat))
            raise SingularOperatorError("matrix is numerically singular", cond)
        mat.setflags(write=False)
        self._mat = mat
        self._lu = (lu, piv)
        self._inv = None
        self._norms: dict[tuple[bool, float], float] = {}
        self.dim = mat.shape[0]

    def matrix(self, dim=None):
        return self._mat

    def inverse_matrix(self, dim=None):
        if self._inv is None:
            inv = scipy.linalg.lu_solve(self._lu, np.eye(self.dim))
            inv.setflags(write=False)
            self._inv = inv
        return self._inv

    def apply(self, v):
        return self._mat @ self._check_dense(v)

    def apply_inverse(self, v):
        return scipy.linalg.lu_solve(self._lu, self._check_dense(v))

    def norm(self, p=2):
        key = (False, check_p(p))
        if key not in self._norms:
            self._norms[key] = _matrix_norm(self._mat, key[1])
        return self._norms[key]

    def inverse_norm(self, p=2):
        key = (True, check_p(p))
        if key not in self._norms:
            self._norms[key] = _matrix_norm(self.inverse_matrix(), key[1])
        return self._norms[key]

    def __repr__(self):
        return f"DenseMatrix({self._mat.tolist()})"


class ScaledIdentity(Operator):
    """``s * Id`` on any space (dense of dimension ``dim`` or sequences)."""

    def __init__(self, scale: float, dim: int | None = None):
        scale = float(scale)
        if scale == 0.0 or not math.isfinite(scale):
            raise SingularOperatorError("scaled identity with zero/non-finite scale", math.inf)
        self.scale = scale
        self.dim = dim
        self.dense = dim is not None

    def apply(self, v):
        if isinstance(v, BiSeq):
            if self.dim is not None:
                raise ShapeError(f"ScaledIdentity acts on dense({self.dim},), got biseq")
            return v * self.scale
        return self.scale * self._check_dense(v)

    def apply_inverse(self, v):
        if isinstance(v, BiSeq):
            if self.dim is not None:
                raise ShapeError(f"ScaledIdentity acts on dense({self.dim},), got biseq")
            return v / self.scale
        return self._check_dense(v) / self.scale

    def norm(self, p=2):
        return abs(self.scale)

    def inverse_norm(self, p=2):
        return 1.0 / abs(self.scale)

    def matrix(self, dim=None):
        d = self.dim if self.dim is not None else dim
        if d is None:
            raise ShapeError("ScaledIdentity without a dimension has no matrix form")
        return self.scale * np.eye(d)

    def inverse_matrix(self, dim=None):
        return self.matrix(dim) / self.scale ** 2

    def __repr__(self):
        return f"ScaledIdentity({self.scale:g}, dim={self.dim})"


class WeightedShift(Operator):
    """Bilateral weighted left shift ``(S x)_n = w_{n+1} x_{n+1}``.

    ``weights`` is a rule ``n -> w_n``; ``bounds = (inf |w|, sup |w|)`` are
    declared by the caller and used for operator norms.
    """

    dense = False

    def __init__(self, weights: Callable[[int], float], bounds: tuple[float, float], name: str = ""):
        lo, hi = float(bounds[0]), float(bounds[1])
        if not (lo > 0.0 and math.isfinite(hi) and hi >= lo):
            raise SingularOperatorError(
                f"weighted shift needs 0 < inf|w| <= sup|w| < inf, got bounds {bounds}", math.inf
            )
        self.weights = weights
        self.bounds = (lo, hi)
        self.name = name

    def weight(self, n: int) -> float:
        w = float(self.weights(n))
        if not (self.bounds[0] <= abs(w) <= self.bounds[1]):
            raise ValueError(f"weight w_{n}={w} violates declared bounds {self.bounds}")
        return w

    def apply(self, v):
        if not isinstance(v, BiSeq):
            raise ShapeError(f"WeightedShift acts on biseq, got {_shape(v)}")
        return BiSeq._wrap({j - 1: self.weight(j) * x for j, x in v.items()})

    def apply_inverse(self, v):
        if not isinstance(v, BiSeq):
            raise ShapeError(f"WeightedShift acts on biseq, got {_shape(v)}")
        return BiSeq._wrap({j + 1: x / self.weight(j + 1) for j, x in v.items()})

    def norm(self, p=2):
        return self.bounds[1]

    def inverse_norm(self, p=2):
        return 1.0 / self.bounds[0]

    def __repr__(self):
        return f"WeightedShift({self.name or self.weights!r}, bounds={self.bounds})"


class BlockDiagonal(Operator):
    """Block-diagonal operator assembled from dense blocks."""

    def __init__(self, blocks: Sequence[Operator]):
        blocks = [b if isinstance(b, Operator) else DenseMatrix(b) for b in blocks]
        if not blocks or any(b.dim is None for b in blocks):
            raise ShapeError("BlockDiagonal needs at least one block with a dense dimension")
        self.blocks = tuple(blocks)
        self._offsets = np.cumsum([0] + [b.dim for b in blocks])
        self.dim = int(self._offsets[-1])

    def _split(self, v):
        v = self._check_dense(v)
        return [v[a:b] for a, b in zip(self._offsets[:-1], self._offsets[1:])]

    def apply(self, v):
        return np.concatenate([b.apply(part) for b, part in zip(self.blocks, self._split(v))])

    def apply_inverse(self, v):
        return np.concatenate([b.apply_inverse(part) for b, part in zip(self.blocks, self._split(v))])

    def norm(self, p=2):
        return max(b.norm(p) for b in self.blocks)

    def inverse_norm(self, p=2):
        return max(b.inverse_norm(p) for b in self.blocks)

    def matrix(self, dim=None):
        return scipy.linalg.block_diag(*[b.matrix() for b in self.blocks])

    def inverse_matrix(self, dim=None):
        return scipy.linalg.block_diag(*[b.inverse_matrix() for b in self.blocks])


def apply(op: Operator, v):
    return op.apply(v)


def apply_inverse(op: Operator, v):
    return op.apply_inverse(v)


def operator_norm(op: Operator, p=2) -> float:
    return op.norm(check_p(p))
