"""Bounded Lipschitz perturbations ``f_n`` and the nonlinear maps ``F_n = A_n + f_n``.

Perturbations are built from a small closed grammar so their Lipschitz
constant and sup bound can be declared and audited:

scalar expressions (read one coordinate)
    ``Sin(coord, amp, freq, phase)``, ``Clamp(coord, slope, limit)``,
    ``Const(value)``, ``Scale(factor, arg)``, ``Sum(args)``
vector expressions
    ``Embed(arg, direction)`` (scalar times a fixed direction),
    ``Scale`` and ``Sum`` of vector expressions.

Dense inputs may be batched: any array of shape ``(..., d)`` is accepted.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .cocycle import DenseSpace, OperatorSequence, SequenceSpace, global_growth_bound
from .linops import BiSeq, ConvergenceError, as_vector, check_p, norm

__all__ = [
    "Expr",
    "Sin",
    "Clamp",
    "Const",
    "Scale",
    "Sum",
    "Embed",
    "expr_from_json",
    "PerturbationSequence",
    "Audit",
    "audit_constants",
    "NonlinearSystem",
    "ContractionError",
    "nonlinear_forward",
    "nonlinear_backward",
    "inverse_step",
]

BACKWARD_MAX_ITER = 10_000


class ContractionError(ValueError):
    """The backward nonlinear step is not a contraction (c e^rho >= 1)."""


def _coord(x, i):
    if isinstance(x, BiSeq):
        return x[i]
    return np.asarray(x)[..., i]


class Expr:
    vector = False

    def eval(self, x):
        raise NotImplementedError

    def lipschitz(self, p=2) -> float:
        raise NotImplementedError

    def sup_bound(self, p=2) -> float:
        raise NotImplementedError

    def coords(self) -> set[int]:
        return set()

    def outputs(self) -> set[int]:
        return set()

    def to_json(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Sin(Expr):
    coord: int
    amp: float = 1.0
    freq: float = 1.0
    phase: float = 0.0

    def eval(self, x):
        return self.amp * np.sin(self.freq * _coord(x, self.coord) + self.phase)

    def lipschitz(self, p=2):
        return abs(self.amp * self.freq)

    def sup_bound(self, p=2):
        return abs(self.amp)

    def coords(self):
        return {self.coord}

    def to_json(self):
        return {"op": "sin", "coord": self.coord, "amp": self.amp, "freq": self.freq, "phase": self.phase}


@dataclass(frozen=True)
class Clamp(Expr):
    """``clip(slope * x_coord, -limit, limit)``."""

    coord: int
    slope: float
    limit: float

    def eval(self, x):
        return np.clip(self.slope * _coord(x, self.coord), -self.limit, self.limit)

    def lipschitz(self, p=2):
        return abs(self.slope)

    def sup_bound(self, p=2):
        return abs(self.limit)

    def coords(self):
        return {self.coord}

    def to_json(self):
        return {"op": "clamp", "coord": self.coord, "slope": self.slope, "limit": self.limit}


@dataclass(frozen=True)
class Const(Expr):
    value: float

    def eval(self, x):
        if isinstance(x, BiSeq):
            return self.value
        return np.full(np.shape(x)[:-1], self.value)

    def lipschitz(self, p=2):
        return 0.0

    def sup_bound(self, p=2):
        return abs(self.value)

    def to_json(self):
        return {"op": "const", "value": self.value}


@dataclass(frozen=True)
class Scale(Expr):
    factor: float
    arg: Expr

    @property
    def vector(self):
        return self.arg.vector

    def eval(self, x):
        return self.factor * self.arg.eval(x)

    def lipschitz(self, p=2):
        return abs(self.factor) * self.arg.lipschitz(p)

    def sup_bound(self, p=2):
        return abs(self.factor) * self.arg.sup_bound(p)

    def coords(self):
        return self.arg.coords()

    def outputs(self):
        return self.arg.outputs()

    def to_json(self):
        return {"op": "scale", "factor": self.factor, "arg": self.arg.to_json()}


@dataclass(frozen=True)
class Sum(Expr):
    args: tuple

    def __post_init__(self):
        object.__setattr__(self, "args", tuple(self.args))
        if not self.args:
            raise ValueError("Sum needs at least one term")
        kinds = {a.vector for a in self.args}
        if len(kinds) != 1:
            raise ValueError("Sum mixes scalar and vector terms")

    @property
    def vector(self):
        return self.args[0].vector

    def eval(self, x):
        out = self.args[0].eval(x)
        for a in self.args[1:]:
            out = out + a.eval(x)
        return out

    def lipschitz(self, p=2):
        return sum(a.lipschitz(p) for a in self.args)

    def sup_bound(self, p=2):
        return sum(a.sup_bound(p) for a in self.args)

    def coords(self):
        return set().union(*(a.coords() for a in self.args))

    def outputs(self):
        return set().union(*(a.outputs() for a in self.args))

    def to_json(self):
        return {"op": "sum", "args": [a.to_json() for a in self.args]}


class Embed(Expr):
    """Scalar expression times a fixed output direction."""

    vector = True

    def __init__(self, arg: Expr, direction):
        if arg.vector:
            raise ValueError("Embed takes a scalar expression")
        self.arg = arg
        self.direction = as_vector(direction)

    def eval(self, x):
        s = self.arg.eval(x)
        if isinstance(self.direction, BiSeq):
            if not isinstance(x, BiSeq):
                raise ValueError("sequence-space direction applied to a dense vector")
            return self.direction * float(s)
        return np.asarray(s)[..., None] * self.direction

    def lipschitz(self, p=2):
        return self.arg.lipschitz(p) * norm(self.direction, p)

    def sup_bound(self, p=2):
        return self.arg.sup_bound(p) * norm(self.direction, p)

    def coords(self):
        return self.arg.coords()

    def outputs(self):
        if isinstance(self.direction, BiSeq):
            return set(self.direction.support())
        return set(np.flatnonzero(self.direction).tolist())

    def to_json(self):
        d = self.direction
        direction = {str(j): v for j, v in d.to_dict().items()} if isinstance(d, BiSeq) else d.tolist()
        return {"op": "embed", "arg": self.arg.to_json(), "direction": direction}

    def __repr__(self):
        return f"Embed({self.arg!r}, {self.direction!r})"


def expr_from_json(obj: Mapping) -> Expr:
    op = obj["op"]
    if op == "sin":
        return Sin(int(obj["coord"]), float(obj.get("amp", 1.0)), float(obj.get("freq", 1.0)), float(obj.get("phase", 0.0)))
    if op == "clamp":
        return Clamp(int(obj["coord"]), float(obj["slope"]), float(obj["limit"]))
    if op == "const":
        return Const(float(obj["value"]))
    if op == "scale":
        return Scale(float(obj["factor"]), expr_from_json(obj["arg"]))
    if op == "sum":
        return Sum(tuple(expr_from_json(a) for a in obj["args"]))
    if op == "embed":
        direction = obj["direction"]
        if isinstance(direction, Mapping):
            direction = {int(k): float(v) for k, v in direction.items()}
        return Embed(expr_from_json(obj["arg"]), direction)
    raise ValueError(f"unknown expression op {op!r}")


class PerturbationSequence:
    """Rule ``n -> f_n`` with declared Lipschitz constant ``c`` and sup bound ``M``.

    ``expr`` is used for every time not listed in ``overrides``; ``expr=None``
    is the zero perturbation.
    """

    def __init__(self, expr: Expr | None, c: float, M: float, overrides: Mapping[int, Expr] | None = None):
        for e in [expr, *(overrides or {}).values()]:
            if e is not None and not e.vector:
                raise ValueError("perturbation expressions must be vector-valued (use Embed)")
        if c < 0 or M < 0:
            raise ValueError("declared c and M must be non-negative")
        self.expr = expr
        self.c = float(c)
        self.M = float(M)
        self.overrides = dict(overrides or {})

    @classmethod
    def zero(cls):
        return cls(None, 0.0, 0.0)

    @property
    def is_zero(self) -> bool:
        return self.expr is None and not self.overrides

    def at(self, n: int) -> Expr | None:
        return self.overrides.get(n, self.expr)

    def __call__(self, n, x):
        e = self.at(n)
        if e is None:
            return x * 0.0 if not isinstance(x, BiSeq) else BiSeq()
        out = e.eval(x)
        return out if isinstance(out, BiSeq) else np.asarray(out, dtype=float)

    def eval_many(self, times: Sequence[int], X):
        """Evaluate ``f_{times[i]}(X[i])`` for a dense batch ``X`` of shape (L, d)."""
        X = np.asarray(X, dtype=float)
        if self.expr is None:
            out = np.zeros_like(X)
        else:
            out = np.asarray(self.expr.eval(X), dtype=float)
        for i, t in enumerate(times):
            if t in self.overrides:
                e = self.overrides[t]
                out[i] = 0.0 if e is None else e.eval(X[i])
        return out

    def expressions(self):
        return [e for e in [self.expr, *self.overrides.values()] if e is not None]

    def action_window(self) -> tuple[int, int] | None:
        """Index range read or written by any ``f_n`` (sequence spaces)."""
        idx = set()
        for e in self.expressions():
            idx |= e.coords() | e.outputs()
        return (min(idx), max(idx)) if idx else None

    def analytic_constants(self, p=2) -> tuple[float, float]:
        """Grammar-derived upper bounds for (c, M)."""
        exprs = self.expressions()
        if not exprs:
            return 0.0, 0.0
        return max(e.lipschitz(p) for e in exprs), max(e.sup_bound(p) for e in exprs)

    def to_json(self):
        out = {"c": self.c, "M": self.M, "expr": None if self.expr is None else self.expr.to_json()}
        if self.overrides:
            out["overrides"] = {str(n): (None if e is None else e.to_json()) for n, e in sorted(self.overrides.items())}
        return out

    @classmethod
    def from_json(cls, obj: Mapping):
        expr = obj.get("expr")
        overrides = {int(n): (None if e is None else expr_from_json(e)) for n, e in obj.get("overrides", {}).items()}
        return cls(None if expr is None else expr_from_json(expr), obj["c"], obj["M"], overrides)


@dataclass
class Audit:
    c_emp: float
    M_emp: float
    c_flag: bool
    M_flag: bool

    @property
    def flagged(self) -> bool:
        return self.c_flag or self.M_flag


def _random_points(space, count, radius, rng, window):
    if isinstance(space, DenseSpace):
        X = rng.uniform(-1.0, 1.0, (count, space.dim))
        scale = radius * rng.uniform(0.0, 1.0, count) / np.maximum(np.linalg.norm(X, axis=1), 1e-300)
        return list(X * scale[:, None])
    lo, hi = window if window is not None else space.probe
    idx = np.arange(lo - 2, hi + 3)
    out = []
    for _ in range(count):
        vals = rng.uniform(-1.0, 1.0, idx.size)
        vals *= radius * rng.uniform() / max(np.linalg.norm(vals), 1e-300)
        out.append(BiSeq(zip(idx.tolist(), vals)))
    return out


def audit_constants(pert: PerturbationSequence, space, count=200, radius=10.0, times=range(-5, 6), p=2, seed=0) -> Audit:
    """Sampled Lipschitz quotients and sup norms of ``f_n``.

    Pairs include near-coincident points (log-uniform separations) so that
    derivative-scale quotients are seen.
    """
    if count < 2:
        raise ValueError("count must be at least 2")
    p = check_p(p)
    rng = np.random.default_rng(seed)
    window = pert.action_window()
    times = sorted(set(times) | set(pert.overrides))
    c_emp = 0.0
    M_emp = 0.0
    if not pert.is_zero:
        xs = _random_points(space, count, radius, rng, window)
        dirs = _random_points(space, count, 1.0, rng, window)
        for n in times:
            for x, u in zip(xs, dirs):
                nu = norm(u, p)
                if nu == 0.0:
                    continue
                step = 10.0 ** rng.uniform(-4, math.log10(radius))
                y = x + u * (step / nu)
                fx, fy = pert(n, x), pert(n, y)
                d = norm(x - y, p)
                if d > 0:
                    c_emp = max(c_emp, norm(fx - fy, p) / d)
                M_emp = max(M_emp, norm(fx, p), norm(fy, p))
    return Audit(c_emp, M_emp, c_emp > pert.c * (1 + 1e-6), M_emp > pert.M * (1 + 1e-12))


class NonlinearSystem:
    """``F_n = A_n + f_n`` with derived growth bound ``rho``."""

    def __init__(self, seq: OperatorSequence, pert: PerturbationSequence, p=2):
        self.seq = seq
        self.pert = pert
        self.p = check_p(p)
        self.rho = global_growth_bound(seq, self.p)
        self._check_spaces()

    def _check_spaces(self):
        sparse = isinstance(self.seq.space, SequenceSpace)
        for e in self.pert.expressions():
            for node in _embeds(e):
                if isinstance(node.direction, BiSeq) != sparse:
                    raise ValueError("perturbation direction does not match the state space")
                if not sparse and node.direction.shape != (self.seq.space.dim,):
                    raise ValueError(
                        f"perturbation direction has shape {node.direction.shape}, space is dense({self.seq.space.dim},)"
                    )

    @property
    def c(self) -> float:
        return self.pert.c

    @property
    def backward_factor(self) -> float:
        """``c e^rho``; the single-step inverse solve contracts iff this is < 1."""
        return self.pert.c * math.exp(self.rho)

    def F(self, n, x):
        return self.seq[n].apply(x) + self.pert(n, x)


def _embeds(e):
    if isinstance(e, Embed):
        yield e
    elif isinstance(e, Scale):
        yield from _embeds(e.arg)
    elif isinstance(e, Sum):
        for a in e.args:
            yield from _embeds(a)


def nonlinear_forward(sys: NonlinearSystem, m: int, n: int, x):
    """``F_{m-1} o ... o F_n (x)`` for ``m >= n``."""
    if m < n:
        raise ValueError("nonlinear_forward needs m >= n")
    x = as_vector(x)
    for k in range(n, m):
        x = sys.F(k, x)
    return x


def inverse_step(sys: NonlinearSystem, j: int, x, tol: float, trace: list | None = None):
    """Solve ``F_j(y) = x`` by iterating ``y <- A_j^{-1}(x - f_j(y))``.

    Stops once the step change is at most ``tol (1 - c e^rho)``, which bounds the
    distance to the exact preimage by ``tol``. A floor of a few ulps of ``|y|``
    keeps huge backward orbit points from stalling the loop.
    """
    q = sys.backward_factor
    if q >= 1.0:
        raise ContractionError(
            f"backward step needs c*e^rho < 1, got c={sys.c:g}, rho={sys.rho:g}, c*e^rho={q:g}"
        )
    op = sys.seq[j]
    x = as_vector(x)
    y = op.apply_inverse(x)
    if sys.pert.at(j) is None:
        return y
    stop = tol * (1.0 - q)
    for _ in range(BACKWARD_MAX_ITER):
        y_new = op.apply_inverse(x - sys.pert(j, y))
        gap = norm(y_new - y, sys.p)
        if trace is not None:
            trace.append(gap)
        y = y_new
        if gap <= max(stop, 4 * np.finfo(float).eps * norm(y, sys.p)):
            return y
    residual = norm(sys.F(j, y) - x, sys.p)
    raise ConvergenceError(f"inverse of F_{j} did not converge in {BACKWARD_MAX_ITER} steps (residual {residual:.3e})", y)


def nonlinear_backward(sys: NonlinearSystem, m: int, n: int, x, tol: float = 1e-12):
    """``F_m^{-1} o ... o F_{n-1}^{-1} (x)`` for ``m < n`` (identity for m == n)."""
    if m > n:
        raise ValueError("nonlinear_backward needs m <= n")
    if tol <= 0:
        raise ValueError("tol must be positive")
    x = as_vector(x)
    for j in range(n - 1, m - 1, -1):
        x = inverse_step(sys, j, x, tol)
    return x
