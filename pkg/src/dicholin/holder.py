"""Hoelder regularity of the conjugacies: admissible exponents, the smallness
conditions that keep the fixed point in a Hoelder ball, and sampled slopes."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from ._parallel import ordered_map
from .cocycle import DenseSpace
from .conjugacy import ConjugacyProblem, H
from .linops import BiSeq, as_vector, norm

__all__ = [
    "alpha_max",
    "HolderBudget",
    "HolderReport",
    "holder_smallness",
    "HolderRow",
    "empirical_holder",
    "NOISE_FACTOR",
]

NOISE_FACTOR = 10.0


def alpha_max(lam: float, rho: float) -> float:
    """``lam / rho``; ``inf`` when ``rho == 0`` (every exponent is admissible)."""
    if lam <= 0 or rho < 0:
        raise ValueError("need lambda > 0 and rho >= 0")
    return math.inf if rho == 0 else lam / rho


@dataclass(frozen=True)
class HolderBudget:
    lam: float
    rho: float
    D: float
    M: float
    c: float
    alpha: float

    def __post_init__(self):
        if self.D <= 0 or self.c < 0 or self.M < 0:
            raise ValueError("need D > 0, c >= 0, M >= 0")
        a0 = alpha_max(self.lam, self.rho)
        if not 0 < self.alpha < a0:
            raise ValueError(f"alpha must lie in (0, {a0:g}), got {self.alpha:g}")

    @property
    def alpha0(self) -> float:
        return alpha_max(self.lam, self.rho)

    @property
    def M_eff(self) -> float:
        # the Hoelder estimates are written for M > 1
        return max(self.M, 1.0)

    @classmethod
    def from_problem(cls, prob: ConjugacyProblem, alpha: float) -> "HolderBudget":
        return cls(prob.cert.lam, prob.sys.rho, prob.cert.D, prob.sys.pert.M, prob.sys.c, alpha)


@dataclass(frozen=True)
class HolderReport:
    c_in_range: bool
    backward_factor: float
    forward_ratio: float
    backward_ratio: float
    L: float
    k_threshold: float
    K: float | None

    @property
    def backward_ok(self) -> bool:
        return self.backward_factor < 1.0

    @property
    def series_finite(self) -> bool:
        return self.forward_ratio < 1.0 and self.backward_ratio < 1.0

    @property
    def k_invariance(self) -> bool:
        return self.k_threshold <= 1.0

    @property
    def passed(self) -> bool:
        return self.c_in_range and self.backward_ok and self.series_finite and self.k_invariance

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "c_in_range": self.c_in_range,
            "backward_factor": self.backward_factor,
            "backward_ok": self.backward_ok,
            "forward_ratio": self.forward_ratio,
            "backward_ratio": self.backward_ratio,
            "series_finite": self.series_finite,
            "L": _finite_or_none(self.L),
            "k_threshold": _finite_or_none(self.k_threshold),
            "k_invariance": self.k_invariance,
            "K": self.K,
        }


def _finite_or_none(x):
    return x if math.isfinite(x) else None


def holder_smallness(b: HolderBudget) -> HolderReport:
    """Evaluate every condition of the Hoelder fixed-point argument.

    ``L = 2 M' D c^a [1/(1-r1) + r2/(1-r2)]`` with ``r1 = e^{-lam}(e^rho + c)^a``
    and ``r2 = e^{-lam}(e^rho / (1 - c e^rho))^a``; the invariance threshold is
    ``4 M' D c^a e^{a rho} (1 + e^{-lam + a rho}) / (1 - e^{-lam + a rho})``.
    ``K`` is reported (as 1, any K > 1 works) only when everything passes.
    """
    a, lam, rho, c = b.alpha, b.lam, b.rho, b.c
    pre = b.M_eff * b.D * c**a
    back = c * math.exp(rho)
    r1 = math.exp(-lam) * (math.exp(rho) + c) ** a
    r2 = math.exp(-lam) * (math.exp(rho) / (1.0 - back)) ** a if back < 1.0 else math.inf
    if c == 0.0:
        L = 0.0
    elif r1 < 1.0 and r2 < 1.0:
        L = 2.0 * pre * (1.0 / (1.0 - r1) + r2 / (1.0 - r2))
    else:
        L = math.inf
    g = math.exp(-lam + a * rho)
    if c == 0.0:
        kt = 0.0
    elif g < 1.0:
        kt = 4.0 * pre * math.exp(a * rho) * (1.0 + g) / (1.0 - g)
    else:
        kt = math.inf
    report = HolderReport(0.0 <= c <= 1.0, back, r1, r2, L, kt, None)
    if report.passed:
        report = HolderReport(report.c_in_range, back, r1, r2, L, kt, 1.0)
    return report


@dataclass(frozen=True)
class HolderRow:
    scale: float
    max_diff: float
    slope_window: float | None


def _unit_directions(x_center, count, rng, support):
    if isinstance(x_center, BiSeq):
        idx = np.array(support)
        U = rng.standard_normal((count, idx.size))
        U /= np.linalg.norm(U, axis=1, keepdims=True)
        return [BiSeq(zip(idx.tolist(), row)) for row in U]
    U = rng.standard_normal((count, x_center.shape[0]))
    return list(U / np.linalg.norm(U, axis=1, keepdims=True))


def empirical_holder(
    prob: ConjugacyProblem,
    n: int,
    x_center,
    scales,
    pairs_per_scale: int = 8,
    seed: int = 0,
    spread: float = 0.1,
):
    """Least-squares slope of ``log max |H_n(x) - H_n(y)|`` against ``log s``.

    For each scale ``s`` the pairs satisfy ``|x - y| = s`` (in the 2-norm of
    the sampled coordinates) with ``x`` within ``spread`` of ``x_center``.
    Scales at or below ``NOISE_FACTOR`` times the solver error are dropped with
    a warning. Returns ``(slope, rows)``.
    """
    x_center = as_vector(x_center)
    prob.seq.space.check(x_center)
    scales = [float(s) for s in scales]
    if any(a <= b for a, b in zip(scales, scales[1:])):
        raise ValueError("scales must be strictly decreasing")
    floor = NOISE_FACTOR * prob.h_err_bound
    kept = [s for s in scales if s > floor]
    for s in scales:
        if s <= floor:
            warnings.warn(f"scale {s:g} is below the noise floor {floor:.3g}; dropped", RuntimeWarning, stacklevel=2)
    if len(kept) < 2:
        raise ValueError("need at least two scales above the noise floor")

    rng = np.random.default_rng(seed)
    support = None
    if isinstance(x_center, BiSeq):
        window = prob.sys.pert.action_window() or (0, 0)
        b = x_center.bounds() or window
        support = list(range(min(b[0], window[0]) - 1, max(b[1], window[1]) + 2))
    jobs = []
    for s in kept:
        offs = _unit_directions(x_center, pairs_per_scale, rng, support)
        dirs = _unit_directions(x_center, pairs_per_scale, rng, support)
        radii = spread * rng.uniform(0.0, 1.0, pairs_per_scale)
        for u, r, d in zip(offs, radii, dirs):
            x = x_center + u * float(r)
            jobs.append((s, x, x + d * s))

    def diff(job):
        _, x, y = job
        return norm(H(prob, n, x) - H(prob, n, y), prob.p)

    diffs = ordered_map(diff, jobs)
    rows = []
    for i, s in enumerate(kept):
        m = max(diffs[i * pairs_per_scale:(i + 1) * pairs_per_scale])
        local = None
        if rows and m > 0 and rows[-1].max_diff > 0:
            local = math.log(rows[-1].max_diff / m) / math.log(rows[-1].scale / s)
        rows.append(HolderRow(s, m, local))
    logs = np.log([r.scale for r in rows])
    logd = np.log(np.maximum([r.max_diff for r in rows], np.finfo(float).tiny))
    slope = float(np.polyfit(logs, logd, 1)[0])
    return slope, rows
