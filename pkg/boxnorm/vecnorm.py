"""Vector box-norm, k-support norm, their duals and the (k,p) variants.

The box-norm of w is sqrt(min over theta of sum_i w_i^2 / theta_i) subject to
a <= theta_i <= b and sum_i theta_i <= c. Its minimizer has the clamp form
theta_i = clamp(alpha * |w_i|, a, b) with alpha fixed by the sum budget; the
breakpoint solver below finds alpha by binary search over the 2d breakpoints
of S(alpha) followed by linear interpolation, in O(d log d).
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import optimize

from boxnorm.errors import ConsistencyError, InputError, NumericError, ParameterError, ScaleError
from boxnorm.settings import get_settings

logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]

_INTEGER_SNAP = 1e-9
_EPS = float(np.finfo(np.float64).eps)
_OVERLAP_ORACLE_MAX_DIM = 8


def as_vector(w: ArrayLike, *, name: str = "w") -> FloatArray:
    arr = np.asarray(w, dtype=np.float64)
    if arr.ndim != 1:
        raise InputError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} has non-finite entries")
    return arr


def _snap_floor(x: float, slack: float = 0.0) -> int:
    r = round(x)
    if abs(x - r) <= max(_INTEGER_SNAP * max(1.0, abs(x)), slack):
        return int(r)
    return int(math.floor(x))


@dataclass(frozen=True)
class BoxParams:
    """Box bounds a <= theta_i <= b with sum budget c.

    The dimension is not part of the parameters; `validate_for(d)` checks
    d*a <= c <= d*b at each call site.
    """

    a: float
    b: float
    c: float

    def __post_init__(self) -> None:
        for name in ("a", "b", "c"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ParameterError(f"box parameter {name} must be finite, got {v}")
        if not 0.0 < self.a <= self.b:
            raise ParameterError(f"box parameters need 0 < a <= b, got a={self.a}, b={self.b}")
        if self.c <= 0.0:
            raise ParameterError(f"box budget c must be positive, got {self.c}")

    @classmethod
    def from_k(cls, a: float, b: float, k: float, d: int) -> BoxParams:
        """Parameters with c = (b - a) k + d a, so that rho(d) == k."""
        if d < 1:
            raise ParameterError(f"dimension must be positive, got {d}")
        if not 0.0 <= k <= d:
            raise ParameterError(f"k must lie in [0, {d}], got {k}")
        return cls(a=float(a), b=float(b), c=(b - a) * k + d * a)

    def validate_for(self, d: int) -> None:
        slack = 1e-12 * max(1.0, self.c)
        if self.c < d * self.a - slack or self.c > d * self.b + slack:
            raise ParameterError(
                f"box budget c={self.c} outside [d*a, d*b] = [{d * self.a}, {d * self.b}] for d={d}"
            )

    def rho(self, d: int) -> float:
        if self.a == self.b:
            return float(d)
        return min(float(d), max(0.0, (self.c - d * self.a) / (self.b - self.a)))

    def rho_slack(self, d: int) -> float:
        """Rounding error of rho: c - d*a cancels as a approaches b."""
        if self.a == self.b:
            return 0.0
        return 64.0 * _EPS * (abs(self.c) + d * self.a) / (self.b - self.a)

    def k(self, d: int) -> int:
        return _snap_floor(self.rho(d), self.rho_slack(d))

    def is_integer_k(self, d: int) -> bool:
        rho = self.rho(d)
        return abs(rho - round(rho)) <= max(_INTEGER_SNAP * max(1.0, rho), self.rho_slack(d))


@dataclass(frozen=True)
class KSupportParams:
    k: int

    def __post_init__(self) -> None:
        if isinstance(self.k, bool) or int(self.k) != self.k or self.k < 1:
            raise ParameterError(f"k must be a positive integer, got {self.k}")

    def validate_for(self, d: int) -> None:
        if self.k > d:
            raise ParameterError(f"k={self.k} exceeds dimension d={d}")


@dataclass(frozen=True, eq=False)
class NormDecomposition:
    """Certificate of the minimizing theta.

    q components sit at the upper bound, ell at the lower bound, and the
    remaining components share the residual budget p_res through theta_i =
    alpha * |w_i|.
    """

    q: int
    ell: int
    p_res: float
    alpha: float
    theta: FloatArray = field(repr=False)


@dataclass(frozen=True, eq=False)
class VertexSet:
    gammas: tuple[FloatArray, ...]

    def __post_init__(self) -> None:
        if not self.gammas:
            raise ParameterError("vertex set is empty")
        if any(g.ndim != 1 for g in self.gammas) or len({g.shape for g in self.gammas}) != 1:
            raise ParameterError("vertices must be vectors of one common length")
        stacked = np.vstack(self.gammas)
        if np.any(stacked < 0) or not np.all(np.isfinite(stacked)):
            raise ParameterError("vertices must be finite and nonnegative")
        if np.any(stacked.sum(axis=0) <= 0):
            raise ParameterError("vertex sum must be strictly positive componentwise")

    @classmethod
    def from_arrays(cls, gammas: Sequence[ArrayLike]) -> VertexSet:
        return cls(tuple(np.asarray(g, dtype=np.float64) for g in gammas))

    @classmethod
    def from_groups(cls, groups: Sequence[Sequence[int]], d: int) -> VertexSet:
        """Indicator vertices 1_g, one per group (0-based indices)."""
        gammas = []
        for g in groups:
            v = np.zeros(d)
            v[list(g)] = 1.0
            gammas.append(v)
        return cls(tuple(gammas))

    @property
    def dim(self) -> int:
        return int(self.gammas[0].shape[0])


def _breakpoint_sum(alpha: float, abs_w: FloatArray, lo: float, hi: float, shift: float) -> float:
    return float(np.clip(alpha * abs_w - shift, lo, hi).sum())


def _check_monotone(bps: FloatArray, abs_w: FloatArray, lo: float, hi: float, shift: float) -> None:
    sums = np.clip(np.outer(bps, abs_w) - shift, lo, hi).sum(axis=1)
    drops = np.diff(sums)
    if np.any(drops < -1e-12 * max(1.0, float(sums[-1]))):
        raise ConsistencyError("breakpoint function S(alpha) is not monotone")


def solve_breakpoints(
    abs_w: FloatArray,
    *,
    lo: float,
    hi: float,
    c: float,
    shift: float = 0.0,
    tol: float | None = None,
) -> tuple[FloatArray, float]:
    """Find theta = clamp(alpha*|w| - shift, lo, hi) with sum(theta) = c.

    Returns (theta, alpha). Zero entries stay at `lo`. When the nonzero
    entries saturate at `hi` before the budget is reached, alpha is the
    largest breakpoint and sum(theta) < c.
    """
    settings = get_settings()
    tol = settings.interp_tol if tol is None else tol
    d = abs_w.size
    nz = abs_w[abs_w > 0]
    if nz.size == 0:
        return np.full(d, min(hi, max(lo, c / d))), 0.0

    bps = np.concatenate([(lo + shift) / nz, (hi + shift) / nz])
    bps.sort(kind="stable")
    if settings.debug_checks:
        _check_monotone(bps, abs_w, lo, hi, shift)

    top = bps.size - 1
    s_top = _breakpoint_sum(float(bps[top]), abs_w, lo, hi, shift)
    if s_top <= c:
        alpha = float(bps[top])
        return np.clip(alpha * abs_w - shift, lo, hi), alpha

    # smallest index j with S(bps[j]) >= c; flat stretches resolve to the left end
    left, right = 0, top
    while left < right:
        mid = (left + right) // 2
        if _breakpoint_sum(float(bps[mid]), abs_w, lo, hi, shift) >= c:
            right = mid
        else:
            left = mid + 1
    j = left

    if j == 0:
        alpha = float(bps[0])
    else:
        a0, a1 = float(bps[j - 1]), float(bps[j])
        s0 = _breakpoint_sum(a0, abs_w, lo, hi, shift)
        s1 = _breakpoint_sum(a1, abs_w, lo, hi, shift)
        alpha = a0 + (c - s0) * (a1 - a0) / (s1 - s0)
        alpha = min(max(alpha, a0), a1)

    theta = np.clip(alpha * abs_w - shift, lo, hi)
    gap = abs(float(theta.sum()) - c)
    if gap > tol * max(1.0, c):
        raise NumericError(f"breakpoint interpolation missed the budget by {gap:.3e}")
    return theta, alpha


def theta_certificate(theta: FloatArray, alpha: float, lo: float, hi: float, c: float) -> NormDecomposition:
    if lo == hi:
        q, ell = 0, int(theta.size)
    else:
        q = int(np.count_nonzero(theta >= hi))
        ell = int(np.count_nonzero(theta <= lo))
    p_res = c - q * hi - ell * lo
    if q + ell == theta.size:
        p_res = 0.0
    return NormDecomposition(q=q, ell=ell, p_res=float(p_res), alpha=float(alpha), theta=theta)


def theta_objective(w: ArrayLike, theta: ArrayLike) -> float:
    """sum_i w_i^2 / theta_i (terms with w_i = 0 contribute nothing)."""
    w = as_vector(w)
    theta = as_vector(theta, name="theta")
    mask = w != 0
    return float(np.sum(w[mask] ** 2 / theta[mask]))


def box_theta(w: FloatArray, params: BoxParams) -> NormDecomposition:
    """Minimizing theta of the box-norm objective for a validated vector."""
    d = w.size
    params.validate_for(d)
    abs_w = np.abs(w)
    a, b, c = params.a, params.b, params.c
    peak = float(abs_w.max()) if d else 0.0

    if a == b:
        theta = np.full(d, a)
        alpha = b / peak if peak > 0 else 0.0
    elif c >= d * b:
        theta = np.full(d, b)
        alpha = b / peak if peak > 0 else 0.0
    else:
        theta, alpha = solve_breakpoints(abs_w, lo=a, hi=b, c=c)
    return theta_certificate(theta, alpha, a, b, c)


def box_norm(w: ArrayLike, params: BoxParams) -> tuple[float, NormDecomposition]:
    w = as_vector(w)
    cert = box_theta(w, params)
    value = math.sqrt(theta_objective(w, cert.theta))
    return value, cert


def _ksup(params: KSupportParams | int) -> KSupportParams:
    return params if isinstance(params, KSupportParams) else KSupportParams(int(params))


def check_k(k: int, d: int) -> None:
    if isinstance(k, bool) or int(k) != k or not 1 <= k <= d:
        raise ParameterError(f"k must be an integer in [1, {d}], got {k}")


def _sorted_magnitudes(w: FloatArray) -> FloatArray:
    return np.abs(w)[np.argsort(-np.abs(w), kind="stable")]


def k_support_norm(w: ArrayLike, params: KSupportParams | int) -> tuple[float, int]:
    """k-support norm and the count q of leading components kept unshrunk.

    q is the first integer in {0, ..., k-1} with
    sum_{j>q} |w|_j >= (k - q) |w|_{q+1} (sorted nonincreasing).
    """
    w = as_vector(w)
    p = _ksup(params)
    p.validate_for(w.size)
    k = p.k
    z = _sorted_magnitudes(w)
    tails = np.cumsum(z[::-1])[::-1]
    qs = np.arange(k)
    ok = tails[:k] >= (k - qs) * z[:k]
    ok[-1] = True
    q = int(np.argmax(ok))
    value_sq = float(np.sum(z[:q] ** 2)) + float(tails[q]) ** 2 / (k - q)
    return math.sqrt(value_sq), q


def dual_box_norm(u: ArrayLike, params: BoxParams) -> float:
    u = as_vector(u, name="u")
    d = u.size
    params.validate_for(d)
    a, b = params.a, params.b
    if a == b:
        return math.sqrt(a) * float(np.linalg.norm(u))
    rho = params.rho(d)
    k = min(params.k(d), d)
    z = _sorted_magnitudes(u)
    top = float(np.sum(z[:k] ** 2))
    following = float(z[k]) ** 2 if k < d else 0.0
    frac = max(0.0, rho - k)
    value_sq = a * float(np.dot(u, u)) + (b - a) * (top + frac * following)
    return math.sqrt(value_sq)


def dual_k_support_norm(u: ArrayLike, params: KSupportParams | int) -> float:
    u = as_vector(u, name="u")
    p = _ksup(params)
    p.validate_for(u.size)
    z = _sorted_magnitudes(u)
    return float(np.linalg.norm(z[: p.k]))


def dual_ksup_q_norm(u: ArrayLike, k: int, q: float) -> float:
    """(sum of the k largest |u_i|^q)^(1/q); q = inf gives max |u_i|."""
    u = as_vector(u, name="u")
    check_k(k, u.size)
    if not (q >= 1.0):
        raise ParameterError(f"q must lie in [1, inf], got {q}")
    z = _sorted_magnitudes(u)[:k]
    if math.isinf(q):
        return float(z[0])
    return float(np.sum(z**q) ** (1.0 / q))


def ksup_inf_norm(w: ArrayLike, k: int) -> float:
    """(k, inf)-support norm: max(||w||_inf, ||w||_1 / k)."""
    w = as_vector(w)
    check_k(k, w.size)
    if w.size == 0:
        return 0.0
    abs_w = np.abs(w)
    return float(max(abs_w.max(), abs_w.sum() / k))


def ksup_one_norm(w: ArrayLike, k: int) -> float:
    """(k, 1)-support norm; its dual is the l_inf norm for every k, so it is l_1."""
    w = as_vector(w)
    check_k(k, w.size)
    return float(np.abs(w).sum())


def polyhedral_dual_norm(u: ArrayLike, vs: VertexSet) -> float:
    """Dual Theta-norm when Theta is the hull of the vertex set: max_l sqrt(sum gamma^l u^2)."""
    u = as_vector(u, name="u")
    if vs.dim != u.size:
        raise ParameterError(f"vertex dimension {vs.dim} does not match d={u.size}")
    u2 = u**2
    return math.sqrt(max(float(np.dot(g, u2)) for g in vs.gammas))


def box_dual_pairing_gap(u: ArrayLike, w: ArrayLike, params: BoxParams) -> float:
    u = as_vector(u, name="u")
    w = as_vector(w)
    value, _ = box_norm(w, params)
    return dual_box_norm(u, params) * value - float(np.dot(u, w))


def overlap_group_lasso_oracle(w: ArrayLike, groups: Sequence[Sequence[int]]) -> float:
    """Group lasso with overlap norm, for tests at d <= 8.

    Evaluated through its dual: the sup of <u, w> over ||u_g||_2 <= 1 for all
    groups g. The primal is an infimum over one latent vector per group,
    which is C(d, k) * k unknowns for the k-support groups and nonsmooth at
    every zero group. The dual has only d unknowns, a linear objective and
    smooth quadratic constraints, so SLSQP converges to a tight tolerance in
    few iterations. A smoothed first-order primal solve needs many thousands
    of iterations and keeps the smoothing bias. Both routes grow with the
    group count, which is exponential in d.

    The solver message, iteration count and the largest constraint
    violation max_g(||u_g||^2 - 1) are logged at DEBUG.
    """
    w = as_vector(w)
    d = w.size
    if d > _OVERLAP_ORACLE_MAX_DIM:
        raise ScaleError(f"overlap oracle limited to d <= {_OVERLAP_ORACLE_MAX_DIM}, got {d}")
    index_sets = [np.asarray(sorted(set(g)), dtype=np.int64) for g in groups]
    covered = set().union(*(set(g.tolist()) for g in index_sets)) if index_sets else set()
    if covered != set(range(d)):
        raise ParameterError("groups must cover every coordinate")
    if not np.any(w):
        return 0.0

    constraints: list[dict[str, Any]] = []
    for g in index_sets:

        def fun(u: FloatArray, g: NDArray[np.int64] = g) -> float:
            return 1.0 - float(np.dot(u[g], u[g]))

        def jac(u: FloatArray, g: NDArray[np.int64] = g) -> FloatArray:
            out = np.zeros_like(u)
            out[g] = -2.0 * u[g]
            return out

        constraints.append({"type": "ineq", "fun": fun, "jac": jac})

    res = optimize.minimize(
        lambda u: -float(np.dot(u, w)),
        x0=0.5 * w / float(np.linalg.norm(w)),
        jac=lambda u: -w,
        method="SLSQP",
        constraints=constraints,
        options={"ftol": 1e-14, "maxiter": 2000},
    )
    violation = max(0.0, max(float(np.dot(res.x[g], res.x[g])) - 1.0 for g in index_sets))
    logger.debug(
        "overlap oracle solved",
        extra={"status": res.message, "nit": int(res.nit), "violation": violation, "groups": len(index_sets)},
    )
    if not res.success:
        logger.warning("overlap oracle did not converge", extra={"status": res.message, "violation": violation})
    return float(np.dot(res.x, w))
