"""Proximity operators of the squared box-norm and squared k-support norm.

All operators here compute prox of (lam/2) * ||.||^2. Inside a proximal
gradient step of size s the same routine is called with lam' = s * lam
(see `ProxConfig.scaled`).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Literal

import numpy as np
from numpy.typing import ArrayLike

from boxnorm.errors import ConsistencyError, ParameterError
from boxnorm.vecnorm import (
    BoxParams,
    FloatArray,
    NormDecomposition,
    as_vector,
    check_k,
    solve_breakpoints,
    theta_certificate,
)

logger = logging.getLogger(__name__)

ProxMethod = Literal["fast", "reference"]


@dataclass(frozen=True)
class ProxConfig:
    lam: float
    interp_tol: float = 1e-8

    def __post_init__(self) -> None:
        if not (math.isfinite(self.lam) and self.lam > 0):
            raise ParameterError(f"prox parameter lambda must be positive, got {self.lam}")
        if not 0 < self.interp_tol <= 1e-6:
            raise ParameterError(f"interp_tol must lie in (0, 1e-6], got {self.interp_tol}")

    def scaled(self, step: float) -> ProxConfig:
        return replace(self, lam=self.lam * step)


def box_theta_for_prox(w: FloatArray, params: BoxParams, cfg: ProxConfig) -> NormDecomposition:
    """theta of the squared box-norm prox: clamp(alpha*|w_i| - lam, a, b), sum = c."""
    d = w.size
    params.validate_for(d)
    a, b, c = params.a, params.b, params.c
    abs_w = np.abs(w)
    peak = float(abs_w.max()) if d else 0.0
    if a == b or c >= d * b:
        theta = np.full(d, a if a == b else b)
        alpha = (b + cfg.lam) / peak if peak > 0 else 0.0
    else:
        theta, alpha = solve_breakpoints(abs_w, lo=a, hi=b, c=c, shift=cfg.lam, tol=cfg.interp_tol)
    return theta_certificate(theta, alpha, a, b, c)


def prox_sq_box(
    w: ArrayLike, params: BoxParams, cfg: ProxConfig
) -> tuple[FloatArray, NormDecomposition]:
    w = as_vector(w)
    cert = box_theta_for_prox(w, params, cfg)
    x = cert.theta * w / (cert.theta + cfg.lam)
    return x, cert


def _ksup_theta_reference(z: FloatArray, k: int, lam: float) -> FloatArray:
    """theta for magnitudes sorted nonincreasing, scanning (r, l) pairs.

    r leading components sit at 1, components r+1..l follow alpha*z - lam,
    the rest are 0. For each r the end l of the middle segment is scanned
    over the whole support, giving O(d k) after the sort.
    """
    d = z.size
    rel = 1e-12
    prefix = np.concatenate([[0.0], np.cumsum(z)])
    z_ext = np.concatenate([[np.inf], z, [0.0]])  # 1-based, z_0 = inf, z_{d+1} = 0

    for r in range(k + 1):
        if r == k:
            # empty middle: alpha in [(lam+1)/z_k, lam/z_{k+1}]
            if z_ext[k] > 0 and (lam + 1.0) * z_ext[k + 1] <= lam * z_ext[k] * (1 + rel):
                theta = np.zeros(d)
                theta[:k] = 1.0
                return theta
            continue
        ls = np.arange(r + 1, d + 1)
        mid = prefix[ls] - prefix[r]
        valid = mid > 0
        alpha = np.where(valid, (k - r + lam * (ls - r)) / np.where(valid, mid, 1.0), 0.0)
        with np.errstate(invalid="ignore"):
            top_ok = (r == 0) or (alpha * z_ext[r] >= (lam + 1.0) * (1 - rel))
            next_ok = alpha * z_ext[r + 1] <= (lam + 1.0) * (1 + rel)
            end_ok = alpha * z_ext[ls] >= lam * (1 - rel)
            after_ok = alpha * z_ext[ls + 1] <= lam * (1 + rel)
        hits = np.flatnonzero(valid & top_ok & next_ok & end_ok & after_ok)
        if hits.size:
            h = int(hits[0])
            l_end = int(ls[h])
            theta = np.zeros(d)
            theta[:r] = 1.0
            theta[r:l_end] = np.clip(alpha[h] * z[r:l_end] - lam, 0.0, 1.0)
            return theta
    raise ConsistencyError("reference k-support prox found no consistent (r, l) pair")


def prox_sq_ksup(
    w: ArrayLike, k: int, cfg: ProxConfig, *, method: ProxMethod = "fast"
) -> FloatArray:
    """prox of (lam/2)||.||_(k)^2; theta in [0, 1] with sum k, x_i = 0 where theta_i = 0."""
    w = as_vector(w)
    d = w.size
    check_k(k, d)
    abs_w = np.abs(w)

    if method == "fast":
        theta, _ = solve_breakpoints(abs_w, lo=0.0, hi=1.0, c=float(k), shift=cfg.lam, tol=cfg.interp_tol)
    elif method == "reference":
        if np.count_nonzero(abs_w) <= k:
            theta = (abs_w > 0).astype(np.float64)
        else:
            order = np.argsort(-abs_w, kind="stable")
            theta = np.empty(d)
            theta[order] = _ksup_theta_reference(abs_w[order], k, cfg.lam)
    else:
        raise ParameterError(f"unknown prox method {method!r}")
    return theta * w / (theta + cfg.lam)


def _ksup_prox_real_k(w: FloatArray, k: float, lam: float, tol: float) -> FloatArray:
    """prox of (lam/2)||.||^2 for the theta set [0, 1]^d with budget k (real k allowed)."""
    if k <= 0:
        return np.zeros_like(w)
    theta, _ = solve_breakpoints(np.abs(w), lo=0.0, hi=1.0, c=float(k), shift=lam, tol=tol)
    return theta * w / (theta + lam)


def grad_sq_box(w: ArrayLike, params: BoxParams, cfg: ProxConfig | None = None) -> FloatArray:
    """Gradient of ||w||_box^2: (2/a)(w - prox_{rho ||.||_(k)^2}(w)), rho = a / (2(b - a)).

    Lipschitz with constant 2/a. For a == b the norm is ||w||_2^2 / a.
    """
    w = as_vector(w)
    d = w.size
    params.validate_for(d)
    a, b = params.a, params.b
    if a == b:
        return 2.0 * w / a
    tol = cfg.interp_tol if cfg is not None else 1e-8
    z = _ksup_prox_real_k(w, params.rho(d), a / (b - a), tol)
    return (2.0 / a) * (w - z)


def moreau_split(w: ArrayLike, params: BoxParams) -> tuple[FloatArray, FloatArray]:
    """w = u + z with z the k-support part and u the l2 part.

    (1/a)||u||^2 + (1/(b-a))||z||_(k)^2 equals ||w||_box^2.
    """
    w = as_vector(w)
    d = w.size
    params.validate_for(d)
    a, b = params.a, params.b
    if a == b:
        return w.copy(), np.zeros_like(w)
    if not params.is_integer_k(d):
        raise ParameterError(f"moreau split needs an integer k, got rho={params.rho(d)}")
    k = params.k(d)
    if k == 0:
        return w.copy(), np.zeros_like(w)
    z = prox_sq_ksup(w, k, ProxConfig(lam=a / (b - a)))
    return w - z, z
