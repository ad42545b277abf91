"""Orthogonally invariant matrix norms built on singular values.

Every norm here is a vector norm applied to sigma(W); every prox is
U diag(prox(sigma)) V^T. The cluster norm of multitask clustering is the
spectral box-norm under `cluster_to_box`.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from numpy.typing import ArrayLike

from boxnorm.errors import ConsistencyError, InputError, ParameterError
from boxnorm.prox import ProxConfig, moreau_split, prox_sq_box, prox_sq_ksup
from boxnorm.vecnorm import (
    BoxParams,
    FloatArray,
    box_norm,
    box_theta,
    check_k,
    dual_box_norm,
    dual_k_support_norm,
    dual_ksup_q_norm,
    k_support_norm,
    ksup_inf_norm,
    ksup_one_norm,
)

logger = logging.getLogger(__name__)

_ORTHO_TOL = 1e-10
_SIGN_TOL = 1e-14

NormKind = Literal["box", "ksup", "trace", "frobenius", "ksup_inf", "dual_ksup_q"]
PenaltyKind = Literal["sq_box", "sq_ksup", "sq_frobenius", "trace", "elastic_net"]


def as_matrix(W: ArrayLike, *, name: str = "W") -> FloatArray:
    arr = np.asarray(W, dtype=np.float64)
    if arr.ndim != 2:
        raise InputError(f"{name} must be two-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} has non-finite entries")
    return arr


@dataclass(frozen=True, eq=False)
class SvdFactors:
    """Thin SVD W = U diag(sigma) V^T with r = min(d, T)."""

    U: FloatArray
    sigma: FloatArray
    V: FloatArray

    @property
    def rank_bound(self) -> int:
        return int(self.sigma.size)

    def reconstruct(self, sigma: FloatArray | None = None) -> FloatArray:
        s = self.sigma if sigma is None else sigma
        return (self.U * s) @ self.V.T


def thin_svd(W: ArrayLike) -> SvdFactors:
    """Thin SVD, sigma nonincreasing, first nonzero entry of each U column >= 0."""
    W = as_matrix(W)
    U, sigma, Vt = np.linalg.svd(W, full_matrices=False)
    V = Vt.T.copy()
    U = U.copy()
    for j in range(sigma.size):
        col = U[:, j]
        nz = np.flatnonzero(np.abs(col) > _SIGN_TOL)
        if nz.size and col[nz[0]] < 0:
            U[:, j] = -col
            V[:, j] = -V[:, j]
    return SvdFactors(U=U, sigma=sigma, V=V)


def check_factors(f: SvdFactors, W: FloatArray) -> None:
    """Orthonormality and reconstruction checks on a factorization."""
    r = f.sigma.size
    eye = np.eye(r)
    if np.max(np.abs(f.U.T @ f.U - eye), initial=0.0) > _ORTHO_TOL:
        raise ConsistencyError("left singular vectors are not orthonormal")
    if np.max(np.abs(f.V.T @ f.V - eye), initial=0.0) > _ORTHO_TOL:
        raise ConsistencyError("right singular vectors are not orthonormal")
    resid = float(np.linalg.norm(f.reconstruct() - W))
    if resid > 1e-8 * max(1.0, float(np.linalg.norm(W))):
        raise ConsistencyError(f"SVD reconstruction residual {resid:.3e}")


@dataclass(frozen=True)
class NormSpec:
    kind: NormKind
    box: BoxParams | None = None
    k: int | None = None
    q: float | None = None

    def __post_init__(self) -> None:
        if self.kind == "box" and self.box is None:
            raise ParameterError("box norm needs BoxParams")
        if self.kind in ("ksup", "ksup_inf", "dual_ksup_q") and self.k is None:
            raise ParameterError(f"{self.kind} norm needs k")
        if self.kind == "dual_ksup_q" and self.q is None:
            raise ParameterError("dual_ksup_q norm needs q")

    @classmethod
    def trace(cls) -> NormSpec:
        return cls("trace")

    @classmethod
    def frobenius(cls) -> NormSpec:
        return cls("frobenius")

    @classmethod
    def of_box(cls, params: BoxParams) -> NormSpec:
        return cls("box", box=params)

    @classmethod
    def ksup(cls, k: int) -> NormSpec:
        return cls("ksup", k=k)


@dataclass(frozen=True)
class PenaltySpec:
    """Penalty g with prox of lam*g.

    sq_box, sq_ksup and sq_frobenius are (1/2)||.||^2; trace is ||.||_tr;
    elastic_net is ||.||_tr + (gamma/2)||.||_F^2.
    """

    kind: PenaltyKind
    box: BoxParams | None = None
    k: int | None = None
    gamma: float = 0.0

    def __post_init__(self) -> None:
        if self.kind == "sq_box" and self.box is None:
            raise ParameterError("sq_box penalty needs BoxParams")
        if self.kind == "sq_ksup" and self.k is None:
            raise ParameterError("sq_ksup penalty needs k")
        if not (math.isfinite(self.gamma) and self.gamma >= 0):
            raise ParameterError(f"elastic net gamma must be nonnegative, got {self.gamma}")

    @property
    def label(self) -> str:
        return {
            "sq_box": "box",
            "sq_ksup": "ksup",
            "sq_frobenius": "fr",
            "trace": "trace",
            "elastic_net": "el.net",
        }[self.kind]

    def norm_spec(self) -> NormSpec:
        match self.kind:
            case "sq_box":
                return NormSpec.of_box(self.box)  # type: ignore[arg-type]
            case "sq_ksup":
                return NormSpec.ksup(self.k)  # type: ignore[arg-type]
            case "sq_frobenius":
                return NormSpec.frobenius()
            case _:
                return NormSpec.trace()


def _check_box_dim(params: BoxParams, r: int) -> None:
    try:
        params.validate_for(r)
    except ParameterError as exc:
        raise ParameterError(f"box parameters do not fit r=min(d, T)={r}: {exc}") from exc


def sigma_norm(sigma: FloatArray, spec: NormSpec) -> float:
    """Apply the vector norm of `spec` to a singular value vector."""
    r = sigma.size
    match spec.kind:
        case "box":
            assert spec.box is not None
            _check_box_dim(spec.box, r)
            return box_norm(sigma, spec.box)[0]
        case "ksup":
            assert spec.k is not None
            check_k(spec.k, r)
            return k_support_norm(sigma, spec.k)[0]
        case "trace":
            return float(sigma.sum())
        case "frobenius":
            return float(np.linalg.norm(sigma))
        case "ksup_inf":
            assert spec.k is not None
            return ksup_inf_norm(sigma, spec.k)
        case "dual_ksup_q":
            assert spec.k is not None and spec.q is not None
            return dual_ksup_q_norm(sigma, spec.k, spec.q)
    raise ParameterError(f"unknown norm selector {spec.kind!r}")


def spectral_norm(W: ArrayLike, spec: NormSpec) -> float:
    sigma = thin_svd(W).sigma
    return sigma_norm(sigma, spec)


def spectral_dual_norm(W: ArrayLike, spec: NormSpec) -> float:
    sigma = thin_svd(W).sigma
    r = sigma.size
    match spec.kind:
        case "box":
            assert spec.box is not None
            _check_box_dim(spec.box, r)
            return dual_box_norm(sigma, spec.box)
        case "ksup":
            assert spec.k is not None
            check_k(spec.k, r)
            return dual_k_support_norm(sigma, spec.k)
        case "trace":
            return float(sigma[0]) if r else 0.0
        case "frobenius":
            return float(np.linalg.norm(sigma))
        case "ksup_inf":
            assert spec.k is not None
            return dual_ksup_q_norm(sigma, spec.k, 1.0)
        case "dual_ksup_q":
            assert spec.k is not None and spec.q is not None
            if math.isinf(spec.q):
                return ksup_one_norm(sigma, spec.k)
            if spec.q == 1.0:
                return ksup_inf_norm(sigma, spec.k)
            if spec.q == 2.0:
                return k_support_norm(sigma, spec.k)[0]
            raise ParameterError(f"dual of the (k, q) norm is available for q in {{1, 2, inf}}, got {spec.q}")
    raise ParameterError(f"unknown norm selector {spec.kind!r}")


def penalty_value(W: ArrayLike, spec: PenaltySpec) -> float:
    sigma = thin_svd(W).sigma
    match spec.kind:
        case "sq_box" | "sq_ksup":
            return 0.5 * sigma_norm(sigma, spec.norm_spec()) ** 2
        case "sq_frobenius":
            return 0.5 * float(np.dot(sigma, sigma))
        case "trace":
            return float(sigma.sum())
        case "elastic_net":
            return float(sigma.sum()) + 0.5 * spec.gamma * float(np.dot(sigma, sigma))
    raise ParameterError(f"unknown penalty selector {spec.kind!r}")


def sigma_prox(sigma: FloatArray, spec: PenaltySpec, lam: float) -> FloatArray:
    """Vector prox of lam*g on a nonnegative nonincreasing singular value vector."""
    if not (math.isfinite(lam) and lam > 0):
        raise ParameterError(f"prox parameter lambda must be positive, got {lam}")
    r = sigma.size
    match spec.kind:
        case "sq_box":
            assert spec.box is not None
            _check_box_dim(spec.box, r)
            return prox_sq_box(sigma, spec.box, ProxConfig(lam))[0]
        case "sq_ksup":
            assert spec.k is not None
            return prox_sq_ksup(sigma, spec.k, ProxConfig(lam))
        case "sq_frobenius":
            return sigma / (1.0 + lam)
        case "trace":
            return np.maximum(sigma - lam, 0.0)
        case "elastic_net":
            return np.maximum(sigma - lam, 0.0) / (1.0 + lam * spec.gamma)
    raise ParameterError(f"unknown penalty selector {spec.kind!r}")


def spectral_prox(W: ArrayLike, spec: PenaltySpec, lam: float) -> FloatArray:
    W = as_matrix(W)
    if spec.kind == "sq_frobenius":
        if not (math.isfinite(lam) and lam > 0):
            raise ParameterError(f"prox parameter lambda must be positive, got {lam}")
        return W / (1.0 + lam)
    f = thin_svd(W)
    return f.reconstruct(sigma_prox(f.sigma, spec, lam))


def spectral_box_split(W: ArrayLike, params: BoxParams) -> tuple[FloatArray, FloatArray]:
    """W = (W - Z) + Z with Z the spectral k-support part; requires a < b and integer k."""
    W = as_matrix(W)
    if params.a == params.b:
        raise ParameterError("spectral split needs a < b")
    f = thin_svd(W)
    _check_box_dim(params, f.sigma.size)
    _, z = moreau_split(f.sigma, params)
    Z = f.reconstruct(z)
    return W - Z, Z


# ---------------------------------------------------------------------------
# Cluster norm
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClusterParams:
    eps_b: float
    eps_w: float
    Q: int
    eps_m: float = 0.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.eps_b) and math.isfinite(self.eps_w)):
            raise ParameterError("cluster weights must be finite")
        if not self.eps_w >= self.eps_b > 0:
            raise ParameterError(
                f"cluster weights need eps_w >= eps_b > 0, got eps_w={self.eps_w}, eps_b={self.eps_b}"
            )
        if isinstance(self.Q, bool) or int(self.Q) != self.Q or self.Q < 1:
            raise ParameterError(f"cluster count Q must be a positive integer, got {self.Q}")
        if not (math.isfinite(self.eps_m) and self.eps_m >= 0):
            raise ParameterError(f"mean weight eps_m must be nonnegative, got {self.eps_m}")

    def validate_for(self, T: int) -> None:
        if self.Q > T:
            raise ParameterError(f"cluster count Q={self.Q} exceeds task count T={T}")


def cluster_to_box(cp: ClusterParams, T: int) -> BoxParams:
    """a = 1/eps_w, b = 1/eps_b, c = (T - Q + 1)/eps_w + (Q - 1)/eps_b, so k = Q - 1."""
    cp.validate_for(T)
    a = 1.0 / cp.eps_w
    b = 1.0 / cp.eps_b
    return BoxParams(a=a, b=b, c=(T - cp.Q + 1) * a + (cp.Q - 1) * b)


def _padded_sigma(W: FloatArray) -> FloatArray:
    T = W.shape[1]
    sigma = thin_svd(W).sigma
    return np.concatenate([sigma, np.zeros(T - sigma.size)])


def cluster_norm(W: ArrayLike, cp: ClusterParams) -> float:
    """sqrt(inf over Sigma in S_{Q,T} of tr(Sigma^-1 W^T W)), via the box-norm of sigma padded to T."""
    W = as_matrix(W)
    params = cluster_to_box(cp, W.shape[1])
    return box_norm(_padded_sigma(W), params)[0]


def optimal_cluster_sigma(W: ArrayLike, cp: ClusterParams) -> FloatArray:
    """Sigma = V diag(theta) V^T, V the eigenvectors of W^T W ordered by decreasing eigenvalue."""
    W = as_matrix(W)
    T = W.shape[1]
    params = cluster_to_box(cp, T)
    _, s, Vt = np.linalg.svd(W, full_matrices=True)
    sigma = np.concatenate([s, np.zeros(T - s.size)])
    theta = box_theta(sigma, params).theta
    V = Vt.T
    Sigma = (V * theta) @ V.T
    return 0.5 * (Sigma + Sigma.T)


def cluster_objective(W: ArrayLike, Sigma: ArrayLike) -> float:
    """tr(Sigma^-1 W^T W)."""
    W = as_matrix(W)
    Sigma = as_matrix(Sigma, name="Sigma")
    if Sigma.shape != (W.shape[1], W.shape[1]):
        raise InputError(f"Sigma must be {W.shape[1]}x{W.shape[1]}, got {Sigma.shape}")
    return float(np.trace(np.linalg.solve(Sigma, W.T @ W)))


def in_cluster_set(Sigma: ArrayLike, cp: ClusterParams, *, tol: float = 1e-9) -> bool:
    """Membership in S_{Q,T}: symmetric, a I <= Sigma <= b I, tr Sigma <= c."""
    Sigma = as_matrix(Sigma, name="Sigma")
    T = Sigma.shape[0]
    if Sigma.shape != (T, T) or not np.allclose(Sigma, Sigma.T, atol=tol):
        return False
    params = cluster_to_box(cp, T)
    eig = np.linalg.eigvalsh(0.5 * (Sigma + Sigma.T))
    scale = max(1.0, params.c)
    return bool(
        eig.min() >= params.a - tol * scale
        and eig.max() <= params.b + tol * scale
        and float(np.trace(Sigma)) <= params.c + tol * scale
    )


def centering_matrix(T: int) -> FloatArray:
    """Pi = I - 11^T / T."""
    if T < 1:
        raise ParameterError(f"task count must be positive, got {T}")
    return np.eye(T) - np.full((T, T), 1.0 / T)


def column_center(W: ArrayLike) -> FloatArray:
    """W Pi: every column minus the column mean."""
    W = as_matrix(W)
    return W - W.mean(axis=1, keepdims=True)
