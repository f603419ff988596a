"""Collision kernels ``q(u, sigma) = C_kappa(theta) |u|^beta`` and their scores.

``C_kappa(theta) = (1 + kappa) / (2^(kappa+2) pi eps) (1 + cos theta)^kappa``,
normalised so the weighted sphere area is ``1/eps``.

All functions broadcast over leading axes of ``(..., 3)`` arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TOL_U = 1e-12
TOL_THETA = 1e-12


class DegenerateCollisionError(ValueError):
    """Raised when a score is requested where it is undefined."""


@dataclass(frozen=True)
class KernelSpec:
    """Parameters of the kernel family and its rejection bounds.

    ``sigma_v`` bounds the velocity part ``|u|^beta`` (separable sampler);
    ``sigma_total`` bounds the full kernel (general sampler).  Both default to
    the values used for Gaussian data with unit-order temperatures:
    ``sigma_v = 10**beta`` and ``sigma_total = C_kappa(0) * sigma_v``.
    """

    kappa: float = 0.0
    beta: float = 0.0
    epsilon: float = 10.0
    sigma_v: float | None = None
    sigma_total: float | None = field(default=None)

    def __post_init__(self):
        if self.kappa < 0 or self.beta < 0:
            raise ValueError("kappa and beta must be non-negative")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.sigma_v is None:
            object.__setattr__(self, "sigma_v", 10.0 ** self.beta)
        if self.sigma_v <= 0:
            raise ValueError("sigma_v must be positive")
        if self.sigma_total is None:
            object.__setattr__(self, "sigma_total", self.angular_peak * self.sigma_v)
        if self.sigma_total <= 0:
            raise ValueError("sigma_total must be positive")

    @property
    def c_norm(self) -> float:
        """Prefactor of ``C_kappa``: ``(1+kappa) / (2^(kappa+2) pi eps)``."""
        return (1.0 + self.kappa) / (2.0 ** (self.kappa + 2.0) * math.pi * self.epsilon)

    @property
    def angular_peak(self) -> float:
        """``C_kappa(0)``, the maximum of the angular factor."""
        return self.c_norm * 2.0 ** self.kappa

    @property
    def angle_dependent(self) -> bool:
        return self.kappa > 0

    def rate_separable(self, rho: float = 1.0) -> float:
        """Virtual collision rate ``A_kappa * sigma_v * rho``."""
        return weighted_area(self) * self.sigma_v * rho

    def rate_general(self, rho: float = 1.0) -> float:
        """Virtual collision rate ``4 pi * sigma_total * rho``."""
        return 4.0 * math.pi * self.sigma_total * rho


def _norm(u):
    return np.sqrt(np.einsum("...i,...i->...", u, u))


def velocity_part(u_norm, beta: float):
    """``|u|**beta`` with exact arithmetic for the common integer exponents."""
    u_norm = np.asarray(u_norm, dtype=float)
    if beta == 0:
        return np.ones_like(u_norm)
    if beta == 1:
        return u_norm.copy()
    if beta == 2:
        return u_norm * u_norm
    return u_norm ** beta


def angular_factor(cos_theta, spec: KernelSpec):
    """``C_kappa(theta)`` as a function of ``cos theta``."""
    base = np.maximum(1.0 + np.asarray(cos_theta, dtype=float), 0.0)
    if spec.kappa == 0:
        return spec.c_norm * np.ones_like(base)
    return spec.c_norm * base ** spec.kappa


def eval_kernel(u, sigma, spec: KernelSpec):
    """Kernel value ``C_kappa(theta) |u|^beta`` with ``cos theta = sigma . u/|u|``.

    Pairs with ``|u| < TOL_U`` have zero rate.
    """
    u = np.asarray(u, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    un = _norm(u)
    safe = np.where(un < TOL_U, 1.0, un)
    cos_t = np.einsum("...i,...i->...", sigma, u) / safe
    q = angular_factor(np.clip(cos_t, -1.0, 1.0), spec) * velocity_part(un, spec.beta)
    q = np.where(un < TOL_U, 0.0, q)
    return q[()] if q.ndim == 0 else q


def weighted_area(spec: KernelSpec) -> float:
    """``int_0^{2pi} int_0^pi C_kappa(theta) sin(theta) dtheta dphi``.

    Uses ``int_0^pi (1+cos t)^k sin t dt = 2^(k+1) / (k+1)``.
    """
    return 2.0 * math.pi * spec.c_norm * 2.0 ** (spec.kappa + 1.0) / (spec.kappa + 1.0)


def sample_cos_theta(kappa: float, xi):
    """Inverse CDF of the scattering cosine: ``2 (1 - xi)^(1/(kappa+1)) - 1``."""
    xi = np.asarray(xi, dtype=float)
    if kappa == 0:
        return 1.0 - 2.0 * xi
    return 2.0 * (1.0 - xi) ** (1.0 / (kappa + 1.0)) - 1.0


def sample_theta(spec: KernelSpec, xi):
    """Scattering angle with density proportional to ``C_kappa(theta) sin(theta)``.

    The CDF is ``F(theta) = 1 - ((1 + cos theta)/2)^(kappa+1)``.
    """
    return np.arccos(np.clip(sample_cos_theta(spec.kappa, xi), -1.0, 1.0))


def _check_nondegenerate(un):
    if np.any(un < TOL_U):
        raise DegenerateCollisionError("degenerate relative velocity")


def grad_log_q_velocity(u, beta: float):
    """Gradient of ``log |u|^beta`` with respect to the first velocity: ``beta u/|u|^2``.

    The gradient with respect to the partner velocity is the negation.
    """
    u = np.asarray(u, dtype=float)
    un = _norm(u)
    _check_nondegenerate(un)
    return beta * u / (un * un)[..., None]


def grad_log_q_full(u, sigma, spec: KernelSpec):
    """Gradient of ``log q`` with respect to the first velocity at fixed ``sigma``."""
    u = np.asarray(u, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    un = _norm(u)
    _check_nondegenerate(un)
    grad = spec.beta * u / (un * un)[..., None]
    if spec.kappa == 0:
        return grad
    alpha = u / un[..., None]
    cos_t = np.einsum("...i,...i->...", sigma, alpha)
    if np.any(cos_t <= -1.0 + TOL_THETA):
        raise DegenerateCollisionError("vanishing kernel, score undefined")
    tangential = sigma - cos_t[..., None] * alpha
    return grad + (spec.kappa / ((1.0 + cos_t) * un))[..., None] * tangential


def grad_log_rejection(u, sigma, spec: KernelSpec, separable: bool):
    """Gradient of ``log(bound - q)``: the score of a rejected virtual collision.

    Separable sampler: ``q = |u|^beta`` against ``sigma_v``.  General sampler:
    the full kernel at fixed ``sigma`` against ``sigma_total``.
    """
    u = np.asarray(u, dtype=float)
    un = _norm(u)
    _check_nondegenerate(un)
    if separable:
        q = velocity_part(un, spec.beta)
        bound = spec.sigma_v
        score = grad_log_q_velocity(u, spec.beta)
    else:
        q = eval_kernel(u, sigma, spec)
        bound = spec.sigma_total
        score = grad_log_q_full(u, sigma, spec)
    if np.any(q >= bound):
        raise DegenerateCollisionError("acceptance certain, rejection score undefined")
    return -(q / (bound - q))[..., None] * score
