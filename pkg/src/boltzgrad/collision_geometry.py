"""Collision-map algebra: post-collision velocities, scattering frames, and
the transposed Jacobian actions used by the adjoint pass.

Everything operates on ``(..., 3)`` arrays and broadcasts.  No 6x6 matrix is
ever formed; the adjoint Jacobian is applied in closed form.

The scattering frame maps angles ``(theta, phi)`` to a direction ``sigma``
with ``sigma . alpha = cos(theta)``.  The frame is singular when ``alpha``
lies on the z axis, so when ``alpha_x^2 + alpha_y^2 < AXIS_SWITCH`` all
vectors are cyclically permuted ``(x, y, z) -> (y, z, x)`` before evaluating
and permuted back afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernel import TOL_U

# closer to the z axis than to the xy plane -> use the permuted frame
AXIS_SWITCH = 0.5


@dataclass(frozen=True)
class CollisionFrame:
    """Directions and angles describing one binary collision."""

    alpha: np.ndarray
    sigma: np.ndarray
    u_norm: float
    theta: float
    phi: float

    def __post_init__(self):
        for name in ("alpha", "sigma"):
            vec = np.asarray(getattr(self, name), dtype=float)
            if abs(np.linalg.norm(vec) - 1.0) > 1e-12:
                raise ValueError(f"{name} must be a unit vector")
            object.__setattr__(self, name, vec)


def dot(a, b):
    return np.einsum("...i,...i->...", a, b)


def norm(a):
    return np.sqrt(dot(a, a))


def _to_frame(a, mask):
    return np.where(mask[..., None], np.roll(a, -1, axis=-1), a)


def _from_frame(a, mask):
    return np.where(mask[..., None], np.roll(a, 1, axis=-1), a)


def permuted_mask(alpha):
    """True where the cyclically permuted frame is used."""
    alpha = np.asarray(alpha, dtype=float)
    return alpha[..., 0] ** 2 + alpha[..., 1] ** 2 < AXIS_SWITCH


def post_collision(v, v1, sigma):
    """Post-collision pair ``(v', v1')`` conserving momentum and energy."""
    v = np.asarray(v, dtype=float)
    v1 = np.asarray(v1, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    center = 0.5 * (v + v1)
    half = 0.5 * norm(v - v1)[..., None] * sigma
    return center + half, center - half


def frame_matrix(alpha):
    """Raw frame ``[e1 e2 alpha]`` (columns), singular on the z axis."""
    alpha = np.asarray(alpha, dtype=float)
    ax, ay, az = alpha[..., 0], alpha[..., 1], alpha[..., 2]
    r = np.sqrt(ax * ax + ay * ay)
    zero = np.zeros_like(ax)
    rows = [
        [ax * az / r, -ay / r, ax],
        [ay * az / r, ax / r, ay],
        [-r, zero, az],
    ]
    return np.stack([np.stack(row, axis=-1) for row in rows], axis=-2)


def sigma_from_cos(alpha, cos_t, phi):
    """Direction at polar cosine ``cos_t`` and azimuth ``phi`` around ``alpha``."""
    alpha = np.asarray(alpha, dtype=float)
    cos_t = np.asarray(cos_t, dtype=float)
    phi = np.asarray(phi, dtype=float)
    sin_t = np.sqrt(np.maximum((1.0 - cos_t) * (1.0 + cos_t), 0.0))
    mask = permuted_mask(alpha)
    a = _to_frame(alpha, mask)
    ax, ay, az = a[..., 0], a[..., 1], a[..., 2]
    r = np.sqrt(ax * ax + ay * ay)
    s1 = sin_t * np.cos(phi)
    s2 = sin_t * np.sin(phi)
    sig = np.stack(
        [
            (ax * az * s1 - ay * s2) / r + ax * cos_t,
            (ay * az * s1 + ax * s2) / r + ay * cos_t,
            -r * s1 + az * cos_t,
        ],
        axis=-1,
    )
    return _from_frame(sig, mask)


def sigma_from_angles(u, theta, phi):
    """Post-collision direction for relative velocity ``u`` and angles ``(theta, phi)``."""
    u = np.asarray(u, dtype=float)
    un = norm(u)
    if np.any(un < TOL_U):
        raise ValueError("degenerate relative velocity")
    return sigma_from_cos(u / un[..., None], np.cos(theta), phi)


def frame_angles(alpha, sigma):
    """Inverse of :func:`sigma_from_cos`: ``(theta, phi)`` of ``sigma`` around ``alpha``."""
    alpha = np.asarray(alpha, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    mask = permuted_mask(alpha)
    a = _to_frame(alpha, mask)
    s = _to_frame(sigma, mask)
    local = np.einsum("...ji,...j->...i", frame_matrix(a), s)
    theta = np.arccos(np.clip(local[..., 2], -1.0, 1.0))
    phi = np.mod(np.arctan2(local[..., 1], local[..., 0]), 2.0 * np.pi)
    return theta, phi


def a_action(sigma, alpha, g, g1):
    """Apply ``A(sigma, alpha)``: maps a pair with direction ``alpha`` to direction ``sigma``."""
    return b_action(alpha, sigma, g, g1)


def b_action(sigma, alpha, g, g1):
    """Apply ``B(sigma, alpha) = A(sigma, alpha)^T`` to the stacked pair ``(g; g1)``."""
    g = np.asarray(g, dtype=float)
    g1 = np.asarray(g1, dtype=float)
    center = 0.5 * (g + g1)
    shift = 0.5 * dot(sigma, g - g1)[..., None] * np.asarray(alpha, dtype=float)
    return center + shift, center - shift


def g_matrices(alpha):
    """The three antisymmetric matrices ``G_l`` with ``|u| d sigma/d u_l = G_l sigma``.

    Raw formulas in the unpermuted frame; shape ``(..., 3, 3, 3)`` indexed
    ``[l, i, j]``.
    """
    alpha = np.asarray(alpha, dtype=float)
    ax, ay, az = alpha[..., 0], alpha[..., 1], alpha[..., 2]
    r2 = ax * ax + ay * ay
    z = np.zeros_like(ax)
    g1 = [[z, ay, ax * ax * az], [-ay, z, ax * ay * az], [-ax * ax * az, -ax * ay * az, z]]
    g2 = [[z, -ax, ax * ay * az], [ax, z, ay * ay * az], [-ax * ay * az, -ay * ay * az, z]]
    g3 = [[z, z, -ax], [z, z, -ay], [ax, ay, z]]

    def build(rows, scale):
        return np.stack([np.stack(row, axis=-1) for row in rows], axis=-2) * scale[..., None, None]

    one = np.ones_like(ax)
    return np.stack([build(g1, 1.0 / r2), build(g2, 1.0 / r2), build(g3, one)], axis=-3)


def _g_action_raw(a, s, w):
    ax, ay, az = a[..., 0], a[..., 1], a[..., 2]
    r2 = ax * ax + ay * ay
    k = s[..., 0] * w[..., 1] - s[..., 1] * w[..., 0]
    hs = ax * s[..., 0] + ay * s[..., 1]
    hw = ax * w[..., 0] + ay * w[..., 1]
    lam = hs * w[..., 2] - s[..., 2] * hw
    return np.stack([(ay * k + ax * az * lam) / r2, (-ax * k + ay * az * lam) / r2, -lam], axis=-1)


def g_tensor_action(alpha, sigma, w):
    """``S w`` with ``S[l, j] = sum_i sigma_i G_l[i, j]``, i.e. ``(S w)_l = sigma . (G_l w)``.

    ``S = -|u| (d sigma / d u)^T`` at fixed scattering angles.
    """
    alpha = np.asarray(alpha, dtype=float)
    mask = permuted_mask(alpha)
    out = _g_action_raw(_to_frame(alpha, mask), _to_frame(np.asarray(sigma, dtype=float), mask),
                        _to_frame(np.asarray(w, dtype=float), mask))
    return _from_frame(out, mask)


def d_action(alpha, sigma, g, g1, angle_dependent: bool):
    """Transposed collision Jacobian applied to ``(g; g1)``.

    Without angle dependence this is ``B(sigma, alpha)``.  With it, the
    dependence of ``sigma`` on the incoming velocities at fixed angles adds
    ``+S(g1 - g)/2`` to the top block and ``+S(g - g1)/2`` to the bottom.
    """
    top, bottom = b_action(sigma, alpha, g, g1)
    if angle_dependent:
        extra = 0.5 * g_tensor_action(alpha, sigma, np.asarray(g1, dtype=float) - np.asarray(g, dtype=float))
        top = top + extra
        bottom = bottom - extra
    return top, bottom


def adjoint_D_action(frame: CollisionFrame, g, g1, angle_dependent: bool):
    """:func:`d_action` for a single recorded collision frame."""
    return d_action(frame.alpha, frame.sigma, g, g1, angle_dependent)
