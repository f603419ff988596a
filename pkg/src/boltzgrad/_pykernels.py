"""Pure numpy implementation of the per-step hot kernels.

Semantics are identical to the compiled ``_ckernels`` module; each function
vectorises over the disjoint collision pairs of one time step.  The
``threads`` arguments are accepted for signature compatibility and ignored.
"""

from __future__ import annotations

import numpy as np

from .collision_geometry import d_action, dot, norm, post_collision, sigma_from_cos
from .kernel import TOL_THETA, TOL_U, velocity_part
from .rng import TAG_ACCEPT, TAG_ANGLES, TAG_SHUFFLE, uniform_pairs

REAL = 1
VIRTUAL = 0
GUARD_REL = 1e-12

BACKEND = "python"


def select_pairs(n: int, n_c: int, seed: int, step: int) -> np.ndarray:
    if 2 * n_c > n:
        raise ValueError("collision count exceeds ensemble")
    m = 2 * n_c
    slots = np.arange(m, dtype=np.int64)
    u = uniform_pairs(seed, step, slots, TAG_SHUFFLE)[:, 0]
    span = n - slots
    offset = np.minimum((u * span).astype(np.int64), span - 1)
    targets = (slots + offset).tolist()
    # sparse Fisher-Yates: only displaced positions are stored
    moved: dict[int, int] = {}
    picked = np.empty(m, dtype=np.int64)
    for i, j in enumerate(targets):
        vj = moved.get(j, j)
        moved[j] = moved.get(i, i)
        picked[i] = vj
    return picked.reshape(n_c, 2)


def _empty_record(n_c):
    nan3 = np.full((n_c, 3), np.nan)
    return {
        "outcome": np.zeros(n_c, dtype=np.int8),
        "alpha": np.zeros((n_c, 3)),
        "sigma": nan3,
        "u_norm": np.zeros(n_c),
        "cos_theta": np.full(n_c, np.nan),
        "phi": np.full(n_c, np.nan),
        "q": np.zeros(n_c),
    }


def _pair_geometry(vel, pairs):
    i, j = pairs[:, 0], pairs[:, 1]
    u = vel[i] - vel[j]
    un = norm(u)
    live = un >= TOL_U
    alpha = np.zeros_like(u)
    alpha[live] = u[live] / un[live, None]
    return i, j, un, live, alpha


def _collide(vel, i, j, sigma):
    vi, vj = post_collision(vel[i], vel[j], sigma)
    vel[i] = vi
    vel[j] = vj


def step_separable(vel, pairs, seed, step, kappa, beta, sigma_v, threads=1):
    """Advance ``vel`` in place; returns ``(record_arrays, bound_violations)``."""
    n_c = len(pairs)
    rec = _empty_record(n_c)
    if n_c == 0:
        return rec, 0
    i, j, un, live, alpha = _pair_geometry(vel, pairs)
    slots = np.arange(n_c, dtype=np.int64)
    qv = np.where(live, velocity_part(un, beta), 0.0)
    xi = uniform_pairs(seed, step, slots, TAG_ACCEPT)[:, 0]
    violations = int(np.count_nonzero(live & (qv > sigma_v)))
    accept = live & (xi <= qv / sigma_v)
    rec.update(alpha=alpha, u_norm=un, q=qv)
    rec["outcome"][accept] = REAL
    if np.any(accept):
        ang = uniform_pairs(seed, step, slots[accept], TAG_ANGLES)
        if kappa == 0:
            cos_t = 1.0 - 2.0 * ang[:, 0]
        else:
            cos_t = 2.0 * (1.0 - ang[:, 0]) ** (1.0 / (kappa + 1.0)) - 1.0
        phi = 2.0 * np.pi * ang[:, 1]
        sig = sigma_from_cos(alpha[accept], cos_t, phi)
        rec["sigma"][accept] = sig
        rec["cos_theta"][accept] = cos_t
        rec["phi"][accept] = phi
        _collide(vel, i[accept], j[accept], sig)
    return rec, violations


def step_general(vel, pairs, seed, step, kappa, beta, c_norm, sigma_total, threads=1):
    """Rejection on the full kernel with uniformly sampled directions."""
    n_c = len(pairs)
    rec = _empty_record(n_c)
    if n_c == 0:
        return rec, 0
    i, j, un, live, alpha = _pair_geometry(vel, pairs)
    slots = np.arange(n_c, dtype=np.int64)
    ang = uniform_pairs(seed, step, slots, TAG_ANGLES)
    cz = 1.0 - 2.0 * ang[:, 0]
    sz = np.sqrt(np.maximum((1.0 - cz) * (1.0 + cz), 0.0))
    ph = 2.0 * np.pi * ang[:, 1]
    sig = np.column_stack([sz * np.cos(ph), sz * np.sin(ph), cz])
    cos_t = np.minimum(np.maximum(dot(sig, alpha), -1.0), 1.0)
    base = 1.0 + cos_t
    ang_part = np.ones(n_c) if kappa == 0 else base ** kappa
    q = np.where(live, c_norm * ang_part * velocity_part(un, beta), 0.0)
    xi = uniform_pairs(seed, step, slots, TAG_ACCEPT)[:, 0]
    violations = int(np.count_nonzero(live & (q > sigma_total)))
    accept = live & (xi <= q / sigma_total)
    rec.update(alpha=alpha, u_norm=un, q=q, sigma=sig, cos_theta=np.where(live, cos_t, np.nan))
    rec["outcome"][accept] = REAL
    if np.any(accept):
        _collide(vel, i[accept], j[accept], sig[accept])
    return rec, violations


def adjoint_step(gamma, phi_final, pairs, outcome, alpha, sigma, u_norm, cos_theta, q,
                 bound, beta, kappa, sigma_scores, use_btilde, rho_over_n, threads=1):
    """Back-propagate ``gamma`` (shape ``(K, N, 3)``) through one step, in place.

    Returns the number of rejected pairs whose score was zeroed because the
    acceptance probability was numerically one.
    """
    n_c = len(pairs)
    if n_c == 0:
        return 0
    i, j = pairs[:, 0], pairs[:, 1]
    g = gamma[:, i]
    g1 = gamma[:, j]
    real = outcome == REAL
    live = u_norm >= TOL_U
    new_g = g.copy()
    new_g1 = g1.copy()
    if np.any(real):
        t, b = d_action(alpha[real], sigma[real], g[:, real], g1[:, real], use_btilde)
        new_g[:, real] = t
        new_g1[:, real] = b

    safe_u = np.where(live, u_norm, 1.0)
    score = np.where(live[:, None], beta * alpha / safe_u[:, None], 0.0)
    if sigma_scores and kappa > 0:
        ct = np.where(live, cos_theta, 0.0)
        denom = (1.0 + ct) * safe_u
        ok = live & (1.0 + ct > TOL_THETA)
        tang = sigma - ct[:, None] * alpha
        factor = np.where(ok, kappa / np.where(ok, denom, 1.0), 0.0)
        score = score + np.where(ok[:, None], factor[:, None] * tang, 0.0)
        score[live & ~ok] = 0.0

    virt = live & ~real
    gap = bound - q
    guard = virt & (gap <= GUARD_REL * bound)
    use = virt & ~guard
    ratio = np.where(use, q / np.where(use, gap, 1.0), 0.0)
    score = np.where(real[:, None], score, -ratio[:, None] * score)

    scale = rho_over_n * (phi_final[:, i] + phi_final[:, j])
    eta = scale[..., None] * score
    gamma[:, i] = new_g + eta
    gamma[:, j] = new_g1 - eta
    return int(np.count_nonzero(guard))
