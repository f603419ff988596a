"""Adjoint DSMC: back-propagation of influence vectors through a recorded run.

For a final-time objective ``J = (rho/N) sum_i phi(v_i^M)`` the influence
vector ``gamma_i^k = dJ^k / dv_i^k`` starts at ``(rho/N) phi'(v_i^M)`` and is
pulled back through each step.  A real collision applies the transposed
collision Jacobian; every virtual pair also picks up a score-function term

    eta_i = (rho/N) (phi_i^M + phi_i1^M) d/dv_i log h,    eta_i1 = -eta_i,

where ``h`` is the probability of the sampled outcome (accept: ``q/bound``,
reject: ``1 - q/bound``).

Objectives are quadratic forms ``phi(v) = sum_l w_l v_l^2`` so that several
of them (e.g. ``Tx, Ty, Tz``) share one backward sweep.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import _backend
from .forward_dsmc import Algorithm, CollisionStepRecord, ForwardResult, REAL, SimConfig, replay_records, run_forward
from .collision_geometry import CollisionFrame, d_action
from .kernel import KernelSpec, TOL_U, grad_log_q_full, grad_log_q_velocity

PARAMETERS = ("Tx0", "Ty0", "Tz0")

OBJECTIVES = {
    "Tx": (1.0, 0.0, 0.0),
    "Ty": (0.0, 1.0, 0.0),
    "Tz": (0.0, 0.0, 1.0),
    "energy": (1.0, 1.0, 1.0),
}


@dataclass(frozen=True)
class Objective:
    """``phi(v) = sum_l weights[l] * v_l^2``."""

    name: str
    weights: tuple[float, float, float]

    def phi(self, v):
        return np.asarray(v) ** 2 @ np.asarray(self.weights)

    def dphi(self, v):
        return 2.0 * np.asarray(v) * np.asarray(self.weights)


def resolve_objective(selector) -> Objective:
    if isinstance(selector, Objective):
        return selector
    if isinstance(selector, str):
        try:
            return Objective(selector, OBJECTIVES[selector])
        except KeyError:
            raise ValueError(
                f"unknown objective {selector!r}; choose from {sorted(OBJECTIVES)}") from None
    weights = tuple(float(w) for w in selector)
    if len(weights) != 3:
        raise ValueError("objective weights must have three entries")
    return Objective("weighted", weights)


def resolve_objectives(selectors) -> list[Objective]:
    if isinstance(selectors, (str, Objective)):
        selectors = [selectors]
    return [resolve_objective(s) for s in selectors]


@dataclass(frozen=True)
class AdjointOptions:
    """How collisions are differentiated.

    use_btilde
        Include the angle-dependence term of the collision Jacobian.  ``None``
        enables it exactly when the kernel is angle dependent.
    general_scores
        For the general sampler: ``"angles"`` holds the scattering angles in
        the collision frame fixed (scores from ``|u|^beta`` only, Jacobian
        with the extra term); ``"sigma"`` holds the lab-frame direction fixed
        (scores from the full kernel, plain Jacobian).  Both are unbiased.
    """

    use_btilde: bool | None = None
    general_scores: str = "angles"

    def __post_init__(self):
        if self.general_scores not in ("angles", "sigma"):
            raise ValueError("general_scores must be 'angles' or 'sigma'")

    def btilde_for(self, config: SimConfig) -> bool:
        if config.algorithm is Algorithm.GENERAL and self.general_scores == "sigma":
            return False if self.use_btilde is None else self.use_btilde
        if self.use_btilde is None:
            return config.kernel.angle_dependent
        return self.use_btilde

    def sigma_scores_for(self, config: SimConfig) -> bool:
        return config.algorithm is Algorithm.GENERAL and self.general_scores == "sigma"


@dataclass
class AdjointState:
    """Influence vectors ``gammas[k_obj, i]`` at time step ``step_index``."""

    gammas: np.ndarray
    step_index: int
    phi_final: np.ndarray
    objectives: tuple[Objective, ...]
    rho: float = 1.0
    eta_guard_hits: int = 0

    def copy(self) -> "AdjointState":
        return AdjointState(self.gammas.copy(), self.step_index, self.phi_final,
                            self.objectives, self.rho, self.eta_guard_hits)


@dataclass
class GradientResult:
    """``gradient[k, p] = d J_k / d m_p`` for objectives ``k`` and ``m = (Tx0, Ty0, Tz0)``."""

    gradient: np.ndarray
    objectives: tuple[str, ...]
    objective_values: np.ndarray
    parameters: tuple[str, ...] = PARAMETERS
    metadata: dict = field(default_factory=dict)

    def entry(self, objective: str, parameter: str) -> float:
        return float(self.gradient[self.objectives.index(objective), self.parameters.index(parameter)])


def final_gamma(final_ensemble, objectives) -> AdjointState:
    """Final data ``gamma_i^M = (rho/N) phi'(v_i^M)`` for each objective."""
    objs = tuple(resolve_objectives(objectives))
    v = final_ensemble.velocities
    scale = final_ensemble.rho / len(v)
    gammas = np.stack([scale * o.dphi(v) for o in objs])
    phi = np.stack([o.phi(v) for o in objs])
    return AdjointState(np.ascontiguousarray(gammas), final_ensemble.step_index, phi, objs,
                        final_ensemble.rho)


def _bound(config: SimConfig) -> float:
    spec = config.kernel
    return spec.sigma_v if config.algorithm is Algorithm.SEPARABLE else spec.sigma_total


def eta_term(
    record: CollisionStepRecord,
    k: int,
    phi_i: float,
    phi_i1: float,
    config: SimConfig,
    options: AdjointOptions = AdjointOptions(),
):
    """Score contribution ``(eta_i, eta_i1)`` of virtual pair ``k``, one objective."""
    spec: KernelSpec = config.kernel
    un = record.u_norm[k]
    if un < TOL_U:
        return np.zeros(3), np.zeros(3)
    u = un * record.alpha[k]
    if options.sigma_scores_for(config):
        if spec.kappa > 0 and 1.0 + record.cos_theta[k] <= 1e-12:
            return np.zeros(3), np.zeros(3)
        score = grad_log_q_full(u, record.sigma[k], spec)
    else:
        score = grad_log_q_velocity(u, spec.beta)
    if record.outcome[k] != REAL:
        bound, q = _bound(config), record.q[k]
        if bound - q <= 1e-12 * bound:
            return np.zeros(3), np.zeros(3)
        score = -q / (bound - q) * score
    eta = config.rho / config.n_particles * (phi_i + phi_i1) * score
    return eta, -eta


def adjoint_step(
    state: AdjointState,
    record: CollisionStepRecord,
    config: SimConfig,
    options: AdjointOptions = AdjointOptions(),
) -> AdjointState:
    """Pull ``state`` from step ``k+1`` back to ``k`` through ``record``."""
    if record.step != state.step_index - 1:
        raise ValueError(f"record for step {record.step} cannot act on adjoint state at {state.step_index}")
    out = state.copy()
    out.eta_guard_hits += _apply_record(out, record, config, options)
    out.step_index = record.step
    return out


def _apply_record(state: AdjointState, record: CollisionStepRecord, config: SimConfig,
                  options: AdjointOptions) -> int:
    spec = config.kernel
    n = state.gammas.shape[1]
    return _backend.active().adjoint_step(
        state.gammas, state.phi_final, record.pairs, record.outcome, record.alpha,
        record.sigma, record.u_norm, record.cos_theta, record.q, _bound(config),
        spec.beta, spec.kappa, options.sigma_scores_for(config), options.btilde_for(config),
        state.rho / n, config.threads)


def run_adjoint(forward: ForwardResult, objectives, options: AdjointOptions = AdjointOptions()) -> AdjointState:
    """Back-propagate from the final data to step 0.

    Uses the stored records, or replays forward segments from checkpoints
    when the forward run kept none.
    """
    config = forward.config
    state = final_gamma(forward.final, objectives)
    if forward.records is not None:
        for rec in reversed(forward.records):
            state.eta_guard_hits += _apply_record(state, rec, config, options)
            state.step_index = rec.step
        return state
    starts = sorted(forward.checkpoints)
    stops = starts[1:] + [config.n_steps]
    for start, stop in reversed(list(zip(starts, stops))):
        for rec in reversed(replay_records(config, forward.checkpoints[start], start, stop)):
            state.eta_guard_hits += _apply_record(state, rec, config, options)
            state.step_index = rec.step
    return state


def pathwise_initial_derivative(initial_velocities, p: int, config: SimConfig) -> np.ndarray:
    """``d v_i^0 / d T0_p = v_i^{p,0} / (2 T0_p) e_p`` for ``v = sqrt(T0) * normal``."""
    v0 = np.asarray(initial_velocities, dtype=float)
    out = np.zeros_like(v0)
    out[:, p] = v0[:, p] / (2.0 * config.initial_temperatures[p])
    return out


def assemble_gradient(state: AdjointState, initial_velocities, config: SimConfig) -> np.ndarray:
    """``dJ/dm_p = sum_i (d v_i^0 / d m_p) . gamma_i^0`` for every objective and parameter."""
    if state.step_index != 0:
        raise ValueError("adjoint state must be at step 0")
    grads = np.empty((state.gammas.shape[0], 3))
    for p in range(3):
        dv = pathwise_initial_derivative(initial_velocities, p, config)
        grads[:, p] = np.einsum("kij,ij->k", state.gammas, dv)
    return grads


def adjoint_gradient(
    config: SimConfig,
    objectives: Sequence | str = ("Tx", "Ty", "Tz"),
    options: AdjointOptions = AdjointOptions(),
    keep_records: bool = True,
    checkpoint_every: int | None = None,
) -> GradientResult:
    """One forward run and one backward sweep."""
    objs = resolve_objectives(objectives)
    fwd = run_forward(config, keep_records=keep_records, checkpoint_every=checkpoint_every)
    t0 = time.perf_counter()
    state = run_adjoint(fwd, objs, options)
    grad = assemble_gradient(state, fwd.initial.velocities, config)
    t_adj = time.perf_counter() - t0
    values = np.array([config.rho * np.mean(o.phi(fwd.final.velocities)) for o in objs])
    return GradientResult(
        grad, tuple(o.name for o in objs), values,
        metadata={
            "n_particles": config.n_particles,
            "n_steps": config.n_steps,
            "seed": config.seed,
            "wall_time_forward": fwd.wall_time,
            "wall_time_adjoint": t_adj,
            "bound_violations": fwd.bound_violations,
            "eta_guard_hits": state.eta_guard_hits,
            "backend": _backend.name(),
        },
    )


def iter_frames(record: CollisionStepRecord) -> Iterable[tuple[int, CollisionFrame]]:
    for k in np.flatnonzero(record.outcome == REAL):
        yield int(k), record.frame(int(k))


def pair_update(record, k, g, g1, phi_i, phi_i1, config, options=AdjointOptions()):
    """Reference single-pair update ``D (g; g1) + (eta; -eta)``; used to check the batched kernels."""
    if record.outcome[k] == REAL:
        top, bottom = d_action(record.alpha[k], record.sigma[k], g, g1, options.btilde_for(config))
    else:
        top, bottom = np.asarray(g, dtype=float), np.asarray(g1, dtype=float)
    eta, eta1 = eta_term(record, k, phi_i, phi_i1, config, options)
    return top + eta, bottom + eta1
