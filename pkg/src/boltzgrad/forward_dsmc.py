"""Forward DSMC for the spatially homogeneous Boltzmann equation.

Two samplers are provided:

* ``SEPARABLE``: rejection on the velocity part ``|u|^beta`` against
  ``sigma_v``, then direct sampling of the scattering angles on acceptance.
* ``GENERAL``: a uniformly sampled direction for every virtual pair and
  rejection on the full kernel against ``sigma_total``.

Every virtual pair is logged in a :class:`CollisionStepRecord` so the adjoint
pass can back-propagate without resampling.  Random numbers are counter-based
(see :mod:`boltzgrad.rng`), so a run is a pure function of its config.
"""

from __future__ import annotations

import enum
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import _backend
from .collision_geometry import CollisionFrame, frame_angles
from .kernel import KernelSpec
from .rng import initial_normals

log = logging.getLogger(__name__)

REAL = 1
VIRTUAL_ONLY = 0


class Algorithm(str, enum.Enum):
    GENERAL = "general"
    SEPARABLE = "separable"


def _ceil(x: float) -> int:
    # absorb representation error such as 0.1 * 1e4 / 2 = 500.00000000000006
    return math.ceil(x - 1e-9 * max(1.0, abs(x)))


@dataclass(frozen=True)
class SimConfig:
    """Simulation parameters; ``initial_temperatures`` is the gradient parameter ``m``."""

    n_particles: int
    n_steps: int
    dt: float = 0.1
    kernel: KernelSpec = field(default_factory=KernelSpec)
    seed: int = 0
    algorithm: Algorithm = Algorithm.SEPARABLE
    initial_temperatures: tuple[float, float, float] = (1.0, 1.0, 0.5)
    rho: float = 1.0
    threads: int = 1

    def __post_init__(self):
        object.__setattr__(self, "algorithm", Algorithm(self.algorithm))
        object.__setattr__(self, "initial_temperatures",
                           tuple(float(t) for t in self.initial_temperatures))
        if self.n_particles <= 0 or self.n_particles % 2:
            raise ValueError("n_particles must be a positive even number")
        if self.n_steps < 0:
            raise ValueError("n_steps must be non-negative")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if len(self.initial_temperatures) != 3 or min(self.initial_temperatures) <= 0:
            raise ValueError("initial temperatures must be three positive numbers")
        if self.dt * self.collision_rate > 1.0 + 1e-12:
            raise ValueError(
                f"dt * mu = {self.dt * self.collision_rate:g} exceeds 1; reduce dt or the kernel bound"
            )

    @property
    def t_final(self) -> float:
        return self.n_steps * self.dt

    @property
    def collision_rate(self) -> float:
        if self.algorithm is Algorithm.SEPARABLE:
            return self.kernel.rate_separable(self.rho)
        return self.kernel.rate_general(self.rho)

    @property
    def n_collision_pairs(self) -> int:
        return _ceil(self.dt * self.collision_rate * self.n_particles / 2.0)

    def with_temperatures(self, temps) -> "SimConfig":
        return replace(self, initial_temperatures=tuple(temps))

    def with_seed(self, seed: int) -> "SimConfig":
        return replace(self, seed=int(seed))


@dataclass
class VelocityEnsemble:
    velocities: np.ndarray
    rho: float = 1.0
    step_index: int = 0

    def __post_init__(self):
        self.velocities = np.ascontiguousarray(self.velocities, dtype=float)
        if self.velocities.ndim != 2 or self.velocities.shape[1] != 3:
            raise ValueError("velocities must have shape (N, 3)")
        if len(self.velocities) % 2:
            raise ValueError("ensemble size must be even")

    @property
    def n(self) -> int:
        return len(self.velocities)

    def temperatures(self) -> np.ndarray:
        """Second moments ``(rho/N) sum v_l^2`` per component."""
        return self.rho * np.mean(self.velocities ** 2, axis=0)

    def momentum(self) -> np.ndarray:
        return self.velocities.sum(axis=0)

    def energy(self) -> float:
        return float(np.sum(self.velocities ** 2))

    def copy(self) -> "VelocityEnsemble":
        return VelocityEnsemble(self.velocities.copy(), self.rho, self.step_index)


@dataclass
class CollisionStepRecord:
    """Everything the adjoint needs about the virtual pairs of one step.

    Per-pair arrays are aligned with ``pairs``.  Rejected pairs of the
    separable sampler never sample angles; their ``sigma``, ``cos_theta`` and
    ``phi`` entries are NaN.  ``q`` holds the value used in the acceptance
    test: ``|u|^beta`` (separable) or the full kernel (general).
    """

    step: int
    algorithm: Algorithm
    pairs: np.ndarray
    outcome: np.ndarray
    alpha: np.ndarray
    sigma: np.ndarray
    u_norm: np.ndarray
    cos_theta: np.ndarray
    phi: np.ndarray
    q: np.ndarray
    bound_violations: int = 0

    @property
    def n_pairs(self) -> int:
        return len(self.pairs)

    @property
    def n_real(self) -> int:
        return int(np.count_nonzero(self.outcome == REAL))

    def frame(self, k: int) -> CollisionFrame:
        """Collision frame of pair ``k``; only defined when ``sigma`` was sampled."""
        if not np.all(np.isfinite(self.sigma[k])):
            raise ValueError(f"pair {k} of step {self.step} has no sampled direction")
        theta = float(np.arccos(np.clip(self.cos_theta[k], -1.0, 1.0)))
        phi = self.phi[k]
        if not np.isfinite(phi):
            _, phi = frame_angles(self.alpha[k], self.sigma[k])
        return CollisionFrame(self.alpha[k], self.sigma[k], float(self.u_norm[k]), theta, float(phi))


@dataclass
class ForwardResult:
    config: SimConfig
    initial: VelocityEnsemble
    final: VelocityEnsemble
    normals: np.ndarray
    records: list[CollisionStepRecord] | None
    checkpoints: dict[int, np.ndarray]
    bound_violations: int
    wall_time: float


def init_ensemble(config: SimConfig) -> tuple[VelocityEnsemble, np.ndarray]:
    """Anisotropic Gaussian ``v = sqrt(T0) * N(0, 1)`` plus the raw normals."""
    normals = initial_normals(config.seed, config.n_particles)
    vel = normals * np.sqrt(np.asarray(config.initial_temperatures))
    return VelocityEnsemble(vel, rho=config.rho, step_index=0), normals


def select_pairs(n: int, n_c: int, seed: int, step: int) -> np.ndarray:
    """``n_c`` disjoint pairs via a partial Fisher-Yates shuffle keyed by ``(seed, step)``."""
    return _backend.active().select_pairs(int(n), int(n_c), int(seed), int(step))


def _advance(vel: np.ndarray, step: int, config: SimConfig) -> CollisionStepRecord:
    kern = _backend.active()
    spec = config.kernel
    pairs = kern.select_pairs(len(vel), config.n_collision_pairs, config.seed, step)
    if config.algorithm is Algorithm.SEPARABLE:
        arrays, violations = kern.step_separable(
            vel, pairs, config.seed, step, spec.kappa, spec.beta, spec.sigma_v, config.threads)
    else:
        arrays, violations = kern.step_general(
            vel, pairs, config.seed, step, spec.kappa, spec.beta, spec.c_norm,
            spec.sigma_total, config.threads)
    return CollisionStepRecord(step=step, algorithm=config.algorithm, pairs=pairs,
                               bound_violations=int(violations), **arrays)


def _step(ensemble: VelocityEnsemble, config: SimConfig, expected: Algorithm):
    if config.algorithm is not expected:
        raise ValueError(f"config.algorithm is {config.algorithm.value}, expected {expected.value}")
    out = ensemble.copy()
    record = _advance(out.velocities, ensemble.step_index, config)
    out.step_index += 1
    return out, record


def step_separable(ensemble: VelocityEnsemble, config: SimConfig):
    """One step of the separable-kernel sampler; returns ``(ensemble', record)``."""
    return _step(ensemble, config, Algorithm.SEPARABLE)


def step_general(ensemble: VelocityEnsemble, config: SimConfig):
    """One step of the general rejection sampler; returns ``(ensemble', record)``."""
    return _step(ensemble, config, Algorithm.GENERAL)


def replay_records(config: SimConfig, velocities: np.ndarray, start: int, stop: int):
    """Regenerate the records of steps ``[start, stop)`` from the state at ``start``."""
    vel = velocities.copy()
    return [_advance(vel, k, config) for k in range(start, stop)]


def run_forward(
    config: SimConfig,
    keep_records: bool = True,
    checkpoint_every: int | None = None,
    callback: Callable[[int, np.ndarray], None] | None = None,
) -> ForwardResult:
    """Run ``config.n_steps`` steps from the seeded initial condition.

    With ``keep_records=False`` only velocity snapshots every
    ``checkpoint_every`` steps are kept; the adjoint then replays each
    segment to regenerate its records.  ``callback(k, velocities)`` is called
    after initialisation (``k=0``) and after every step.
    """
    t0 = time.perf_counter()
    initial, normals = init_ensemble(config)
    vel = initial.velocities.copy()
    records: list[CollisionStepRecord] | None = [] if keep_records else None
    every = checkpoint_every or max(config.n_steps, 1)
    checkpoints = {} if keep_records else {0: vel.copy()}
    violations = 0
    if callback is not None:
        callback(0, vel)
    for k in range(config.n_steps):
        rec = _advance(vel, k, config)
        violations += rec.bound_violations
        if records is not None:
            records.append(rec)
        elif (k + 1) % every == 0 and k + 1 < config.n_steps:
            checkpoints[k + 1] = vel.copy()
        if callback is not None:
            callback(k + 1, vel)
    if violations:
        log.warning("%d virtual pairs exceeded the kernel bound; they were accepted", violations)
    final = VelocityEnsemble(vel, rho=config.rho, step_index=config.n_steps)
    return ForwardResult(config, initial, final, normals, records, checkpoints,
                         violations, time.perf_counter() - t0)
