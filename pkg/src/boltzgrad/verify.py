"""Finite-difference reference gradients and replicate statistics.

Central differences reuse the seed of the unperturbed run, so both
perturbed simulations consume identical random numbers (common random
numbers).  Replicate ``r`` of a batch runs with seed ``base_seed + r`` for
both the adjoint and the finite-difference estimator.
"""

from __future__ import annotations

import enum
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .adjoint_dsmc import AdjointOptions, adjoint_gradient, resolve_objective, resolve_objectives
from .forward_dsmc import SimConfig, run_forward

DEFAULT_DELTA_M = 0.1


class Method(str, enum.Enum):
    ADJOINT = "adjoint"
    FD = "fd"


@dataclass
class RunStatistics:
    """Replicate mean and standard deviation of the mean, shape ``(objectives, 3)``."""

    mean: np.ndarray
    std_of_mean: np.ndarray
    m_s: int
    per_run: np.ndarray
    objectives: tuple[str, ...]
    wall_time_forward: float = 0.0
    wall_time_adjoint: float = 0.0
    bound_violations: int = 0
    seeds: tuple[int, ...] = field(default_factory=tuple)

    @property
    def per_run_std(self) -> np.ndarray:
        return self.per_run.std(axis=0, ddof=1)


def objective_value(ensemble, selector) -> float:
    """``J = (rho/N) sum_i phi(v_i)`` for ``selector`` in ``Tx, Ty, Tz, energy``."""
    obj = resolve_objective(selector)
    return float(ensemble.rho * np.mean(obj.phi(ensemble.velocities)))


def simulate_objectives(config: SimConfig, objectives=("Tx", "Ty", "Tz")) -> np.ndarray:
    """Final-time objective values of one forward run (no records kept)."""
    objs = resolve_objectives(objectives)
    fwd = run_forward(config, keep_records=False)
    return np.array([objective_value(fwd.final, o) for o in objs])


def fd_gradient(
    config: SimConfig,
    delta_m: float = DEFAULT_DELTA_M,
    parameter: int = 0,
    objectives=("Tx", "Ty", "Tz"),
    evaluate: Callable[[SimConfig], np.ndarray] | None = None,
) -> np.ndarray:
    """``(J(m + dm e_p) - J(m - dm e_p)) / (2 dm)`` with the seed held fixed.

    ``evaluate`` replaces the forward simulation (maps a config to objective
    values); it exists so the differencing itself can be tested in isolation.
    """
    if delta_m <= 0:
        raise ValueError("delta_m must be positive")
    temps = np.asarray(config.initial_temperatures, dtype=float)
    if temps[parameter] - delta_m <= 0:
        raise ValueError("negative perturbed temperature")
    evaluate = evaluate or (lambda cfg: simulate_objectives(cfg, objectives))
    plus, minus = temps.copy(), temps.copy()
    plus[parameter] += delta_m
    minus[parameter] -= delta_m
    j_plus = np.asarray(evaluate(config.with_temperatures(plus)), dtype=float)
    j_minus = np.asarray(evaluate(config.with_temperatures(minus)), dtype=float)
    return (j_plus - j_minus) / (2.0 * delta_m)


def fd_gradient_matrix(config: SimConfig, delta_m: float = DEFAULT_DELTA_M,
                       objectives=("Tx", "Ty", "Tz")) -> np.ndarray:
    """All parameters at once: shape ``(objectives, 3)``."""
    return np.column_stack([fd_gradient(config, delta_m, p, objectives) for p in range(3)])


def _one_run(config, method, objectives, delta_m, options):
    if method is Method.ADJOINT:
        res = adjoint_gradient(config, objectives, options)
        md = res.metadata
        return res.gradient, md["wall_time_forward"], md["wall_time_adjoint"], md["bound_violations"]
    t0 = time.perf_counter()
    grad = fd_gradient_matrix(config, delta_m, objectives)
    return grad, time.perf_counter() - t0, 0.0, 0


def batch_statistics(
    config: SimConfig,
    method: Method | str,
    m_s: int,
    base_seed: int = 0,
    objectives: Sequence = ("Tx", "Ty", "Tz"),
    delta_m: float = DEFAULT_DELTA_M,
    options: AdjointOptions = AdjointOptions(),
    workers: int = 1,
    seeds: Sequence[int] | None = None,
) -> RunStatistics:
    """Replicate a gradient estimator ``m_s`` times with seeds ``base_seed + r``.

    ``workers > 1`` runs replicates on a thread pool; results are ordered by
    replicate index either way.
    """
    method = Method(method)
    if m_s < 2:
        raise ValueError("m_s must be at least 2")
    seeds = tuple(int(s) for s in (seeds if seeds is not None else range(base_seed, base_seed + m_s)))
    if len(seeds) != m_s:
        raise ValueError("need one seed per replicate")
    names = tuple(o.name for o in resolve_objectives(objectives))
    jobs = [config.with_seed(s) for s in seeds]
    run = lambda cfg: _one_run(cfg, method, objectives, delta_m, options)  # noqa: E731
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(cfg) for cfg in jobs]
    per_run = np.stack([r[0] for r in results])
    return RunStatistics(
        mean=per_run.mean(axis=0),
        std_of_mean=per_run.std(axis=0, ddof=1) / np.sqrt(m_s),
        m_s=m_s,
        per_run=per_run,
        objectives=names,
        wall_time_forward=float(sum(r[1] for r in results)),
        wall_time_adjoint=float(sum(r[2] for r in results)),
        bound_violations=int(sum(r[3] for r in results)),
        seeds=seeds,
    )


def gradient_error(stats_adjoint: RunStatistics, stats_fd: RunStatistics) -> np.ndarray:
    """``e = |mean_AD - mean_FD|`` entrywise."""
    if stats_adjoint.mean.shape != stats_fd.mean.shape:
        raise ValueError("statistics cover different objectives or parameters")
    return np.abs(stats_adjoint.mean - stats_fd.mean)


def combined_std(*stats: RunStatistics) -> np.ndarray:
    return np.sqrt(sum(s.std_of_mean ** 2 for s in stats))
