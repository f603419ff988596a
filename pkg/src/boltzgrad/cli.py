"""Command-line driver: single gradients, verification sweeps, relaxation
histories and a small calibration loop.

Config files are flat ``key = value`` text.  Blank lines and everything after
``#`` are ignored; keys are those of :data:`CONFIG_KEYS`.  Command-line flags
override file values.  Example::

    # particle-number sweep
    n = 1000
    m_steps = 20
    kappa = 0
    beta = 1
    runs = 100
    sweep = N: 100, 1000, 10000
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import logging
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _backend
from .adjoint_dsmc import PARAMETERS, AdjointOptions, adjoint_gradient, resolve_objectives
from .forward_dsmc import Algorithm, SimConfig, run_forward
from .kernel import KernelSpec
from .verify import DEFAULT_DELTA_M, Method, batch_statistics, gradient_error

log = logging.getLogger("boltzgrad")

SWEEP_AXES = ("N", "M", "kappa")

EXPERIMENT_COLUMNS = (
    "sweep_value", "objective", "parameter",
    "grad_adjoint_mean", "grad_adjoint_std", "grad_fd_mean", "grad_fd_std",
    "error_e", "wall_time_forward", "wall_time_adjoint", "bound_violations",
)
RELAXATION_COLUMNS = ("t", "Tx", "Ty", "Tz", "energy")
CALIBRATION_COLUMNS = ("iteration", "Tx0", "Ty0", "Tz0", "loss", "grad_Tx0", "grad_Ty0", "grad_Tz0")

CONFIG_KEYS = {
    "n": int, "m_steps": int, "dt": float, "kappa": float, "beta": float,
    "epsilon": float, "sigma_v": float, "sigma_total": float, "seed": int,
    "runs": int, "delta_m": float, "algorithm": str, "objective": str,
    "temperatures": str, "rho": float, "threads": int, "workers": int,
    "sweep": str, "ablate_btilde": str, "out": str,
    "target": str, "step_size": float, "iterations": int,
}

DEFAULTS = {
    "n": 10000, "m_steps": 20, "dt": 0.1, "kappa": 0.0, "beta": 0.0, "epsilon": 10.0,
    "sigma_v": None, "sigma_total": None, "seed": 0, "runs": 100, "delta_m": DEFAULT_DELTA_M,
    "algorithm": "separable", "objective": "Tx,Ty,Tz", "temperatures": "1,1,0.5", "rho": 1.0,
    "threads": None, "workers": 1, "sweep": None, "ablate_btilde": "false", "out": None,
    "target": None, "step_size": 0.5, "iterations": 50,
}


class ConfigError(ValueError):
    pass


class CalibrationDiverged(RuntimeError):
    pass


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse the flat ``key = value`` grammar into typed values."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.lower().replace("-", "_")
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            out[key] = CONFIG_KEYS[key](value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    return out


def load_config_file(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text, str(path))


def _floats(text: str, what: str, count: int | None = None) -> tuple[float, ...]:
    try:
        vals = tuple(float(x) for x in str(text).replace(";", ",").split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"{what}: expected comma-separated numbers, got {text!r}") from None
    if count is not None and len(vals) != count:
        raise ConfigError(f"{what}: expected {count} values, got {len(vals)}")
    return vals


def _flag(text) -> bool:
    if isinstance(text, bool):
        return text
    val = str(text).strip().lower()
    if val in ("1", "true", "yes", "on"):
        return True
    if val in ("0", "false", "no", "off", ""):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def parse_sweep(text: str) -> tuple[str, tuple[float, ...]]:
    """``"N: 100, 1000"`` or ``"N=100,1000"`` -> ``("N", (100.0, 1000.0))``."""
    for sep in (":", "="):
        if sep in text:
            axis, values = text.split(sep, 1)
            break
    else:
        raise ConfigError(f"sweep must look like 'N: 100, 1000', got {text!r}")
    axis = axis.strip()
    match = {a.lower(): a for a in SWEEP_AXES}.get(axis.lower())
    if match is None:
        raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}, got {axis!r}")
    vals = _floats(values, "sweep")
    if not vals:
        raise ConfigError("sweep value list is empty")
    return match, vals


def build_config(values: dict) -> SimConfig:
    kernel = KernelSpec(kappa=values["kappa"], beta=values["beta"], epsilon=values["epsilon"],
                        sigma_v=values["sigma_v"], sigma_total=values["sigma_total"])
    threads = values["threads"]
    if threads is None:
        threads = int(os.environ.get("BOLTZGRAD_THREADS", "1") or 1)
    return SimConfig(
        n_particles=values["n"], n_steps=values["m_steps"], dt=values["dt"], kernel=kernel,
        seed=values["seed"], algorithm=Algorithm(values["algorithm"]),
        initial_temperatures=_floats(values["temperatures"], "temperatures", 3),
        rho=values["rho"], threads=max(1, threads),
    )


@dataclass(frozen=True)
class ExperimentPlan:
    """A sweep of replicate batches over one axis of the configuration."""

    base: SimConfig
    sweep_axis: str
    values: tuple[float, ...]
    m_s: int = 100
    objectives: tuple[str, ...] = ("Tx", "Ty", "Tz")
    output: str | None = None
    ablation: bool = False
    delta_m: float = DEFAULT_DELTA_M
    general_scores: str = "angles"
    workers: int = 1
    timestamp: bool = True
    with_fd: bool = True

    def __post_init__(self):
        if self.sweep_axis not in SWEEP_AXES:
            raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}")
        if not self.values:
            raise ConfigError("sweep value list is empty")
        if self.m_s < 2:
            raise ConfigError("runs must be at least 2")
        for v in self.values:
            self.config_for(v)

    def config_for(self, value: float) -> SimConfig:
        if self.sweep_axis == "N":
            if value != int(value):
                raise ConfigError(f"N must be an integer, got {value}")
            return replace(self.base, n_particles=int(value))
        if self.sweep_axis == "M":
            if value != int(value):
                raise ConfigError(f"M must be an integer, got {value}")
            return replace(self.base, n_steps=int(value))
        spec = self.base.kernel
        return replace(self.base, kernel=KernelSpec(kappa=value, beta=spec.beta, epsilon=spec.epsilon,
                                                    sigma_v=spec.sigma_v))

    @property
    def options(self) -> AdjointOptions:
        return AdjointOptions(use_btilde=False if self.ablation else None,
                              general_scores=self.general_scores)


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _format_sweep_value(axis: str, value: float) -> str:
    return str(int(value)) if axis in ("N", "M") else repr(float(value))


def _write_csv(path, columns, rows, timestamp: bool, comment: str = "") -> str:
    buf = io.StringIO()
    if timestamp:
        stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
        buf.write(f"# generated {stamp}{'; ' + comment if comment else ''}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    text = buf.getvalue()
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(text, encoding="utf-8")
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc}") from exc
    return text


def run_experiment(plan: ExperimentPlan) -> list[list]:
    """Adjoint and FD batches for every sweep value; one row per (value, objective, parameter).

    ``grad_*_std`` columns hold standard deviations of the mean over the
    ``m_s`` replicates; wall times are per-replicate averages.
    """
    rows = []
    for value in plan.values:
        cfg = plan.config_for(value)
        label = _format_sweep_value(plan.sweep_axis, value)
        log.info("sweep %s=%s: %d adjoint replicates", plan.sweep_axis, label, plan.m_s)
        ad = batch_statistics(cfg, Method.ADJOINT, plan.m_s, cfg.seed, plan.objectives,
                              options=plan.options, workers=plan.workers)
        fd = None
        if plan.with_fd:
            log.info("sweep %s=%s: %d finite-difference replicates", plan.sweep_axis, label, plan.m_s)
            fd = batch_statistics(cfg, Method.FD, plan.m_s, cfg.seed, plan.objectives,
                                  delta_m=plan.delta_m, workers=plan.workers)
        err = gradient_error(ad, fd) if fd is not None else None
        wf = ad.wall_time_forward / plan.m_s if plan.timestamp else None
        wa = ad.wall_time_adjoint / plan.m_s if plan.timestamp else None
        for k, obj in enumerate(ad.objectives):
            for p, par in enumerate(PARAMETERS):
                rows.append([
                    label, obj, par, ad.mean[k, p], ad.std_of_mean[k, p],
                    None if fd is None else fd.mean[k, p], None if fd is None else fd.std_of_mean[k, p],
                    None if err is None else err[k, p], wf, wa, ad.bound_violations,
                ])
    _write_csv(plan.output, EXPERIMENT_COLUMNS, rows, plan.timestamp,
               f"backend={_backend.name()}")
    return rows


def run_relaxation(config: SimConfig, output=None, timestamp: bool = True) -> np.ndarray:
    """Component temperatures after every step; returns rows ``(t, Tx, Ty, Tz, energy)``."""
    rows = []

    def record(k, vel):
        temps = config.rho * np.mean(vel ** 2, axis=0)
        rows.append((k * config.dt, *temps, float(temps.sum())))

    run_forward(config, keep_records=False, callback=record)
    _write_csv(output, RELAXATION_COLUMNS, rows, timestamp)
    return np.array(rows)


def calibrate(
    targets: Sequence[float],
    config: SimConfig,
    step_size: float,
    iterations: int,
    output=None,
    timestamp: bool = True,
    options: AdjointOptions = AdjointOptions(),
    patience: int = 5,
) -> np.ndarray:
    """Gradient descent on ``L(m) = 1/2 sum_l (T_l(m) - target_l)^2``.

    Every iteration reuses ``config.seed``, so the trajectory is reproducible.
    Returns rows of :data:`CALIBRATION_COLUMNS`.  Raises
    :class:`CalibrationDiverged` (after writing the partial trajectory) when
    the loss increases ``patience`` times in a row or a temperature leaves
    the positive range.
    """
    targets = np.asarray(targets, dtype=float)
    if targets.shape != (3,) or np.any(targets <= 0):
        raise ValueError("targets must be three positive numbers")
    if step_size <= 0:
        raise ValueError("step size must be positive")
    m = np.asarray(config.initial_temperatures, dtype=float)
    rows, prev, rises = [], np.inf, 0
    failure = None
    for it in range(iterations + 1):
        res = adjoint_gradient(config.with_temperatures(m), ("Tx", "Ty", "Tz"), options)
        resid = res.objective_values - targets
        loss = 0.5 * float(resid @ resid)
        grad = resid @ res.gradient
        rows.append([it, *m, loss, *grad])
        rises = rises + 1 if loss > prev else 0
        prev = loss
        if rises >= patience:
            failure = f"loss increased {patience} iterations in a row (iteration {it}, loss {loss:g})"
            break
        if it == iterations:
            break
        m = m - step_size * grad
        if np.any(m <= 0):
            failure = f"step produced non-positive temperature {m.tolist()} at iteration {it}"
            break
    _write_csv(output, CALIBRATION_COLUMNS, rows, timestamp)
    if failure:
        raise CalibrationDiverged(failure + "; reduce --step-size")
    return np.array(rows, dtype=float)


def single_gradient(config: SimConfig, objectives, options: AdjointOptions, with_fd: bool,
                    delta_m: float, output=None, timestamp: bool = True) -> list[list]:
    from .verify import fd_gradient_matrix

    res = adjoint_gradient(config, objectives, options)
    fd = fd_gradient_matrix(config, delta_m, objectives) if with_fd else None
    rows = []
    for k, obj in enumerate(res.objectives):
        for p, par in enumerate(PARAMETERS):
            rows.append([obj, par, res.gradient[k, p], None if fd is None else fd[k, p]])
    _write_csv(output, ("objective", "parameter", "grad_adjoint", "grad_fd"), rows, timestamp)
    return rows


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--n", type=int, help="number of particles N (even)")
    common.add_argument("--m-steps", type=int, help="number of time steps M")
    common.add_argument("--dt", type=float, help="time step")
    common.add_argument("--kappa", type=float, help="angular exponent")
    common.add_argument("--beta", type=float, help="velocity exponent")
    common.add_argument("--epsilon", type=float, help="collision-rate scale")
    common.add_argument("--sigma-v", type=float, help="bound on |u|^beta (separable sampler)")
    common.add_argument("--sigma-total", type=float, help="bound on the full kernel (general sampler)")
    common.add_argument("--temperatures", help="initial temperatures Tx0,Ty0,Tz0")
    common.add_argument("--seed", type=int, help="base random seed")
    common.add_argument("--algorithm", choices=[a.value for a in Algorithm])
    common.add_argument("--objective", help="comma-separated subset of Tx,Ty,Tz,energy")
    common.add_argument("--threads", type=int, help="threads per simulation (default $BOLTZGRAD_THREADS or 1)")
    common.add_argument("--workers", type=int, help="replicates run concurrently")
    common.add_argument("--out", help="output CSV path ('-' for stdout)")
    common.add_argument("--no-timestamp", action="store_true",
                        help="omit the timestamp header and wall-time values (byte-identical reruns)")
    common.add_argument("--backend", choices=["compiled", "python"], help="kernel implementation")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="boltzgrad", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gradient", parents=[common], help="one adjoint gradient (optionally with FD)")
    g.add_argument("--fd", action="store_true", help="also compute the central FD gradient")
    g.add_argument("--delta-m", type=float)
    g.add_argument("--ablate-btilde", action="store_true", help="drop the angle-dependence Jacobian term")

    e = sub.add_parser("experiment", parents=[common], help="replicate batches over a sweep")
    e.add_argument("--sweep", help="axis and values, e.g. 'N: 100,1000,10000'")
    e.add_argument("--runs", type=int, help="replicates per sweep value")
    e.add_argument("--delta-m", type=float)
    e.add_argument("--ablate-btilde", action="store_true", help="drop the angle-dependence Jacobian term")
    e.add_argument("--no-fd", action="store_true", help="skip the finite-difference batches")

    sub.add_parser("relax", parents=[common], help="temperature history of one run")

    c = sub.add_parser("calibrate", parents=[common], help="fit initial temperatures to target moments")
    c.add_argument("--target", help="target final temperatures Tx,Ty,Tz")
    c.add_argument("--step-size", type=float)
    c.add_argument("--iterations", type=int)
    return parser


def _merge(args) -> dict:
    values = dict(DEFAULTS)
    if args.config:
        values.update(load_config_file(args.config))
    for key in CONFIG_KEYS:
        val = getattr(args, key, None)
        if key == "ablate_btilde":
            val = True if val else None
        if val is not None:
            values[key] = val
    return values


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.backend:
        _backend.set_backend(args.backend)
    try:
        values = _merge(args)
        config = build_config(values)
        objectives = tuple(s.strip() for s in values["objective"].split(",") if s.strip())
        resolve_objectives(objectives)
        stamp = not args.no_timestamp
        ablate = _flag(values["ablate_btilde"])
        if args.command == "gradient":
            single_gradient(config, objectives, AdjointOptions(use_btilde=False if ablate else None),
                            args.fd, values["delta_m"], values["out"], stamp)
        elif args.command == "experiment":
            if not values["sweep"]:
                raise ConfigError("experiment needs --sweep or a 'sweep' config entry")
            axis, vals = parse_sweep(values["sweep"])
            plan = ExperimentPlan(config, axis, vals, m_s=values["runs"], objectives=objectives,
                                  output=values["out"], ablation=ablate, delta_m=values["delta_m"],
                                  workers=values["workers"], timestamp=stamp,
                                  with_fd=not args.no_fd)
            run_experiment(plan)
        elif args.command == "relax":
            run_relaxation(config, values["out"], stamp)
        elif args.command == "calibrate":
            if not values["target"]:
                raise ConfigError("calibrate needs --target Tx,Ty,Tz")
            calibrate(_floats(values["target"], "target", 3), config, values["step_size"],
                      values["iterations"], values["out"], stamp)
    except CalibrationDiverged as exc:
        print(f"boltzgrad: calibration halted: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, ValueError, OSError) as exc:
        print(f"boltzgrad: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
