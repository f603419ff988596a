"""Wall-clock comparison of the compiled and pure-Python kernels.

Times one forward run and its adjoint sweep per backend and checks that
both produce the same gradient.  Usage::

    python benchmarks/bench_backends.py --n 10000 --m-steps 20 --repeat 3
"""

import argparse
import time

import numpy as np

from boltzgrad import available_backends, use_backend
from boltzgrad.adjoint_dsmc import adjoint_gradient
from boltzgrad.forward_dsmc import SimConfig
from boltzgrad.kernel import KernelSpec


def time_backend(name, cfg, repeat):
    fwd, adj, grad = [], [], None
    with use_backend(name):
        adjoint_gradient(cfg)  # warm-up
        for _ in range(repeat):
            res = adjoint_gradient(cfg)
            fwd.append(res.metadata["wall_time_forward"])
            adj.append(res.metadata["wall_time_adjoint"])
            grad = res.gradient
    return min(fwd), min(adj), grad


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n", type=int, default=10_000)
    parser.add_argument("--m-steps", type=int, default=20)
    parser.add_argument("--kappa", type=float, default=5.0)
    parser.add_argument("--beta", type=float, default=1.0)
    parser.add_argument("--algorithm", default="separable", choices=["separable", "general"])
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args(argv)

    cfg = SimConfig(n_particles=args.n, n_steps=args.m_steps, kernel=KernelSpec(kappa=args.kappa, beta=args.beta),
                    algorithm=args.algorithm, threads=args.threads)
    print(f"N={args.n} M={args.m_steps} kappa={args.kappa} beta={args.beta} "
          f"algorithm={args.algorithm} threads={args.threads} (best of {args.repeat})")
    print(f"{'backend':>10} {'forward [s]':>12} {'adjoint [s]':>12}")
    results = {}
    for name in available_backends():
        results[name] = time_backend(name, cfg, args.repeat)
        f, a, _ = results[name]
        print(f"{name:>10} {f:12.4f} {a:12.4f}")
    if len(results) == 2:
        (fc, ac, gc), (fp, ap, gp) = results["compiled"], results["python"]
        print(f"speed-up: forward {fp / fc:.1f}x, adjoint {ap / ac:.1f}x; "
              f"max gradient difference {np.max(np.abs(gc - gp)):.2e}")


if __name__ == "__main__":
    main()
