import logging

import numpy as np
import pytest

from boltzgrad.forward_dsmc import (
    REAL,
    Algorithm,
    SimConfig,
    VelocityEnsemble,
    init_ensemble,
    replay_records,
    run_forward,
    select_pairs,
    step_general,
    step_separable,
)
from boltzgrad.kernel import KernelSpec


def gaussian_ensemble(n, temps=(1.0, 1.0, 0.5), seed=0):
    v = np.random.default_rng(seed).normal(size=(n, 3)) * np.sqrt(temps)
    return VelocityEnsemble(v)


class TestSimConfig:
    def test_odd_n_rejected(self):
        with pytest.raises(ValueError, match="even"):
            SimConfig(n_particles=11, n_steps=1)

    def test_nonpositive_temperature_rejected(self):
        with pytest.raises(ValueError, match="temperatures"):
            SimConfig(n_particles=10, n_steps=1, initial_temperatures=(0.0, 1.0, 1.0))

    def test_collision_probability_bound(self):
        with pytest.raises(ValueError, match="exceeds 1"):
            SimConfig(n_particles=10, n_steps=1, dt=2.0, kernel=KernelSpec(beta=1))

    def test_pair_count(self):
        cfg = SimConfig(n_particles=10**6, n_steps=1, kernel=KernelSpec(beta=1, epsilon=10, sigma_v=10))
        assert cfg.collision_rate == pytest.approx(1.0)
        assert cfg.n_collision_pairs == 50_000

    def test_general_rate(self):
        cfg = SimConfig(n_particles=1000, n_steps=1, kernel=KernelSpec(kappa=1, beta=1),
                        algorithm="general")
        spec = cfg.kernel
        assert cfg.collision_rate == pytest.approx(4 * np.pi * spec.sigma_total)
        assert cfg.n_collision_pairs == int(np.ceil(0.1 * cfg.collision_rate * 1000 / 2 - 1e-9))

    def test_t_final(self):
        assert SimConfig(n_particles=2, n_steps=20).t_final == pytest.approx(2.0)


class TestInitEnsemble:
    def test_sample_variances(self):
        cfg = SimConfig(n_particles=100_000, n_steps=0)
        ens, normals = init_ensemble(cfg)
        np.testing.assert_allclose(ens.velocities.var(axis=0), [1, 1, 0.5], atol=5 / np.sqrt(cfg.n_particles))
        np.testing.assert_array_equal(ens.velocities, normals * np.sqrt([1, 1, 0.5]))

    def test_deterministic(self):
        cfg = SimConfig(n_particles=100, n_steps=0, seed=17)
        np.testing.assert_array_equal(init_ensemble(cfg)[0].velocities, init_ensemble(cfg)[0].velocities)

    def test_normals_independent_of_temperatures(self):
        cfg = SimConfig(n_particles=100, n_steps=0, seed=3)
        _, a = init_ensemble(cfg)
        _, b = init_ensemble(cfg.with_temperatures((2.0, 0.1, 5.0)))
        np.testing.assert_array_equal(a, b)


class TestSelectPairs:
    def test_exhaustive(self, backend):
        pairs = select_pairs(4, 2, 0, 0)
        assert sorted(pairs.ravel().tolist()) == [0, 1, 2, 3]

    def test_disjoint(self, backend):
        pairs = select_pairs(1000, 400, 5, 9)
        assert len(np.unique(pairs)) == 800

    def test_too_many(self, backend):
        with pytest.raises(ValueError, match="collision count exceeds ensemble"):
            select_pairs(4, 3, 0, 0)

    def test_uniform_pairing(self, backend):
        trials = 10_000
        counts = {}
        for t in range(trials):
            i, j = sorted(select_pairs(6, 1, 11, t)[0])
            counts[(i, j)] = counts.get((i, j), 0) + 1
        assert len(counts) == 15
        p = 1 / 15
        sd = np.sqrt(p * (1 - p) / trials)
        for c in counts.values():
            assert abs(c / trials - p) < 3 * sd

    def test_backends_agree(self):
        from boltzgrad import _backend
        if "compiled" not in _backend.available():
            pytest.skip("compiled kernels not built")
        with _backend.use_backend("compiled"):
            a = select_pairs(10_000, 2_500, 123, 4)
        with _backend.use_backend("python"):
            b = select_pairs(10_000, 2_500, 123, 4)
        np.testing.assert_array_equal(a, b)


class TestStepSeparable:
    def test_maxwell_all_real(self, backend):
        cfg = SimConfig(n_particles=1000, n_steps=1, kernel=KernelSpec(beta=0, sigma_v=1))
        ens, _ = init_ensemble(cfg)
        _, rec = step_separable(ens, cfg)
        assert rec.n_real == rec.n_pairs == cfg.n_collision_pairs

    def test_conservation(self, backend):
        cfg = SimConfig(n_particles=1000, n_steps=1, kernel=KernelSpec(kappa=2, beta=1))
        ens, _ = init_ensemble(cfg)
        new, _ = step_separable(ens, cfg)
        np.testing.assert_allclose(new.momentum(), ens.momentum(), atol=1e-12 * np.abs(ens.velocities).sum())
        assert new.energy() == pytest.approx(ens.energy(), rel=1e-12)
        assert new.step_index == 1 and ens.step_index == 0

    def test_acceptance_fraction(self, backend):
        cfg = SimConfig(n_particles=100_000, n_steps=1, kernel=KernelSpec(beta=1, sigma_v=10))
        ens = gaussian_ensemble(cfg.n_particles)
        accepted = total = 0
        for k in range(60):
            ens.step_index = k
            _, rec = step_separable(ens, cfg)
            accepted += rec.n_real
            total += rec.n_pairs
        # oracle: E|v - v1| for independent draws from the same Gaussian
        draws = np.random.default_rng(99).normal(size=(2, 10**6, 3)) * np.sqrt([1, 1, 0.5])
        speed = np.linalg.norm(draws[0] - draws[1], axis=1)
        p = speed.mean() / 10
        sd = np.sqrt(p * (1 - p) / total + (speed.std() / 10) ** 2 * (2 / cfg.n_particles + 1e-6))
        assert abs(accepted / total - p) < 3 * sd

    def test_rejected_pairs_have_no_direction(self, backend):
        cfg = SimConfig(n_particles=1000, n_steps=1, kernel=KernelSpec(kappa=1, beta=1))
        _, rec = step_separable(init_ensemble(cfg)[0], cfg)
        rejected = rec.outcome != REAL
        assert rejected.any()
        assert np.all(np.isnan(rec.sigma[rejected]))
        assert np.all(np.isfinite(rec.sigma[~rejected]))
        np.testing.assert_allclose(np.linalg.norm(rec.alpha, axis=1), 1.0, atol=1e-12)
        np.testing.assert_allclose((rec.sigma[~rejected] * rec.alpha[~rejected]).sum(1),
                                   rec.cos_theta[~rejected], atol=1e-10)

    def test_wrong_algorithm(self):
        cfg = SimConfig(n_particles=10, n_steps=1, algorithm="general")
        with pytest.raises(ValueError):
            step_separable(init_ensemble(cfg)[0], cfg)

    def test_bound_violations_counted(self, backend, caplog):
        cfg = SimConfig(n_particles=1000, n_steps=2, kernel=KernelSpec(beta=1, sigma_v=0.5))
        with caplog.at_level(logging.WARNING, logger="boltzgrad"):
            res = run_forward(cfg)
        assert res.bound_violations > 0
        assert "exceeded the kernel bound" in caplog.text


class TestStepGeneral:
    def test_maxwell_all_real(self, backend):
        spec = KernelSpec(kappa=0, beta=0)
        spec = KernelSpec(kappa=0, beta=0, sigma_total=spec.c_norm)
        cfg = SimConfig(n_particles=1000, n_steps=1, kernel=spec, algorithm="general")
        _, rec = step_general(init_ensemble(cfg)[0], cfg)
        assert rec.n_real == rec.n_pairs

    def test_uniform_directions(self, backend):
        spec = KernelSpec(kappa=0, beta=0)
        spec = KernelSpec(kappa=0, beta=0, sigma_total=spec.c_norm, epsilon=spec.epsilon)
        cfg = SimConfig(n_particles=20_000, n_steps=1, kernel=spec, algorithm="general")
        ens = init_ensemble(cfg)[0]
        sig = []
        k = 0
        while sum(len(s) for s in sig) < 100_000:
            ens.step_index = k
            sig.append(step_general(ens, cfg)[1].sigma)
            k += 1
        sig = np.concatenate(sig)
        np.testing.assert_allclose(sig.mean(axis=0), 0.0, atol=3 * np.sqrt(1 / 3 / len(sig)))

    def test_conservation(self, backend):
        cfg = SimConfig(n_particles=1000, n_steps=1, kernel=KernelSpec(kappa=5, beta=1), algorithm="general")
        ens = init_ensemble(cfg)[0]
        new, rec = step_general(ens, cfg)
        assert rec.n_real > 0
        assert new.energy() == pytest.approx(ens.energy(), rel=1e-12)
        np.testing.assert_allclose(new.momentum(), ens.momentum(), atol=1e-12 * np.abs(ens.velocities).sum())

    def test_matches_separable_moments(self):
        tys = {}
        for alg in ("separable", "general"):
            cfg = SimConfig(n_particles=2000, n_steps=20, kernel=KernelSpec(kappa=1, beta=1), algorithm=alg)
            tys[alg] = np.array([run_forward(cfg.with_seed(s), keep_records=False).final.temperatures()[1]
                                 for s in range(100)])
        diff = tys["separable"].mean() - tys["general"].mean()
        sd = np.sqrt(tys["separable"].var(ddof=1) / 100 + tys["general"].var(ddof=1) / 100)
        assert abs(diff) < 3 * sd


class TestRunForward:
    def test_zero_steps(self):
        res = run_forward(SimConfig(n_particles=100, n_steps=0))
        np.testing.assert_array_equal(res.final.velocities, res.initial.velocities)
        assert res.records == []

    def test_records(self, backend):
        cfg = SimConfig(n_particles=500, n_steps=5, kernel=KernelSpec(kappa=1, beta=1))
        res = run_forward(cfg)
        assert [r.step for r in res.records] == list(range(5))
        for rec in res.records:
            assert rec.n_pairs == cfg.n_collision_pairs
            assert len(np.unique(rec.pairs)) == 2 * rec.n_pairs
            for k in np.flatnonzero(rec.outcome == REAL):
                frame = rec.frame(int(k))
                assert np.cos(frame.theta) == pytest.approx(rec.cos_theta[k])
        assert sum(r.n_real for r in res.records) > 0

    def test_energy_constant(self, backend):
        cfg = SimConfig(n_particles=1000, n_steps=30, kernel=KernelSpec(kappa=2, beta=2))
        energies = []
        run_forward(cfg, keep_records=False, callback=lambda k, v: energies.append((v ** 2).sum()))
        np.testing.assert_allclose(energies, energies[0], rtol=1e-12)

    def test_checkpoint_replay(self, backend):
        cfg = SimConfig(n_particles=400, n_steps=7, kernel=KernelSpec(kappa=1, beta=1))
        full = run_forward(cfg)
        light = run_forward(cfg, keep_records=False, checkpoint_every=3)
        assert sorted(light.checkpoints) == [0, 3, 6]
        np.testing.assert_array_equal(light.final.velocities, full.final.velocities)
        replayed = replay_records(cfg, light.checkpoints[3], 3, 6)
        for a, b in zip(replayed, full.records[3:6]):
            np.testing.assert_array_equal(a.pairs, b.pairs)
            np.testing.assert_array_equal(a.outcome, b.outcome)
            np.testing.assert_array_equal(a.sigma, b.sigma)

    def test_maxwell_anisotropy_decay(self):
        # each collision with isotropic sigma removes half of the pair's
        # anisotropy; a particle collides with probability dt*mu per step
        cfg = SimConfig(n_particles=20_000, n_steps=200)
        res = run_forward(cfg, keep_records=False)
        t0, t1 = res.initial.temperatures(), res.final.temperatures()
        factor = (1 - cfg.dt * cfg.collision_rate / 2) ** cfg.n_steps
        np.testing.assert_allclose(t1 - t1.mean(), (t0 - t0.mean()) * factor, atol=0.02)

    def test_algorithm_parse(self):
        assert SimConfig(n_particles=2, n_steps=0, algorithm="general").algorithm is Algorithm.GENERAL
