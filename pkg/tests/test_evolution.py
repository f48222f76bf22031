import math

import numpy as np
import pytest

from gsqg.errors import ConvergenceError, DomainError, ParameterError
from gsqg.evolution import (
    EvolutionConfig,
    advect_step,
    evolve,
    interpolate_at,
    perturb,
    stability_experiment,
    support_touches_wall,
    velocity_pair,
    wall_normal_velocity,
)
from gsqg.fields import Field2D, Grid2D, lp_norm, mass
from gsqg.kernels import KernelParams


def blob_field(n=96, center=(2.0, 0.0), radius=0.4, x1span=(1.0, 3.0)):
    g = Grid2D(n, n, x1span[0], x1span[1], -0.5 * (x1span[1] - x1span[0]),
               0.5 * (x1span[1] - x1span[0]))
    X1, X2 = g.centers()
    r2 = (X1 - center[0]) ** 2 + (X2 - center[1]) ** 2
    vals = np.clip(1.0 - r2 / radius ** 2, 0.0, None) ** 1.5
    return Field2D(g, vals, nonneg=True)


PARAMS = KernelParams.from_order(0.5)


class TestConfig:
    def test_validation(self):
        with pytest.raises(ParameterError):
            EvolutionConfig(T=-1.0)
        with pytest.raises(ParameterError):
            EvolutionConfig(T=1.0, dt=2.0)
        with pytest.raises(ParameterError):
            EvolutionConfig(T=1.0, interp="cubic-hermite")


class TestVelocity:
    def test_wall_streamline_exact(self):
        f = blob_field()
        u1_wall = wall_normal_velocity(f, PARAMS)
        assert np.all(u1_wall == 0.0)

    def test_self_induced_drift_matches_point_pair(self):
        # far-from-wall blob: velocity at its exact center is the
        # image-induced drift -c_s (2-2s) kappa (2a)^(2s-3) e2 + O((R/a)^2)
        from gsqg.kernels import velocity_halfplane

        a = 8.0
        f = blob_field(n=128, center=(a, 0.0), radius=0.35,
                       x1span=(a - 1.0, a + 1.0))
        kappa = mass(f)
        u = velocity_halfplane(f, [[a, 0.0]], PARAMS)[0]
        expect = -PARAMS.c_s * (2 - 2 * PARAMS.s) * kappa \
            * (2 * a) ** (2 * PARAMS.s - 3)
        assert u[1] == pytest.approx(expect, rel=0.05)
        assert abs(u[0]) < 0.05 * abs(expect)

    def test_linearity(self):
        f = blob_field(n=48)
        u1a, u2a = velocity_pair(f, PARAMS)
        f2 = Field2D(f.grid, 2.0 * f.values, nonneg=True)
        u1b, u2b = velocity_pair(f2, PARAMS)
        np.testing.assert_allclose(u1b, 2 * u1a, rtol=1e-12, atol=1e-16)
        np.testing.assert_allclose(u2b, 2 * u2a, rtol=1e-12, atol=1e-16)

    def test_wall_touch_detector(self):
        g = Grid2D(8, 8, 0.0, 1.0, -0.5, 0.5)
        vals = np.zeros((8, 8))
        vals[3, 0] = 1.0
        assert support_touches_wall(Field2D(g, vals))
        vals2 = np.zeros((8, 8))
        vals2[3, 4] = 1.0
        assert not support_touches_wall(Field2D(g, vals2))


class TestAdvection:
    def test_zero_velocity_identity(self):
        f = blob_field(n=64)
        z = np.zeros_like(f.values)
        out, lost = advect_step(f, z, z, 0.1, EvolutionConfig(T=1.0))
        assert np.array_equal(out.values, f.values)
        assert lost == 0.0

    def test_aligned_uniform_shift_exact(self):
        f = blob_field(n=64)
        g = f.grid
        dt = 0.05
        v = g.h2 / dt
        out, _ = advect_step(f, np.zeros_like(f.values),
                             np.full_like(f.values, v), dt,
                             EvolutionConfig(T=1.0))
        np.testing.assert_array_equal(out.values[2:-2, 2:-2],
                                      f.values[1:-3, 2:-2])

    def test_solid_rotation_low_diffusion(self):
        # rigid rotation of a radial blob: invariant within interpolation
        # diffusion, L2 decay at most 1% per revolution
        g = Grid2D(128, 128, 0.0, 2.0, -1.0, 1.0)
        X1, X2 = g.centers()
        f = Field2D(g, np.exp(-((X1 - 1.0) ** 2 + X2 ** 2) / 0.08),
                    nonneg=True)
        om = 2.0
        u1, u2 = -om * X2, om * (X1 - 1.0)
        speed = float(np.max(np.hypot(u1, u2)))
        n_steps = int(math.ceil(2 * math.pi / om / (0.4 * g.h1 / speed)))
        dt = 2 * math.pi / om / n_steps
        cur = f
        cfg = EvolutionConfig(T=1.0, interp="bicubic")
        for _ in range(n_steps):
            cur, _ = advect_step(cur, u1, u2, dt, cfg)
        l2_0 = lp_norm(f, 2)
        decay = (l2_0 - lp_norm(cur, 2)) / l2_0
        err = lp_norm(Field2D(g, cur.values - f.values), 2) / l2_0
        assert decay <= 0.01
        assert err <= 0.01

    def test_monotone_no_new_extrema(self):
        rng = np.random.default_rng(0)
        f = blob_field(n=48)
        u1 = rng.standard_normal(f.values.shape) * 0.3
        u2 = rng.standard_normal(f.values.shape) * 0.3
        out, _ = advect_step(f, u1, u2, 0.02, EvolutionConfig(T=1.0))
        assert out.values.max() <= f.values.max()
        assert out.values.min() >= 0.0

    def test_outflow_zero_inflow(self):
        f = blob_field(n=48, center=(2.8, 0.0), radius=0.3)
        push = np.full_like(f.values, 5.0)
        out, lost = advect_step(f, push, np.zeros_like(f.values), 0.05,
                                EvolutionConfig(T=1.0))
        assert lost > 0
        assert out.values.min() >= 0.0

    def test_interpolate_at_outside_is_zero(self):
        f = blob_field(n=32)
        vals = interpolate_at(f, np.array([0.0, 5.0]), np.array([0.0, 0.0]))
        assert vals[0] == 0.0 and vals[1] == 0.0


class TestEvolve:
    def test_conservation_at_rest(self):
        # all diagnostics constant to machine precision when u is frozen to 0
        f = blob_field(n=48)
        cfg = EvolutionConfig(T=0.4, dt=0.1, diag_every=1, check_wall=False)
        cur = f
        vals0 = (mass(f), lp_norm(f, 2), lp_norm(f, math.inf))
        for _ in range(4):
            cur, _ = advect_step(cur, np.zeros_like(f.values),
                                 np.zeros_like(f.values), 0.1, cfg)
        assert (mass(cur), lp_norm(cur, 2), lp_norm(cur, math.inf)) == vals0

    def test_short_run_diagnostics(self):
        f = blob_field(n=64)
        cfg = EvolutionConfig(T=0.3, diag_every=5, snapshot_steps=(0,))
        rep = evolve(f, PARAMS, cfg, reference=f)
        assert rep.steps >= 1
        assert rep.drift("mass") <= 1e-3
        assert max(rep.wall_u1_max) == 0.0
        assert all(rep.linf[i + 1] <= rep.linf[i] * (1 + 1e-14)
                   for i in range(len(rep.linf) - 1))
        assert 0 in rep.snapshots
        assert len(rep.rows()) == len(rep.times)

    def test_cfl_halving_then_abort(self):
        f = blob_field(n=48)
        cfg = EvolutionConfig(T=1.0, dt=1.0, max_dt_halvings=1,
                              check_wall=False)
        with pytest.raises(ConvergenceError):
            evolve(f, PARAMS, cfg)

    def test_negative_input_rejected(self):
        g = Grid2D(8, 8, 0.0, 1.0, -0.5, 0.5)
        f = Field2D(g, -np.ones((8, 8)))
        with pytest.raises(DomainError):
            evolve(f, PARAMS, EvolutionConfig(T=0.1))

    def test_steady_pair_stays_put_short_horizon(self, pair_regime):
        # the converged traveling profile under its own dynamics: over a
        # couple hundred steps the orbital distance stays at the scheme floor
        sol = pair_regime[0.2]
        f = sol.omega
        u1, u2 = velocity_pair(f, sol.problem.params)
        h = min(f.grid.h1, f.grid.h2)
        dt = 0.4 * h / float(np.max(np.hypot(u1, u2)))
        cfg = EvolutionConfig(T=200 * dt, dt=dt, diag_every=50,
                              check_wall=False)
        rep = evolve(f, sol.problem.params, cfg, reference=f,
                     speed_hint=sol.problem.speed)
        x1 = f.grid.x1_centers()
        norm = (lp_norm(f, 1) + lp_norm(f, 2)
                + float(np.sum(np.abs(f.values) * x1[None, :])
                        * f.grid.cell_area))
        assert max(rep.orbital_distance) <= 0.02 * norm
        assert rep.drift("mass") <= 1e-4
        assert rep.drift("impulse") <= 1e-3


class TestPerturbations:
    def test_kinds_preserve_mass_and_sign(self, pair_regime):
        f = pair_regime[0.2].omega
        rng = np.random.default_rng(3)
        for kind in ("none", "bump", "shear", "dimple"):
            out = perturb(f, kind, 0.05, rng)
            assert mass(out) == pytest.approx(mass(f), rel=1e-12)
            assert out.values.min() >= 0.0
            if kind != "none":
                assert not np.array_equal(out.values, f.values)

    def test_unknown_kind(self, pair_regime):
        with pytest.raises(ParameterError):
            perturb(pair_regime[0.2].omega, "wiggle", 0.1,
                    np.random.default_rng(0))

    def test_experiment_rows(self, pair_regime):
        sol = pair_regime[0.2]
        f = sol.omega
        u1, u2 = velocity_pair(f, sol.problem.params)
        h = min(f.grid.h1, f.grid.h2)
        dt = 0.4 * h / float(np.max(np.hypot(u1, u2)))
        cfg = EvolutionConfig(T=30 * dt, dt=dt, diag_every=10,
                              check_wall=False)
        rows = stability_experiment(
            f, sol.problem.params,
            [("none", 0.0, 0), ("bump", 0.04, 1), ("bump", 0.02, 1)],
            cfg, speed_hint=sol.problem.speed, seed=0)
        assert rows[0]["delta_meas"] == 0.0
        assert rows[1]["delta_meas"] > rows[2]["delta_meas"] > 0
        for r in rows:
            assert r["sup_distance"] >= r["final_distance"] >= 0 or \
                r["sup_distance"] >= 0
