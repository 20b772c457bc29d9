"""Dyadic grids, initial laws, and the two path samplers."""

from __future__ import annotations

import numpy as np
import pytest
from scipy import stats

from roughdiff import fields, sampling
from roughdiff.errors import (
    GridFinerThanPath,
    NonDiagonalField,
    OrderTooLarge,
    RoughFieldError,
)


class TestDyadicGrid:
    def test_basic(self):
        g = sampling.dyadic_grid(1.0, 3)
        assert len(g) == 9
        np.testing.assert_array_equal(g.times, np.arange(9) / 8.0)
        assert g.spacing == 0.125

    def test_exact_binary_times(self):
        g = sampling.dyadic_grid(1.0, 20)
        # spacing is a power of two, so i * spacing is exact
        assert g.times[1] == 2.0 ** -20
        assert g.times[-1] == 1.0
        assert g.times[2 ** 19] == 0.5

    @pytest.mark.parametrize("n", [-1, 25, 40])
    def test_order_too_large(self, n):
        with pytest.raises(OrderTooLarge):
            sampling.dyadic_grid(1.0, n)

    def test_fine_step_default(self):
        assert sampling.fine_step_for(1.0, 10) == 2.0 ** -14
        with pytest.raises(OrderTooLarge):
            sampling.fine_step_for(1.0, 24)


class TestInitialLaws:
    def test_dirac(self):
        law = sampling.dirac([1.0, -2.0])
        rng = sampling.path_rng(0, 0)
        np.testing.assert_array_equal(sampling.sample_initial(law, rng),
                                      [1.0, -2.0])
        assert law.atoms()[0].tolist() == [1.0, -2.0]

    def test_mixture_of_diracs(self):
        law = sampling.mixture([0.5, 0.5],
                               [sampling.dirac([-1.0]), sampling.dirac([1.0])])
        rng = sampling.path_rng(3, 1)
        draws = np.array([sampling.sample_initial(law, rng)[0]
                          for _ in range(2000)])
        assert set(np.unique(draws)) == {-1.0, 1.0}
        assert abs(draws.mean()) < 0.05
        assert len(law.atoms()) == 2

    def test_grid_density_1d_uniform(self):
        law = sampling.grid_density([np.linspace(0, 1, 11)], np.ones(10))
        rng = sampling.path_rng(5, 0)
        draws = np.array([sampling.sample_initial(law, rng)[0]
                          for _ in range(3000)])
        assert draws.min() >= 0 and draws.max() <= 1
        assert stats.kstest(draws, "uniform").pvalue > 0.01

    def test_grid_density_2d(self):
        edges = [np.linspace(-1, 1, 5), np.linspace(0, 2, 5)]
        vals = np.ones((4, 4))
        vals[0, 0] = 9.0  # weight mass toward the corner cell
        law = sampling.grid_density(edges, vals)
        rng = sampling.path_rng(11, 0)
        pts = np.array([sampling.sample_initial(law, rng)
                        for _ in range(4000)])
        assert pts[:, 0].min() >= -1 and pts[:, 0].max() <= 1
        assert pts[:, 1].min() >= 0 and pts[:, 1].max() <= 2
        corner = (pts[:, 0] < -0.5) & (pts[:, 1] < 0.5)
        assert corner.mean() == pytest.approx(9.0 / 24.0, abs=0.04)

    def test_density_validation(self):
        with pytest.raises(ValueError):
            sampling.grid_density([np.linspace(0, 1, 3)], [-1.0, 1.0])


class TestDeterminism:
    def test_same_key_same_path(self):
        f = fields.IdentityField(dim=1)
        law = sampling.dirac([0.0])
        a = sampling.simulate_em(f, law, 1.0, 2.0 ** -8, seed=7, path_id=3)
        b = sampling.simulate_em(f, law, 1.0, 2.0 ** -8, seed=7, path_id=3)
        np.testing.assert_array_equal(a.states, b.states)

    def test_distinct_paths_differ(self):
        f = fields.IdentityField(dim=1)
        law = sampling.dirac([0.0])
        a = sampling.simulate_em(f, law, 1.0, 2.0 ** -8, seed=7, path_id=3)
        b = sampling.simulate_em(f, law, 1.0, 2.0 ** -8, seed=7, path_id=4)
        c = sampling.simulate_em(f, law, 1.0, 2.0 ** -8, seed=8, path_id=3)
        assert not np.array_equal(a.states, b.states)
        assert not np.array_equal(a.states, c.states)

    def test_attempts_and_large_mixed_keys_differ(self):
        # the mixed key exceeds 2^53 for attempt > 0, so this catches any
        # float round-trip in the Philox key plumbing
        base = sampling.path_rng(7, 0, attempt=1).standard_normal(4)
        for seed, attempt in [(8, 1), (7, 2), (7, 0)]:
            other = sampling.path_rng(seed, attempt=attempt,
                                      path_id=0).standard_normal(4)
            assert not np.array_equal(base, other)
        again = sampling.path_rng(7, 0, attempt=1).standard_normal(4)
        np.testing.assert_array_equal(base, again)

    def test_batch_independent_of_grouping(self):
        f = fields.mollify(
            fields.make_field("checkerboard", lo=0.5, hi=2.0), eps=0.1)
        law = sampling.dirac([0.0])
        args = (f, law, 1.0, 2.0 ** -8, 7)
        together = sampling._em_batch_states(*args, [0, 1, 2])
        for pid in range(3):
            alone = sampling._em_batch_states(*args, [pid])
            np.testing.assert_array_equal(alone[0], together[pid])

    def test_lattice_batch_independent_of_grouping(self):
        f = fields.make_field("checkerboard", lo=0.5, hi=2.0)
        law = sampling.dirac([0.0])
        args = (f, law, 1.0, 2.0 ** -12, 7)
        together = sampling._lattice_batch_states(*args, [0, 1, 2], h=0.125)
        for pid in range(3):
            alone = sampling._lattice_batch_states(*args, [pid], h=0.125)
            np.testing.assert_array_equal(alone[0], together[pid])

    def test_stride_recording_consistent(self):
        f = fields.IdentityField(dim=1)
        law = sampling.dirac([0.0])
        full = sampling._em_batch_states(f, law, 1.0, 2.0 ** -8, 7, [0, 1])
        coarse = sampling._em_batch_states(f, law, 1.0, 2.0 ** -8, 7, [0, 1],
                                           stride=16)
        np.testing.assert_array_equal(full[:, ::16], coarse)


class TestEulerMaruyama:
    def test_brownian_moments(self):
        f = fields.IdentityField(dim=1)
        law = sampling.dirac([0.0])
        states = sampling._em_batch_states(f, law, 1.0, 2.0 ** -10, 21,
                                           list(range(2000)), stride=1024)
        final = states[:, -1, 0]
        assert abs(final.mean()) < 0.1
        assert final.var() == pytest.approx(2.0, abs=0.15)

    def test_rough_field_rejected(self):
        f = fields.make_field("checkerboard", lo=0.5, hi=2.0)
        with pytest.raises(RoughFieldError):
            sampling.simulate_em(f, sampling.dirac([0.0]), 1.0, 2.0 ** -8,
                                 seed=0, path_id=0)

    def test_smooth_sine_runs(self):
        f = fields.make_field("smooth-sine", dim=2)
        law = sampling.dirac([0.0, 0.0])
        p = sampling.simulate_em(f, law, 0.5, 2.0 ** -9, seed=1, path_id=0)
        assert p.states.shape == (257, 2)
        assert np.isfinite(p.states).all()

    def test_mollified_checkerboard_runs(self):
        f = fields.mollify(
            fields.make_field("checkerboard", lo=0.5, hi=2.0), eps=0.1)
        law = sampling.dirac([0.25])
        p = sampling.simulate_em(f, law, 0.25, 2.0 ** -10, seed=2, path_id=5)
        assert np.isfinite(p.states).all()

    def test_bad_step(self):
        f = fields.IdentityField(dim=1)
        with pytest.raises(ValueError):
            sampling.simulate_em(f, sampling.dirac([0.0]), 1.0, 0.3,
                                 seed=0, path_id=0)


class TestLattice:
    def test_states_on_lattice(self):
        f = fields.IdentityField(dim=1)
        law = sampling.dirac([0.3])
        p = sampling.simulate_lattice(f, law, 1.0, 2.0 ** -12, seed=4,
                                      path_id=0, h=0.125)
        k = (p.states[:, 0] - 0.3) / 0.125
        np.testing.assert_allclose(k, np.round(k), atol=1e-9)
        assert p.states.shape[0] == 2 ** 12 + 1

    def test_nondiagonal_rejected(self):
        f = fields.ExplicitField(
            fn=lambda pts: np.broadcast_to(np.array([[1.0, 0.2], [0.2, 1.0]]),
                                           (pts.shape[0], 2, 2)),
            dim=2, lam=2.0)
        with pytest.raises(NonDiagonalField):
            sampling.simulate_lattice(f, sampling.dirac([0.0, 0.0]), 1.0,
                                      2.0 ** -12, seed=0, path_id=0)

    def test_embedding_gate(self):
        f = fields.IdentityField(dim=1)
        with pytest.raises(ValueError):
            sampling.simulate_lattice(f, sampling.dirac([0.0]), 1.0,
                                      2.0 ** -6, seed=0, path_id=0, h=0.01)

    def test_final_marginals_match_em(self):
        # same generator, two schemes: two-sample KS at the 1% level
        f = fields.IdentityField(dim=1)
        law = sampling.dirac([0.0])
        n = 10 ** 4
        T = 2 ** 14
        em = np.empty(n)
        lat = np.empty(n)
        for lo in range(0, n, 2000):
            ids = list(range(lo, lo + 2000))
            em[lo:lo + 2000] = sampling._em_batch_states(
                f, law, 1.0, 2.0 ** -14, 99, ids, stride=T)[:, -1, 0]
            lat[lo:lo + 2000] = sampling._lattice_batch_states(
                f, law, 1.0, 2.0 ** -14, 99, ids, stride=T, h=0.05)[:, -1, 0]
        assert stats.ks_2samp(em, lat).pvalue > 0.01
        assert lat.var() == pytest.approx(2.0, rel=0.1)


class TestRestrict:
    def test_exact_subgrid(self):
        f = fields.IdentityField(dim=1)
        p = sampling.simulate_em(f, sampling.dirac([0.0]), 1.0, 2.0 ** -8,
                                 seed=9, path_id=0)
        g = sampling.dyadic_grid(1.0, 4)
        r = sampling.restrict_to_dyadic(p, g)
        np.testing.assert_array_equal(r, p.states[::16])

    def test_grid_finer_than_path(self):
        f = fields.IdentityField(dim=1)
        p = sampling.simulate_em(f, sampling.dirac([0.0]), 1.0, 2.0 ** -8,
                                 seed=9, path_id=0)
        with pytest.raises(GridFinerThanPath):
            sampling.restrict_to_dyadic(p, sampling.dyadic_grid(1.0, 8))
        # exactly two fine steps per dyadic step is allowed
        r = sampling.restrict_to_dyadic(p, sampling.dyadic_grid(1.0, 7))
        assert r.shape == (129, 1)

    def test_horizon_mismatch(self):
        f = fields.IdentityField(dim=1)
        p = sampling.simulate_em(f, sampling.dirac([0.0]), 1.0, 2.0 ** -8,
                                 seed=9, path_id=0)
        with pytest.raises(ValueError):
            sampling.restrict_to_dyadic(p, sampling.dyadic_grid(2.0, 4))
