"""Kernel solver, Gaussian envelopes, Aronson fits, and potentials."""

import numpy as np
import pytest

from roughdiff import kernels as kn
from roughdiff import sampling
from roughdiff.errors import (
    EmptyCandidates,
    GridTooCoarse,
    InadmissibleExponent,
    InsufficientSamples,
    NonDiagonalField,
    NonPositiveTime,
    TailNotCovered,
    UnstableStep,
)
from roughdiff.fields import ExplicitField, make_field

SPEC_CANDIDATES = [1.0, 2.0, 3.0, 3.6, 4.0, 8.0]


@pytest.fixture(scope="module")
def id_kernel():
    field = make_field("identity", dim=1)
    return kn.solve_kernel_pde(field, 0.0, (-4.0, 4.0), 0.01,
                               times=[0.1, 0.25, 1.0], dt=2.5e-5)


@pytest.fixture(scope="module")
def cb_kernel():
    field = make_field("checkerboard", dim=1, lo=0.5, hi=2.0, cell=1.0)
    return kn.solve_kernel_pde(field, 0.0, (-6.0, 6.0), 0.01,
                               times=[0.25, 0.5, 1.0], dt=5e-5)


@pytest.fixture(scope="module")
def exact_tab():
    return kn.tabulate_kernel(
        lambda t, pts: kn.exact_brownian_kernel(1, t, np.zeros(1), pts),
        (-6.0, 6.0), 0.01, [0.1, 0.25, 1.0], 0.0)


@pytest.fixture(scope="module")
def potential_kernel():
    field = make_field("identity", dim=1)
    dt = 1e-4
    times = kn.log_time_grid(1e-4, 8.0, 240, dt)
    return kn.solve_kernel_pde(field, 0.0, (-8.0, 8.0), 0.02, times, dt)


@pytest.fixture(scope="module")
def closed_potential():
    return kn.resolvent_potential("closed-form", sampling.dirac(np.zeros(1)))


class TestEnvelopes:
    def test_gaussian_ref_frozen(self):
        assert kn.gaussian_ref(1.0, 1, 1.0, [0.0], [0.0]) == 1.0
        np.testing.assert_allclose(
            kn.gaussian_ref(2.0, 2, 0.5, [0.0, 0.0], [1.0, 0.0]),
            4.0 * np.exp(-1.0), rtol=1e-14)

    def test_lower_frozen(self):
        np.testing.assert_allclose(
            kn.aronson_lower(2.0, 1, 1.0, [0.0], [0.0]), 0.5, rtol=1e-14)

    def test_nonpositive_time(self):
        with pytest.raises(NonPositiveTime):
            kn.gaussian_ref(1.0, 1, 0.0, [0.0], [0.0])
        with pytest.raises(NonPositiveTime):
            kn.aronson_lower(1.0, 1, -0.5, [0.0], [0.0])
        with pytest.raises(NonPositiveTime):
            kn.exact_brownian_kernel(1, 0.0, [0.0], [0.0])

    def test_bad_M(self):
        with pytest.raises(ValueError):
            kn.gaussian_ref(0.0, 1, 1.0, [0.0], [0.0])

    def test_envelopes_sandwich_for_large_M(self):
        xs = np.linspace(-3, 3, 101)[:, None]
        for t in (0.1, 1.0):
            lo = kn.aronson_lower(4.0, 1, t, [0.0], xs)
            hi = kn.gaussian_ref(4.0, 1, t, [0.0], xs)
            mid = kn.exact_brownian_kernel(1, t, [0.0], xs)
            assert np.all(lo <= mid) and np.all(mid <= hi)

    def test_exact_kernel_frozen(self):
        np.testing.assert_allclose(
            kn.exact_brownian_kernel(1, 1.0, [0.0], [0.0]),
            (4.0 * np.pi) ** -0.5, rtol=1e-14)

    def test_exact_kernel_mass_and_variance(self):
        xs = np.linspace(-12.0, 12.0, 4801)
        for t in (0.3, 1.0):
            p = kn.exact_brownian_kernel(1, t, [0.0], xs[:, None])
            np.testing.assert_allclose(np.trapezoid(p, xs), 1.0, atol=1e-9)
            np.testing.assert_allclose(np.trapezoid(xs ** 2 * p, xs), 2.0 * t,
                                       rtol=1e-6)


class TestSolveKernelPde:
    def test_matches_exact_on_central_half(self, id_kernel):
        pts = id_kernel.points()
        mask = np.abs(pts[:, 0]) <= 2.0
        for it, t in enumerate(id_kernel.times):
            exact = kn.exact_brownian_kernel(1, t, np.zeros(1), pts)
            rel = np.abs(id_kernel.values[it].ravel()[mask] - exact[mask])
            rel /= exact[mask]
            assert rel.max() < 0.02, f"t={t}: {rel.max():.3%}"

    def test_even_kernel(self, id_kernel):
        for sl in id_kernel.values:
            assert np.abs(sl - sl[::-1]).max() < 1e-10

    def test_mass_conserved(self, id_kernel, cb_kernel):
        for k in (id_kernel, cb_kernel):
            assert k.leakage < 1e-9
            assert np.all(k.values > -1e-12)
            k.validate()

    def test_validate_flags_lossy_kernel(self, id_kernel):
        bad = kn.GridKernel(axes=id_kernel.axes, h=id_kernel.h,
                            times=id_kernel.times,
                            values=0.9 * id_kernel.values,
                            source=id_kernel.source)
        with pytest.raises(ValueError):
            bad.validate()

    def test_unstable_step(self):
        field = make_field("identity", dim=1)
        with pytest.raises(UnstableStep):
            kn.solve_kernel_pde(field, 0.0, (-4.0, 4.0), 0.01, [0.5],
                                dt=1e-3)

    def test_grid_too_coarse(self):
        field = make_field("checkerboard", dim=1, lo=0.5, hi=2.0, cell=1.0)
        with pytest.raises(GridTooCoarse):
            kn.solve_kernel_pde(field, 0.0, (-4.0, 4.0), 0.8, [0.5],
                                dt=1e-4)

    def test_non_diagonal_rejected(self):
        off = np.array([[1.0, 0.3], [0.3, 1.0]])
        field = ExplicitField(lambda x: off, dim=2, lam=2.0)
        with pytest.raises(NonDiagonalField):
            kn.solve_kernel_pde(field, [0.0, 0.0], (-2.0, 2.0), 0.1, [0.5],
                                dt=1e-3)

    def test_bad_inputs(self):
        field = make_field("identity", dim=1)
        with pytest.raises(ValueError):
            kn.solve_kernel_pde(field, 5.0, (-4.0, 4.0), 0.01, [0.5],
                                dt=2.5e-5)
        with pytest.raises(ValueError):
            kn.solve_kernel_pde(field, 0.0, (-4.0, 4.0), 0.01, [0.5, 0.2],
                                dt=2.5e-5)
        with pytest.raises(NonPositiveTime):
            kn.solve_kernel_pde(field, 0.0, (-4.0, 4.0), 0.01, [-0.5],
                                dt=2.5e-5)

    def test_times_snap_to_steps(self):
        field = make_field("identity", dim=1)
        k = kn.solve_kernel_pde(field, 0.0, (-2.0, 2.0), 0.05, [0.10001],
                                dt=5e-4)
        np.testing.assert_allclose(k.times, [0.1], rtol=1e-12)
        assert k.meta["requested_times"] == [0.10001]


class TestAronsonFit:
    def test_exact_kernel_fit_is_four(self, exact_tab):
        assert kn.fit_aronson_M(exact_tab, SPEC_CANDIDATES) == 4.0

    def test_solved_kernel_fit_is_four(self, id_kernel):
        assert kn.fit_aronson_M(id_kernel, SPEC_CANDIDATES) == 4.0

    def test_all_candidates_too_small(self, exact_tab):
        assert kn.fit_aronson_M(exact_tab, [1.0, 2.0, 3.0]) is None

    def test_empty_candidates(self, exact_tab):
        with pytest.raises(EmptyCandidates):
            kn.fit_aronson_M(exact_tab, [])

    def test_candidates_must_increase(self, exact_tab):
        with pytest.raises(ValueError):
            kn.fit_aronson_M(exact_tab, [4.0, 2.0])
        with pytest.raises(ValueError):
            kn.fit_aronson_M(exact_tab, [-1.0, 2.0])

    def test_sandwich_monotone_in_M(self, cb_kernel):
        ladder = [2.0, 4.0, 8.0, 16.0, 32.0]
        flags = [kn.sandwich_holds(cb_kernel, M) for M in ladder]
        first = flags.index(True)
        assert all(flags[first:])
        assert not any(flags[:first])

    def test_checkerboard_sandwiched_at_fitted_M(self, cb_kernel):
        M = kn.fit_aronson_M(cb_kernel, [2.0, 4.0, 8.0, 16.0, 32.0])
        assert M is not None and M <= 32.0
        assert kn.sandwich_holds(cb_kernel, M)

    def test_2d_fitted_M_nonincreasing_toward_identity(self):
        fits = []
        for lam in (4.0, 2.0, 1.0):
            field = make_field("constant-diagonal",
                               values=[lam, 1.0 / lam])
            k2 = kn.solve_kernel_pde(field, [0.0, 0.0], (-6.0, 6.0), 0.1,
                                     times=[0.1, 0.2, 0.4], dt=2.5e-3)
            fits.append(kn.fit_aronson_M(k2, [8.0, 13.0, 16.0, 24.0, 32.0]))
        assert fits == [16.0, 13.0, 13.0]
        assert fits[0] > fits[-1]


class TestGridKernelIO:
    def test_round_trip(self, tmp_path, id_kernel):
        prefix = str(tmp_path / "kern")
        id_kernel.save(prefix)
        back = kn.load_grid_kernel(prefix)
        np.testing.assert_array_equal(back.values, id_kernel.values)
        np.testing.assert_array_equal(back.times, id_kernel.times)
        np.testing.assert_array_equal(back.axes[0], id_kernel.axes[0])
        assert back.leakage == id_kernel.leakage
        with open(prefix + ".csv") as fh:
            assert fh.readline().strip() == "t,x,value"

    def test_2d_round_trip(self, tmp_path):
        field = make_field("constant-diagonal", values=[2.0, 0.5])
        k = kn.solve_kernel_pde(field, [0.0, 0.0], (-2.0, 2.0), 0.25,
                                times=[0.2], dt=1e-2)
        prefix = str(tmp_path / "kern2")
        k.save(prefix)
        back = kn.load_grid_kernel(prefix)
        np.testing.assert_array_equal(back.values, k.values)
        with open(prefix + ".csv") as fh:
            assert fh.readline().strip() == "t,x,y,value"


class TestResolventPotential:
    def test_closed_form_frozen(self, closed_potential):
        assert closed_potential(np.zeros(1)) == 0.5
        np.testing.assert_allclose(closed_potential(np.ones(1)),
                                   0.5 * np.exp(-1.0), rtol=1e-14)

    def test_closed_form_requires_1d_dirac(self):
        with pytest.raises(ValueError):
            kn.resolvent_potential("closed-form",
                                   sampling.dirac(np.zeros(2)))

    def test_grid_route_matches_closed_form(self, potential_kernel,
                                            closed_potential):
        U = kn.resolvent_potential(potential_kernel,
                                   sampling.dirac(np.zeros(1)))
        xs = np.linspace(-2.0, 2.0, 401)[:, None]
        rel = np.abs(U(xs) - closed_potential(xs)) / closed_potential(xs)
        assert rel.max() < 0.05
        np.testing.assert_allclose(U.integral(), 1.0, atol=0.02)
        assert U.params["tail_bound"] < 1e-3

    def test_grid_route_needs_long_horizon(self):
        field = make_field("identity", dim=1)
        short = kn.solve_kernel_pde(field, 0.0, (-4.0, 4.0), 0.02,
                                    kn.log_time_grid(1e-3, 4.0, 40, 1e-4),
                                    dt=1e-4)
        with pytest.raises(TailNotCovered):
            kn.resolvent_potential(short, sampling.dirac(np.zeros(1)))

    def test_grid_route_checks_start_point(self, potential_kernel):
        with pytest.raises(ValueError):
            kn.resolvent_potential(potential_kernel,
                                   sampling.dirac(np.ones(1)))

    def test_mc_route_matches_closed_form(self, closed_potential):
        field = make_field("identity", dim=1)
        U = kn.resolvent_potential("monte-carlo", sampling.dirac(np.zeros(1)),
                                   field=field, n_samples=400_000, seed=2)
        xs = np.linspace(-2.0, 2.0, 401)[:, None]
        rel = np.abs(U(xs) - closed_potential(xs)) / closed_potential(xs)
        assert rel.max() < 0.05
        np.testing.assert_allclose(U.integral(), 1.0, atol=0.02)

    def test_mc_route_deterministic(self):
        field = make_field("identity", dim=1)
        a = kn.resolvent_potential("monte-carlo", sampling.dirac(np.zeros(1)),
                                   field=field, n_samples=100_000, seed=9)
        b = kn.resolvent_potential("monte-carlo", sampling.dirac(np.zeros(1)),
                                   field=field, n_samples=100_000, seed=9)
        np.testing.assert_array_equal(a.values, b.values)

    def test_mc_route_sample_floor(self):
        field = make_field("identity", dim=1)
        with pytest.raises(InsufficientSamples):
            kn.resolvent_potential("monte-carlo",
                                   sampling.dirac(np.zeros(1)), field=field,
                                   n_samples=50_000)

    def test_mc_route_nonconstant_field(self):
        # grouped Euler endpoints; coarse step keeps this a smoke check
        field = make_field("smooth-sine", dim=1)
        U = kn.resolvent_potential("monte-carlo", sampling.dirac(np.zeros(1)),
                                   field=field, n_samples=100_000, seed=3,
                                   step=2.0 ** -4, t_cap=4.0)
        np.testing.assert_allclose(U.integral(), 1.0, atol=0.02)
        assert np.all(U.values >= 0.0)

    def test_unknown_source(self):
        with pytest.raises(ValueError):
            kn.resolvent_potential("toaster", sampling.dirac(np.zeros(1)))

    def test_potential_round_trip(self, tmp_path, potential_kernel):
        U = kn.resolvent_potential(potential_kernel,
                                   sampling.dirac(np.zeros(1)))
        prefix = str(tmp_path / "pot")
        U.save(prefix)
        back = kn.load_potential(prefix)
        np.testing.assert_array_equal(back.values, U.values)
        assert back.route == "grid"
        xs = np.array([[0.3], [-1.2]])
        np.testing.assert_allclose(back(xs), U(xs), rtol=1e-12)


class TestLqNorm:
    def test_l2_closed_form(self, closed_potential):
        res = kn.potential_Lq_norm(closed_potential, 2.0, (-10.0, 10.0),
                                   h=0.01)
        np.testing.assert_allclose(res.value, 0.25, rtol=0.02)
        assert res.tail_estimate < 1e-4
        np.testing.assert_allclose(res.total, 0.25, rtol=0.02)

    def test_q_one_inadmissible(self, closed_potential):
        with pytest.raises(InadmissibleExponent):
            kn.potential_Lq_norm(closed_potential, 1.0, (-10.0, 10.0))

    def test_d3_upper_limit_inadmissible(self):
        dummy = kn.PotentialField(route="closed-form", dim=3,
                                  fn=lambda pts: np.zeros(pts.shape[0]))
        with pytest.raises(InadmissibleExponent):
            kn.potential_Lq_norm(dummy, 3.0, (-1.0, 1.0))

    def test_admissible_range(self):
        assert kn.lq_admissible(2.0, 1)
        assert kn.lq_admissible(7.0, 2)
        assert kn.lq_admissible(1.5, 3)
        assert not kn.lq_admissible(1.0, 1)
        assert not kn.lq_admissible(3.0, 3)
        assert not kn.lq_admissible(0.5, 2)


class TestTimeGrid:
    def test_log_time_grid(self):
        dt = 1e-4
        times = kn.log_time_grid(1e-4, 8.0, 240, dt)
        assert times[0] >= dt
        assert times[-1] == pytest.approx(8.0, abs=dt)
        steps = np.round(times / dt)
        np.testing.assert_allclose(times, steps * dt, rtol=1e-12)
        assert np.all(np.diff(times) > 0)
