import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pdemix.pde import (DEFAULT_ATOL, DEFAULT_RTOL, NonFinite, PdeParams,
                        ReactionKind, StepFailure, integrate,
                        integrate_with_sensitivities, laplacian_neumann,
                        reaction_deriv, reaction_term, rhs)

ALL_KINDS = list(ReactionKind)


def ghost_padded_laplacian(u):
    """Brute-force oracle: build the ghost-padded array explicitly."""
    h, w = u.shape
    g = np.zeros((h + 2, w + 2))
    for i in range(h):
        for j in range(w):
            g[i + 1, j + 1] = u[i, j]
    for j in range(w):  # reflected ghosts: out-of-domain neighbor = interior value
        g[0, j + 1] = u[0, j]
        g[h + 1, j + 1] = u[h - 1, j]
    for i in range(h):
        g[i + 1, 0] = u[i, 0]
        g[i + 1, w + 1] = u[i, w - 1]
    out = np.zeros_like(u)
    for i in range(h):
        for j in range(w):
            out[i, j] = (g[i, j + 1] + g[i + 2, j + 1] + g[i + 1, j]
                         + g[i + 1, j + 2] - 4 * g[i + 1, j + 1])
    return out


class TestLaplacian:
    def test_constant_field_is_zero(self):
        assert np.array_equal(laplacian_neumann(np.full((5, 7), 3.2)),
                              np.zeros((5, 7)))

    def test_center_spike_3x3(self):
        u = np.zeros((3, 3))
        u[1, 1] = 1.0
        expected = np.array([[0.0, 1.0, 0.0],
                             [1.0, -4.0, 1.0],
                             [0.0, 1.0, 0.0]])
        np.testing.assert_array_equal(laplacian_neumann(u), expected)
        np.testing.assert_array_equal(ghost_padded_laplacian(u), expected)

    def test_linear_ramp_against_oracle(self):
        u = np.tile(np.arange(6.0)[:, None], (1, 5))
        got = laplacian_neumann(u)
        np.testing.assert_allclose(got, ghost_padded_laplacian(u), atol=1e-14)
        # interior rows are flat, boundary rows feel the reflected ghost
        assert np.all(got[1:-1] == 0)
        assert np.all(got[0] == 1) and np.all(got[-1] == -1)

    def test_rejects_small_grids(self):
        with pytest.raises(ValueError):
            laplacian_neumann(np.zeros((2, 5)))
        with pytest.raises(ValueError):
            laplacian_neumann(np.zeros((4, 2)))

    def test_rejects_non_finite(self):
        u = np.zeros((4, 4))
        u[0, 0] = np.nan
        with pytest.raises(ValueError):
            laplacian_neumann(u)

    @given(st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_zero_sum_action(self, seed):
        u = np.random.default_rng(seed).normal(size=(7, 9))
        total = laplacian_neumann(u).sum()
        assert abs(total) <= 1e-10 * max(1.0, np.abs(u).sum())

    @given(st.integers(0, 2 ** 32 - 1), st.floats(-5, 5), st.floats(-5, 5))
    @settings(max_examples=30, deadline=None)
    def test_linearity(self, seed, a, b):
        rng = np.random.default_rng(seed)
        u, v = rng.normal(size=(2, 6, 6))
        lhs = laplacian_neumann(a * u + b * v)
        rhs_ = a * laplacian_neumann(u) + b * laplacian_neumann(v)
        np.testing.assert_allclose(lhs, rhs_, atol=1e-12)


class TestReactionTerm:
    def test_zero_is_fixed_point(self):
        u = np.zeros((4, 4))
        for kind in ALL_KINDS:
            assert np.array_equal(reaction_term(kind, u, 0.1), u)

    def test_direct_values_at_half(self):
        u = np.full((3, 3), 0.5)
        np.testing.assert_allclose(
            reaction_term(ReactionKind.LOGISTIC0, u, 0.1), 0.1 * 0.5 * 0.5)
        # the two asymmetric variants coincide at u = 0.5
        np.testing.assert_allclose(
            reaction_term(ReactionKind.LOGISTIC1, u, 0.1), 0.0125)
        np.testing.assert_allclose(
            reaction_term(ReactionKind.LOGISTIC2, u, 0.1), 0.0125)

    def test_none_kind_is_zero(self):
        u = np.random.default_rng(0).random((4, 4))
        assert np.array_equal(reaction_term(ReactionKind.NONE, u, 0.0),
                              np.zeros_like(u))

    def test_derivatives_match_finite_differences(self):
        u = np.linspace(0.05, 0.95, 10).reshape(2, 5)
        h = 1e-7
        for kind in ALL_KINDS:
            fd = (reaction_term(kind, u + h, 1.0)
                  - reaction_term(kind, u - h, 1.0)) / (2 * h)
            np.testing.assert_allclose(reaction_deriv(kind, u), fd, atol=1e-6)


class TestRhs:
    def test_none_constant_field_vanishes(self):
        p = PdeParams(0.3, 0.0, ReactionKind.NONE)
        np.testing.assert_array_equal(rhs(p, np.full((4, 4), 0.7)),
                                      np.zeros((4, 4)))

    def test_constant_field_reaction_only(self):
        p = PdeParams(2.0, 0.1, ReactionKind.LOGISTIC0)
        np.testing.assert_allclose(rhs(p, np.full((5, 5), 0.5)), 0.025)

    def test_composes_verified_parts(self):
        rng = np.random.default_rng(3)
        u = rng.random((6, 6))
        p = PdeParams(0.4, 0.07, ReactionKind.LOGISTIC1)
        expected = 0.4 * ghost_padded_laplacian(u) + 0.07 * u * (1 - u) ** 2
        np.testing.assert_allclose(rhs(p, u), expected, atol=1e-13)


class TestPdeParams:
    def test_invariants(self):
        with pytest.raises(ValueError):
            PdeParams(-0.1, 0.1, ReactionKind.LOGISTIC0)
        with pytest.raises(ValueError):
            PdeParams(0.1, -0.1, ReactionKind.LOGISTIC0)
        with pytest.raises(ValueError):
            PdeParams(0.1, 0.1, ReactionKind.NONE)
        with pytest.raises(ValueError):
            PdeParams(0.1, 0.0, ReactionKind.LOGISTIC0)


def logistic_closed_form(u0, z_r, t):
    e = np.exp(z_r * t)
    return u0 * e / (1.0 + u0 * (e - 1.0))


class TestIntegrate:
    def test_uniform_logistic_closed_form(self):
        u0 = np.full((8, 8), 0.2)
        p = PdeParams(0.37, 0.1, ReactionKind.LOGISTIC0)
        times = np.array([0.0, 10.0])
        traj = integrate(p, u0, times)
        expected = logistic_closed_form(0.2, 0.1, 10.0)  # ~0.4046086
        assert np.abs(traj.frames[1] - expected).max() <= 1e-5
        assert np.array_equal(traj.frames[0], u0)

    def test_mass_conservation_pure_diffusion(self):
        rng = np.random.default_rng(5)
        u0 = rng.random((32, 32))
        p = PdeParams(0.8, 0.0, ReactionKind.NONE)
        traj = integrate(p, u0, [0.0, 3.0, 12.0, 24.0])
        m0 = u0.sum()
        drift = np.abs(traj.frames.sum(axis=(1, 2)) - m0) / m0
        assert drift.max() <= 1e-8

    def test_invariant_region_against_euler_oracle(self):
        rng = np.random.default_rng(7)
        u0 = rng.random((8, 8))
        p = PdeParams(0.2, 0.09, ReactionKind.LOGISTIC0)
        times = np.array([0.0, 4.0])
        traj = integrate(p, u0, times)
        eps = 1e-6
        assert traj.frames.min() >= -eps and traj.frames.max() <= 1 + eps
        # tiny-step explicit Euler cross-check
        u = u0.copy()
        h = 1e-3
        for _ in range(4000):
            u = u + h * rhs(p, u)
        assert np.abs(u - traj.frames[1]).max() < 1e-3

    def test_matches_fixed_step_rk4(self):
        rng = np.random.default_rng(11)
        u0 = rng.random((8, 8))
        p = PdeParams(0.3, 0.08, ReactionKind.LOGISTIC2)
        t_end = 2.0
        traj = integrate(p, u0, [0.0, t_end], rtol=1e-9, atol=1e-11)
        u = u0.copy()
        h = 1e-3
        for _ in range(int(round(t_end / h))):
            k1 = rhs(p, u)
            k2 = rhs(p, u + h / 2 * k1)
            k3 = rhs(p, u + h / 2 * k2)
            k4 = rhs(p, u + h * k3)
            u = u + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        assert np.abs(u - traj.frames[1]).max() <= 1e-6

    def test_consistent_under_tolerance_refinement(self):
        rng = np.random.default_rng(13)
        u0 = rng.random((10, 10))
        p = PdeParams(0.5, 0.1, ReactionKind.LOGISTIC1)
        times = [0.0, 12.0, 24.0]
        coarse = integrate(p, u0, times, rtol=1e-6, atol=1e-8)
        fine = integrate(p, u0, times, rtol=5e-7, atol=5e-9)
        assert np.abs(coarse.frames - fine.frames).max() < 1e-6

    def test_dense_output_at_intermediate_times(self):
        u0 = np.full((8, 8), 0.3)
        p = PdeParams(0.1, 0.08, ReactionKind.LOGISTIC0)
        traj = integrate(p, u0, [0.0, 1.0, 5.5, 17.25, 24.0])
        for i, t in enumerate(traj.times):
            np.testing.assert_allclose(
                traj.frames[i], logistic_closed_form(0.3, 0.08, t), atol=1e-5)

    def test_times_validation(self):
        u0 = np.zeros((4, 4))
        p = PdeParams(0.1, 0.05, ReactionKind.LOGISTIC0)
        with pytest.raises(ValueError):
            integrate(p, u0, [0.0, 5.0, 5.0])
        with pytest.raises(ValueError):
            integrate(p, u0, [-1.0, 5.0])
        with pytest.raises(ValueError):
            integrate(p, u0, [])

    def test_times_not_starting_at_zero(self):
        u0 = np.full((6, 6), 0.25)
        p = PdeParams(0.2, 0.06, ReactionKind.LOGISTIC0)
        traj = integrate(p, u0, [6.0, 12.0])
        for i, t in enumerate([6.0, 12.0]):
            np.testing.assert_allclose(
                traj.frames[i], logistic_closed_form(0.25, 0.06, t), atol=1e-5)

    def test_blowup_raises(self):
        # u' = z_r u(1-u) with u0 < 0 diverges to -inf in finite time
        u0 = np.full((5, 5), -1.0)
        p = PdeParams(0.01, 5.0, ReactionKind.LOGISTIC0)
        with pytest.raises((StepFailure, NonFinite)):
            integrate(p, u0, [0.0, 100.0])


class TestSensitivities:
    @pytest.mark.parametrize("kind,z_r", [
        (ReactionKind.LOGISTIC0, 0.08),
        (ReactionKind.LOGISTIC1, 0.08),
        (ReactionKind.LOGISTIC2, 0.08),
        (ReactionKind.NONE, 0.0),
    ])
    def test_matches_central_finite_differences(self, kind, z_r):
        rng = np.random.default_rng(17)
        u0 = np.clip(rng.random((8, 8)), 0, 1)
        z_x = 0.25
        times = np.array([0.0, 8.0, 24.0])
        bundle = integrate_with_sensitivities(
            PdeParams(z_x, z_r, kind), u0, times, rtol=1e-10, atol=1e-12)

        tight = dict(rtol=1e-11, atol=1e-13)
        h = 1e-4 * z_x
        hi = integrate(PdeParams(z_x + h, z_r, kind), u0, times, **tight)
        lo = integrate(PdeParams(z_x - h, z_r, kind), u0, times, **tight)
        fd_x = (hi.frames - lo.frames) / (2 * h)
        denom = max(np.abs(fd_x).max(), 1e-12)
        assert np.abs(bundle.d_dzx - fd_x).max() / denom <= 1e-4

        if kind is ReactionKind.NONE:
            assert np.array_equal(bundle.d_dzr, np.zeros_like(bundle.d_dzr))
        else:
            h = 1e-4 * z_r
            hi = integrate(PdeParams(z_x, z_r + h, kind), u0, times, **tight)
            lo = integrate(PdeParams(z_x, z_r - h, kind), u0, times, **tight)
            fd_r = (hi.frames - lo.frames) / (2 * h)
            denom = max(np.abs(fd_r).max(), 1e-12)
            assert np.abs(bundle.d_dzr - fd_r).max() / denom <= 1e-4

    def test_initial_sensitivities_are_zero(self):
        u0 = np.random.default_rng(1).random((6, 6))
        bundle = integrate_with_sensitivities(
            PdeParams(0.2, 0.05, ReactionKind.LOGISTIC0), u0, [0.0])
        assert np.array_equal(bundle.d_dzx, np.zeros((1, 6, 6)))
        assert np.array_equal(bundle.d_dzr, np.zeros((1, 6, 6)))
        assert np.array_equal(bundle.trajectory.frames[0], u0)

    def test_shapes_and_lengths_agree(self):
        u0 = np.random.default_rng(2).random((6, 7))
        bundle = integrate_with_sensitivities(
            PdeParams(0.2, 0.05, ReactionKind.LOGISTIC1), u0, [0.0, 5.0, 9.0])
        assert bundle.trajectory.frames.shape == (3, 6, 7)
        assert bundle.d_dzx.shape == (3, 6, 7)
        assert bundle.d_dzr.shape == (3, 6, 7)
