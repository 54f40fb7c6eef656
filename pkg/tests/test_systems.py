import numpy as np
import pytest

from vindy.numerics import TimeGrid
from vindy.systems import (GaussianIC, NoiseConfig, apply_measurement_noise, beam_mode, duffing_rhs,
                           duffing_system, embed_linear, generate_dataset, laplacian_periodic, rd_ic,
                           rd_initial_condition, rd_rhs, reaction_diffusion_system, rossler_rhs, rossler_system,
                           sample_model_parameters, snr_db)


class TestRossler:
    @pytest.mark.parametrize("z, expected", [
        ([0, 0, 0], [0, 0, 0.2]),
        ([1, 1, 1], [-2, 1.2, -4.5]),
        ([0, 1, 0], [-1, 0.2, 0.2]),
    ])
    def test_values(self, z, expected):
        np.testing.assert_allclose(rossler_rhs(np.array(z, float)), expected, atol=1e-14)


class TestDuffing:
    base = {"omega0": 1.0, "xi": 0.0, "gamma": 0.0, "forcing_gain": 1.0, "F": 0.0, "omega": 1.0}

    def test_equilibrium(self):
        np.testing.assert_array_equal(duffing_rhs(np.zeros(2), self.base, 3.3), [0, 0])

    def test_linear_spring(self):
        p = dict(self.base, omega0=2.0)
        np.testing.assert_allclose(duffing_rhs(np.array([1.0, 0.0]), p, 0.0), [0, -4])

    def test_hand_value(self):
        p = dict(self.base, xi=0.5, gamma=1.0)
        np.testing.assert_allclose(duffing_rhs(np.array([1.0, 1.0]), p, 0.0), [1, -3])

    def test_forcing(self):
        p = dict(self.base, omega0=0.0, F=0.5, omega=2.0)
        np.testing.assert_allclose(duffing_rhs(np.zeros(2), p, 0.3), [0, -0.5 * np.cos(0.6)])

    def test_beam_observation(self):
        sys_ = duffing_system(n_dofs=5)
        phi = beam_mode(5)
        assert phi.max() == pytest.approx(1.0)
        S = np.array([[2.0, 0.1], [-1.0, 0.0]])
        np.testing.assert_allclose(sys_.observed(S), S[:, :1] * phi)


class TestReactionDiffusion:
    def test_trivial_equilibrium(self):
        Z = np.zeros((8, 8))
        dU, dV = rd_rhs(Z, Z, {"mu": 1.0, "d1": 0.1, "d2": 0.1}, 0.4)
        assert not dU.any() and not dV.any()

    def test_uniform_state(self):
        U, V = np.ones((6, 6)), np.zeros((6, 6))
        dU, dV = rd_rhs(U, V, {"mu": 1.0, "d1": 0.1, "d2": 0.1}, 0.4)
        np.testing.assert_allclose(dU, 0.0, atol=1e-14)
        np.testing.assert_allclose(dV, -1.0, atol=1e-14)

    def test_laplacian_fourier_mode(self):
        n, L = 64, 10.0
        h = 2 * L / n
        x = np.arange(n) * h
        k = 2 * np.pi * 3 / (2 * L)
        U = np.sin(k * x)[None, :] * np.ones((n, 1))
        lap = laplacian_periodic(U, h)
        # discrete eigenvalue of the 3-point stencil, and its O(h^2) distance to -k^2
        disc = -(4 / h ** 2) * np.sin(k * h / 2) ** 2
        np.testing.assert_allclose(lap, disc * U, atol=1e-10)
        assert abs(disc + k * k) / (k * k) < (k * h) ** 2 / 12 * 1.01

    def test_laplacian_sums_to_zero(self):
        U = np.random.default_rng(0).normal(size=(20, 20))
        assert abs(laplacian_periodic(U, 0.4).sum()) < 1e-10

    def test_nonsquare_rejected(self):
        with pytest.raises(ValueError):
            rd_rhs(np.zeros((4, 5)), np.zeros((4, 5)), {}, 0.4)

    def test_initial_condition_range_and_origin(self):
        for beta in (0.7, 0.9, 1.1):
            U, V = rd_initial_condition(beta)
            assert np.all(np.abs(U) < 1)
            np.testing.assert_array_equal(U, V)
            # the grid contains the origin at index n/2
            assert U[25, 25] == 0.0

    def test_spiral_crossings_grow_with_beta(self):
        # radial sign changes along a ray: the spiral winds tighter for larger beta
        def crossings(beta):
            r = np.linspace(0.0, 10.0, 4001)
            u = np.tanh(beta * r * np.cos(0.3 - beta * r))
            return int(np.sum(np.diff(np.sign(u[1:])) != 0))
        counts = [crossings(b) for b in np.linspace(0.7, 1.1, 5)]
        assert all(a <= b for a, b in zip(counts, counts[1:]))
        assert counts[-1] > counts[0]


class TestNoise:
    def test_zero_level_identity(self):
        X = np.random.default_rng(1).normal(size=(5, 3))
        np.testing.assert_array_equal(apply_measurement_noise(X, 0.0, 0), X)

    def test_lognormal_mean(self):
        n = 10 ** 6
        eps = apply_measurement_noise(np.ones(n), 0.05, 3)
        se = eps.std() / np.sqrt(n)
        assert abs(eps.mean() - np.exp(0.05 ** 2 / 2)) < 3 * se

    def test_sign_preserved(self):
        X = np.random.default_rng(2).normal(size=(100, 4))
        Y = apply_measurement_noise(X, 0.5, 4)
        np.testing.assert_array_equal(np.sign(X), np.sign(Y))

    def test_rossler_snr(self):
        d, clean = generate_dataset(rossler_system(), GaussianIC([-5, -5, 0], 2.25), TimeGrid(0, 24, 2000),
                                    NoiseConfig(0.05, 0, 0, 0), 5, return_clean=True)
        # 20 log10(1/0.05) = 26 dB up to the log-normal mean shift
        assert d.meta["snr_db"]["state"] == pytest.approx(26.0, abs=0.5)

    def test_model_parameters(self):
        assert np.array_equal(sample_model_parameters([0.2, 0.2, 5.7], 0.0, 0), [0.2, 0.2, 5.7])
        rng = np.random.default_rng(5)
        draws = np.array([sample_model_parameters([0.2, 0.2, 5.7], 0.1, rng) for _ in range(10 ** 5)])
        assert draws[:, 2].std() == pytest.approx(0.57, rel=0.02)
        se = draws.std(axis=0) / np.sqrt(len(draws))
        assert np.all(np.abs(draws.mean(axis=0) - [0.2, 0.2, 5.7]) < 3 * se)

    def test_snr_inf_for_identical(self):
        X = np.ones((3, 3))
        assert snr_db(X, X) == np.inf


class TestGenerateDataset:
    def test_rossler_shapes_and_consistency(self):
        grid = TimeGrid(0, 24, 2000)
        d = generate_dataset(rossler_system(), GaussianIC([-5, -5, 0], 2.25), grid, NoiseConfig(), 3)
        assert d.X.shape == (6000, 3)
        assert d.trajectory_index() == [0, 1, 2]
        tr = d.trajectory(1)
        f = np.array([rossler_rhs(z) for z in tr.X])
        rel = np.linalg.norm(tr.dX[2:-2] - f[2:-2], axis=1) / np.linalg.norm(f[2:-2], axis=1)
        assert np.max(rel) < 1e-4

    def test_empty(self):
        d = generate_dataset(rossler_system(), GaussianIC([-5, -5, 0], 2.25), TimeGrid(0, 1, 10), NoiseConfig(), 0)
        assert d.n_samples == 0 and d.X.shape == (0, 3)
        assert d.meta["n_trajectories"] == 0

    def test_deterministic(self):
        args = (rossler_system(), GaussianIC([-5, -5, 0], 2.25), TimeGrid(0, 5, 200), NoiseConfig(0.05, 0.1, 0, 7), 2)
        a, b = generate_dataset(*args), generate_dataset(*args)
        np.testing.assert_array_equal(a.X, b.X)
        assert a.meta == b.meta

    def test_dt_refinement_fourth_order(self):
        ic = GaussianIC([-5, -5, 0], 2.25)
        ends = []
        for n in (101, 201, 401):
            d = generate_dataset(rossler_system(), ic, TimeGrid(0, 5, n), NoiseConfig(), 1)
            ends.append(d.X[-1])
        ref = generate_dataset(rossler_system(), ic, TimeGrid(0, 5, 3201), NoiseConfig(), 1).X[-1]
        e = [np.linalg.norm(x - ref) for x in ends]
        assert e[0] / e[1] > 12 and e[1] / e[2] > 12

    def test_duffing_second_order(self):
        betas = np.array([[1.1, 0.5], [0.9, 1.0]])
        d = generate_dataset(duffing_system(), GaussianIC([0, 0], 1.0), TimeGrid.from_dt(0, 0.05, 300),
                             NoiseConfig(additive_snr_db=38.0), 2, betas)
        assert d.second_order and d.ddX.shape == d.X.shape
        assert d.meta["snr_db"]["state"] == pytest.approx(38.0, abs=1.0)
        assert d.meta["snr_db"]["acceleration"] < d.meta["snr_db"]["state"]

    def test_reaction_diffusion_small(self):
        sys_ = reaction_diffusion_system(n_points=12)
        d = generate_dataset(sys_, rd_ic(n_points=12), TimeGrid.from_dt(0, 0.05, 20), NoiseConfig(), 1,
                             np.array([[0.9]]))
        assert d.X.shape == (20, 144)


class TestEmbedLinear:
    def test_identity_lift(self):
        Z = np.random.default_rng(0).normal(size=(10, 3))
        X, G = embed_linear(Z, 3, lift=np.eye(3))
        np.testing.assert_array_equal(X, Z)

    def test_orthonormal_and_recovery(self):
        Z = np.random.default_rng(0).normal(size=(50, 2))
        X, G = embed_linear(Z, 16, seed=3)
        np.testing.assert_allclose(G.T @ G, np.eye(2), atol=1e-12)
        np.testing.assert_allclose(X @ G, Z, atol=1e-10)

    def test_too_small(self):
        with pytest.raises(ValueError):
            embed_linear(np.zeros((3, 4)), 2)
