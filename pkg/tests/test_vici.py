import numpy as np
import pytest

from vindy.coefficients import VindyModel, init_vindy
from vindy.library import build_polynomial
from vindy.neural import Network
from vindy.numerics import NumericFailure, TimeGrid, integrate
from vindy.systems import rossler_rhs
from vindy.training import TrainedModel, TrainingConfig
from vindy.veni import Decoder, Encoder, standard_prior
from vindy.vici import (EnsembleForecast, InsufficientEnsemble, credibility_bands, evaluate, forecast,
                        relative_error)

ROSSLER_DT = 24 / 1999


def rossler_model(log_scale=-80.0):
    lib = build_polynomial(3, degree=2)
    Xi = np.zeros((3, lib.r))
    for i, row in enumerate(({"z2": -1, "z3": -1}, {"z1": 1, "z2": 0.2}, {"1": 0.2, "z3": -5.7, "z1*z3": 1})):
        for name, v in row.items():
            Xi[i, lib.names.index(name)] = v
    vm = VindyModel(lib, 3, Xi, np.full(Xi.shape, log_scale), 0.0, 1.0, np.ones(Xi.shape, bool))
    return TrainedModel(TrainingConfig(), vm, meta={"dt": ROSSLER_DT})


def linear_latent_model(logvar=np.log(0.3 ** 2)):
    """Identity encoder mean with fixed log-variance, identity decoder, zero dynamics."""
    n = 2
    enc = Encoder(Network([n, 2 * n], "elu", [np.vstack([np.eye(n), np.zeros((n, n))])],
                          [np.concatenate([np.zeros(n), np.full(n, logvar)])]), n, standard_prior(n))
    dec = Decoder(Network([n, n], "elu", [np.eye(n)], [np.zeros(n)]))
    lib = build_polynomial(n, degree=1, include_bias=False)
    vm = VindyModel(lib, n, np.zeros((n, n)), np.full((n, n), -80.0), 0.0, 1.0, np.ones((n, n), bool))
    return TrainedModel(TrainingConfig(latent_dim=n), vm, enc, dec, meta={"dt": 0.1})


def synthetic_forecast(members):
    members = np.asarray(members, dtype=float)
    return EnsembleForecast(np.arange(members.shape[1], dtype=float), members, members, members.mean(0),
                            members.std(0))


class TestForecast:
    def test_zero_scale_single_member_is_deterministic_run(self):
        model = rossler_model()
        grid = TimeGrid.from_dt(0.0, ROSSLER_DT, 300)
        x0 = np.array([-4.0, -6.0, 0.5])
        fc = forecast(model, x0, None, grid, m=1, seed=0)
        ref = integrate(lambda t, z: rossler_rhs(z), x0, grid).states
        np.testing.assert_allclose(fc.mean, ref, atol=1e-10)
        assert not fc.std.any()

    def test_truth_tight_scales_accurate(self):
        model = rossler_model(log_scale=np.log(1e-6))
        grid = TimeGrid.from_dt(0.0, ROSSLER_DT, 1000)
        x0 = np.array([-5.0, -5.0, 0.0])
        ref = integrate(lambda t, z: rossler_rhs(z), x0, grid).states
        fc = forecast(model, x0, None, grid, m=20, seed=1)
        metrics = evaluate(fc, ref)
        assert metrics["mean_relative_error"] < 0.01

    def test_deterministic(self):
        model = rossler_model(log_scale=np.log(0.01))
        grid = TimeGrid.from_dt(0.0, ROSSLER_DT, 200)
        a = forecast(model, np.array([-5.0, -5.0, 0.0]), None, grid, m=10, seed=3)
        b = forecast(model, np.array([-5.0, -5.0, 0.0]), None, grid, m=10, seed=3)
        assert a.member_full.tobytes() == b.member_full.tobytes()

    def test_latent_spread_matches_encoder_scale(self):
        model = linear_latent_model()
        fc = forecast(model, np.array([1.0, -2.0]), None, TimeGrid(0.0, 0.1, 2), m=10_000, seed=0)
        np.testing.assert_allclose(fc.member_latent[:, 0].std(axis=0), 0.3, rtol=0.02)
        np.testing.assert_allclose(fc.member_latent[:, 0].mean(axis=0), [1.0, -2.0], atol=0.02)

    def test_linear_decoder_commutes_with_mean(self):
        model = linear_latent_model()
        model.decoder.net.weights[0] = np.array([[2.0, 1.0], [0.0, -3.0]])
        fc = forecast(model, np.array([0.5, 0.5]), None, TimeGrid(0.0, 0.5, 6), m=50, seed=2)
        lat_mean = fc.member_latent.mean(axis=0)
        np.testing.assert_allclose(fc.mean, lat_mean @ model.decoder.net.weights[0].T, atol=1e-12)

    def test_refinement(self):
        model = rossler_model(log_scale=np.log(0.02))
        grid = TimeGrid.from_dt(0.0, ROSSLER_DT, 150)
        x0 = np.array([-5.0, -5.0, 0.0])
        ref = forecast(model, x0, None, grid, m=1600, seed=9).mean
        d = [np.sqrt(np.mean((forecast(model, x0, None, grid, m=m, seed=9).mean - ref) ** 2)) for m in (25, 100)]
        assert d[1] <= d[0]

    def test_failed_members_excluded(self):
        lib = build_polynomial(1, degree=2, include_bias=False)
        vm = VindyModel(lib, 1, np.array([[0.0, 0.0]]), np.array([[-80.0, np.log(0.3)]]), 0.0, 1.0,
                        np.ones((1, 2), bool))
        model = TrainedModel(TrainingConfig(), vm, meta={"dt": 0.05})
        grid = TimeGrid.from_dt(0.0, 0.05, 200)
        fc = forecast(model, np.array([1.0]), None, grid, m=40, seed=0)
        assert 0 < len(fc.failed) < 40
        assert fc.m == 40 - len(fc.failed)
        assert np.all(np.isfinite(fc.member_full))
        assert fc.meta["n_failed"] == len(fc.failed)

    def test_all_failed(self):
        lib = build_polynomial(1, degree=2, include_bias=False)
        vm = VindyModel(lib, 1, np.array([[0.0, 5.0]]), np.full((1, 2), -80.0), 0.0, 1.0, np.ones((1, 2), bool))
        model = TrainedModel(TrainingConfig(), vm, meta={"dt": 0.05})
        with pytest.raises(NumericFailure):
            forecast(model, np.array([1.0]), None, TimeGrid.from_dt(0.0, 0.05, 100), m=3)

    def test_dt_warning(self):
        model = rossler_model()
        with pytest.warns(UserWarning, match="differs"):
            forecast(model, np.array([-5.0, -5.0, 0.0]), None, TimeGrid.from_dt(0.0, ROSSLER_DT / 4, 20), m=1)

    def test_second_order_needs_velocity(self):
        lib = build_polynomial(2, degree=1)
        vm = init_vindy(lib, 1, seed=0, second_order=True)
        model = TrainedModel(TrainingConfig(second_order=True), vm)
        with pytest.raises(ValueError):
            forecast(model, np.array([1.0]), None, TimeGrid(0, 1, 10), m=1)


class TestBands:
    def test_identical_members(self):
        fc = synthetic_forecast(np.ones((5, 4, 2)))
        for lo, hi in credibility_bands(fc).values():
            np.testing.assert_array_equal(lo, hi)

    def test_nesting(self):
        fc = synthetic_forecast(np.random.default_rng(0).normal(size=(200, 10, 3)))
        b = credibility_bands(fc, (0.5, 0.9))
        assert np.all(b["q0.9"][0] <= b["q0.5"][0]) and np.all(b["q0.5"][1] <= b["q0.9"][1])

    def test_one_std_width(self):
        sigma = 1.7
        fc = synthetic_forecast(np.random.default_rng(1).normal(0, sigma, size=(10_000, 3, 2)))
        lo, hi = credibility_bands(fc)["std1"]
        np.testing.assert_allclose(hi - lo, 2 * sigma, rtol=0.05)

    def test_needs_two_members(self):
        with pytest.raises(InsufficientEnsemble):
            credibility_bands(synthetic_forecast(np.ones((1, 3, 2))))

    def test_bad_level(self):
        with pytest.raises(ValueError):
            credibility_bands(synthetic_forecast(np.ones((3, 3, 2))), (1.5,))


class TestMetrics:
    def test_identical(self):
        members = np.random.default_rng(2).normal(size=(20, 6, 2))
        fc = synthetic_forecast(members)
        m = evaluate(fc, fc.mean)
        assert m["mean_relative_error"] == 0.0
        assert m["coverage"]["std2"] == 1.0

    def test_constant_offset(self):
        ref = np.tile([3.0, 4.0], (10, 1))
        err, curve = relative_error(ref * 1.25, ref)
        assert err == pytest.approx(0.25)
        np.testing.assert_allclose(curve, 0.25)

    def test_grid_mismatch(self):
        fc = synthetic_forecast(np.ones((3, 4, 2)))
        with pytest.raises(ValueError):
            evaluate(fc, np.ones((4, 2)), ref_times=np.arange(5.0))
        with pytest.raises(ValueError):
            evaluate(fc, np.ones((5, 2)))
