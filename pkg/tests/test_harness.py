"""Experiment harness tests: PE spectra, diagnostics, run orchestration."""

import numpy as np
import pytest

from sdmrac import harness
from sdmrac.harness import (DiagnosticsReport, ExperimentConfig,
                            compare_runs, ideal_weight_diagnostics,
                            pe_spectrum, run_experiment)


class TestPESpectrum:
    def test_constant_feature_gram_is_window_length(self):
        t = np.arange(0, 4.0 + 1e-12, 0.01)
        phi = np.ones((t.shape[0], 1))
        reports = pe_spectrum(t, phi, window=2.0, stride=1.0)
        assert [r.start for r in reports] == [0.0, 1.0, 2.0]
        for r in reports:
            assert r.gram.shape == (1, 1)
            assert r.gram[0, 0] == pytest.approx(2.0, rel=1e-12)
            assert r.lambda_min == pytest.approx(2.0, rel=1e-12)

    def test_alternating_basis_gram_is_half_identity(self):
        # phi alternates between e1 and e2, so each direction is excited
        # for half the window
        t = np.arange(0, 2.0 + 1e-12, 0.001)
        phi = np.zeros((t.shape[0], 2))
        phi[::2, 0] = 1.0
        phi[1::2, 1] = 1.0
        (r,) = pe_spectrum(t, phi, window=2.0, stride=2.0)
        assert np.allclose(r.gram, np.eye(2), atol=0.01)
        assert r.lambda_min > 0.9

    def test_zero_features_zero_gram(self):
        t = np.arange(0, 1.0 + 1e-12, 0.01)
        reports = pe_spectrum(t, np.zeros((t.shape[0], 3)), 0.5, 0.25)
        for r in reports:
            assert np.all(r.gram == 0) and r.lambda_min == 0.0

    def test_window_longer_than_log_rejected(self):
        t = np.arange(0, 1.0, 0.01)
        with pytest.raises(ValueError, match="window"):
            pe_spectrum(t, np.ones((t.shape[0], 1)), 5.0, 0.5)

    def test_too_short_log_rejected(self):
        with pytest.raises(ValueError):
            pe_spectrum(np.array([0.0]), np.ones((1, 1)), 0.5, 0.5)

    def test_gram_positive_semidefinite(self):
        rng = np.random.default_rng(7)
        t = np.arange(0, 3.0 + 1e-12, 0.01)
        phi = rng.standard_normal((t.shape[0], 4))
        for r in pe_spectrum(t, phi, 1.0, 0.5):
            assert np.allclose(r.gram, r.gram.T)
            assert np.linalg.eigvalsh(r.gram)[0] >= -1e-12


class TestIdealWeightDiagnostics:
    def test_recovers_linear_map(self):
        rng = np.random.default_rng(0)
        phi = rng.standard_normal((200, 3))
        W_true = np.array([[0.5], [-1.2], [0.3]])
        epochs, _ = ideal_weight_diagnostics(phi, phi @ W_true)
        assert len(epochs) == 1
        assert np.allclose(epochs[0]["W_star"], W_true, atol=1e-10)
        assert epochs[0]["residual_rms"] < 1e-10
        assert not epochs[0]["rank_deficient"]

    def test_zero_uncertainty_gives_zero_weights(self):
        rng = np.random.default_rng(1)
        phi = rng.standard_normal((50, 3))
        epochs, _ = ideal_weight_diagnostics(phi, np.zeros((50, 1)))
        assert np.allclose(epochs[0]["W_star"], 0.0, atol=1e-12)

    def test_rank_deficiency_flagged(self):
        phi = np.ones((50, 3))  # rank-1 feature matrix
        epochs, _ = ideal_weight_diagnostics(phi, np.ones((50, 1)))
        assert epochs[0]["rank_deficient"]

    def test_epoch_split_and_wtilde(self):
        rng = np.random.default_rng(2)
        phi = rng.standard_normal((100, 2))
        W0 = np.array([[1.0], [0.0]])
        W1 = np.array([[0.0], [2.0]])
        sigma = np.repeat([0, 1], 50)
        delta = np.where(sigma[:, None] == 0, phi @ W0, phi @ W1)
        W_series = np.repeat(W0[None], 100, axis=0)
        epochs, wtilde = ideal_weight_diagnostics(phi, delta, W_series, sigma)
        assert [e["sigma"] for e in epochs] == [0, 1]
        assert np.allclose(epochs[0]["W_star"], W0, atol=1e-10)
        assert np.allclose(epochs[1]["W_star"], W1, atol=1e-10)
        assert np.allclose(wtilde[:50], 0.0, atol=1e-10)
        assert np.allclose(wtilde[50:], np.linalg.norm(W0 - W1), atol=1e-10)


class TestExperimentConfig:
    def test_ini_round_trip(self, tmp_path):
        cfg = ExperimentConfig(mode="dmrac", seed=3, horizon=12.5,
                               hidden=(7, 9), ref_levels_deg=(2.0, -3.0),
                               pipelined=True, warm_start_weights=True,
                               learning_rate=0.0025)
        path = tmp_path / "config.ini"
        cfg.to_ini(path)
        assert ExperimentConfig.from_ini(path) == cfg

    def test_overrides_win(self, tmp_path):
        path = tmp_path / "config.ini"
        ExperimentConfig(seed=3).to_ini(path)
        cfg = ExperimentConfig.from_ini(path, overrides={"seed": "11"})
        assert cfg.seed == 11

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            ExperimentConfig.from_ini(tmp_path / "nope.ini")

    def test_validation(self):
        with pytest.raises(ValueError, match="mode"):
            ExperimentConfig(mode="magic")
        with pytest.raises(ValueError, match="units"):
            ExperimentConfig(units="furlong")
        with pytest.raises(ValueError, match="horizon"):
            ExperimentConfig(horizon=0.0)

    def test_replaced_copies(self):
        a = ExperimentConfig()
        b = a.replaced(seed=5, gamma=25.0)
        assert (b.seed, b.gamma) == (5, 25.0)
        assert a.seed == 0 and a.gamma == 10.0

    def test_degree_units_skip_conversion(self):
        cfg = ExperimentConfig(units="deg")
        assert np.array_equal(cfg.x0(), [1.0, 1.0])
        cfg_rad = ExperimentConfig()
        assert np.allclose(cfg_rad.x0(), np.deg2rad([1.0, 1.0]))


@pytest.fixture(scope="module")
def short_pair():
    cfg = ExperimentConfig(horizon=3.0)
    return run_experiment(cfg), run_experiment(cfg)


class TestRunExperiment:
    def test_deterministic_repeat(self, short_pair):
        (log_a, rep_a), (log_b, rep_b) = short_pair
        assert np.array_equal(log_a.x, log_b.x)
        assert np.array_equal(log_a.u, log_b.u)
        assert np.array_equal(log_a.extra["W"], log_b.extra["W"])
        assert rep_a.to_json() == rep_b.to_json()

    def test_retrain_happened(self, short_pair):
        (_, rep), _ = short_pair
        assert rep.sigma_final >= 1
        assert len(rep.retrain_times) == rep.sigma_final

    def test_switching_discipline(self, short_pair):
        (log, _), _ = short_pair
        sigma = log.extra["sigma"][:, 0]
        steps = np.diff(sigma)
        assert np.all(steps >= 0) and np.all(steps <= 1)

    def test_fast_weights_respect_bound(self, short_pair):
        (log, rep), _ = short_pair
        cfg = ExperimentConfig()
        w_norms = np.linalg.norm(log.extra["W"], axis=1)
        assert w_norms.max() <= cfg.w_bound + 1e-9
        assert rep.w_norm_max <= cfg.w_bound + 1e-9

    def test_pipelined_run_completes(self):
        cfg = ExperimentConfig(horizon=3.0, pipelined=True)
        log, rep = run_experiment(cfg)
        assert rep.sigma_final >= 1
        assert np.all(np.isfinite(log.x))
        w_norms = np.linalg.norm(log.extra["W"], axis=1)
        assert w_norms.max() <= cfg.w_bound + 1e-9

    def test_baseline_tracks_unperturbed_plant(self):
        # with the matched uncertainty switched off, the baseline gains make
        # the plant reproduce the reference model up to the zero-order-hold
        # discretization of the control input
        cfg = ExperimentConfig(mode="baseline_only", horizon=5.0,
                               uncertainty_scale=0.0)
        log, rep = run_experiment(cfg)
        assert np.max(np.linalg.norm(log.e, axis=1)) < 2e-5
        assert np.all(log.u_ad == 0.0)

    def test_zero_mean_error_under_no_uncertainty(self):
        # stochastic feature noise must not bias the tracking error once
        # the transient has passed; batch-means SE handles autocorrelation
        cfg = ExperimentConfig(horizon=20.0, uncertainty_scale=0.0)
        log, _ = run_experiment(cfg)
        e1 = log.e[log.t >= 2.0, 0]
        blocks = np.array_split(e1, 10)
        means = np.array([b.mean() for b in blocks])
        se = means.std(ddof=1) / np.sqrt(len(means))
        assert abs(means.mean()) < 3.0 * se


class TestCompareAndReport:
    def test_identical_configs_zero_deltas(self):
        cfg = ExperimentConfig(horizon=2.5)
        (_, rep_a), (_, rep_b), deltas = compare_runs(cfg, cfg.replaced())
        assert deltas["rms_error"] == 0.0
        assert deltas["w_tv"] == 0.0
        assert deltas["pe_lambda_min_median"] == 0.0
        assert rep_a.mode == rep_b.mode == "sdmrac"

    def test_mismatched_shared_field_rejected(self):
        cfg = ExperimentConfig(horizon=2.5)
        with pytest.raises(ValueError, match="shared"):
            compare_runs(cfg, cfg.replaced(gamma=20.0))

    def test_diagnostics_json_round_trip(self, tmp_path):
        cfg = ExperimentConfig(horizon=2.0)
        _, rep = run_experiment(cfg)
        path = tmp_path / "diagnostics.json"
        rep.to_json(path)
        back = DiagnosticsReport.from_json(path)
        assert back == rep
