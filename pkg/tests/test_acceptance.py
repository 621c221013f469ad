"""Acceptance suite: nine run-level criteria printed as PASS/FAIL lines.

Each test prints one line with the measured quantities so the verdicts can
be read off a plain ``pytest`` run.  The expensive closed-loop simulations
are shared through the session fixtures in conftest.py.
"""

import numpy as np
import pytest
import scipy.signal

from sdmrac import adapt, bnn, dynamics, harness
from sdmrac.bnn import BayesianNetwork, draw_noise, elbo_loss, elbo_loss_and_grads
from sdmrac.cli import main


def _verdict(num, ok, detail):
    print(f"\nCRITERION {num}: {'PASS' if ok else 'FAIL'} — {detail}")
    return ok


class TestCriterion1Boundedness:
    def test_fast_weights_never_leave_projection_ball(self, seeded_runs):
        cfg = harness.ExperimentConfig()
        worst = -np.inf
        violations = 0
        for seed, (log, report) in seeded_runs.items():
            w_norms = np.linalg.norm(log.extra["W"], axis=1)
            worst = max(worst, float(w_norms.max()))
            violations += int(np.any(w_norms > cfg.w_bound + 1e-12))
        ok = violations == 0 and worst <= cfg.w_bound
        assert _verdict(1, ok,
                        f"max_t ||W||_F = {worst:.4g} over 10 seeds, "
                        f"bound {cfg.w_bound}, violations {violations}")


class TestCriterion2InducedPE:
    @staticmethod
    def _post_retrain(report):
        t0 = report.retrain_times[0]
        starts = np.array(report.pe_window_starts)
        lam = np.array(report.pe_lambda_min)
        return starts[starts >= t0], lam[starts >= t0]

    @staticmethod
    def _constant_reference(starts, cfg):
        # windows lying entirely inside one staircase phase
        ends = starts + cfg.pe_window
        return (starts // cfg.ref_period) == ((ends - 1e-9) // cfg.ref_period)

    def test_feature_excitation_split(self, default_run, dmrac_run):
        cfg_s, _, rep_s = default_run
        _, _, rep_d = dmrac_run
        assert rep_s.retrain_times and rep_d.retrain_times
        _, lam_s = self._post_retrain(rep_s)
        starts_d, lam_d = self._post_retrain(rep_d)
        const = self._constant_reference(starts_d, cfg_s)
        sdmrac_ok = bool(np.all(lam_s > 1e-6))
        threshold = 0.1 * float(np.median(lam_s))
        dmrac_ok = bool(np.any(lam_d[const] < threshold))
        ok = sdmrac_ok and dmrac_ok
        assert _verdict(2, ok,
                        f"S-DMRAC min lambda_min {lam_s.min():.3e} > 1e-6; "
                        f"DMRAC constant-ref min {lam_d[const].min():.3e} "
                        f"< 10% of median {threshold:.3e}")


class TestCriterion3Tracking:
    def test_rms_improvement_and_hf_energy(self, default_run, dmrac_run,
                                            baseline_run):
        _, log_s, _ = default_run
        _, log_d, _ = dmrac_run
        _, log_b, _ = baseline_run
        window = log_s.t >= 10.0

        def rms(log):
            return float(np.sqrt(np.mean(
                np.linalg.norm(log.e[window], axis=1) ** 2)))

        rms_s, rms_b = rms(log_s), rms(log_b)
        ratio = rms_s / rms_b
        # oscillation comparison: roll-error energy above 2 Hz, measured in
        # the time domain to avoid leakage from the dominant low frequencies
        fs = 1.0 / (log_s.t[1] - log_s.t[0])
        sos = scipy.signal.butter(4, 2.0, "highpass", fs=fs, output="sos")

        def hf_energy(log):
            hf = scipy.signal.sosfiltfilt(sos, log.e[window, 0])
            return float(np.mean(hf ** 2))

        hf_s, hf_d = hf_energy(log_s), hf_energy(log_d)
        ok = ratio <= 0.7 and hf_s <= hf_d
        assert _verdict(3, ok,
                        f"RMS ratio vs baseline {ratio:.3f} <= 0.7; "
                        f"HF energy S-DMRAC {hf_s:.3e} <= DMRAC {hf_d:.3e}")


class TestCriterion4UncertaintyEstimate:
    def test_estimate_improves_and_band_behaviour(self, default_run):
        cfg, log, report = default_run
        ratio = report.uncertainty_rmse_last10 / report.uncertainty_rmse_first10
        rmse_ok = ratio <= 0.5

        # epistemic band width in transient windows (2 s after each step)
        # versus settled windows (2 s before the next step)
        t = log.t
        band = log.extra["band"][:, 0]
        steps = np.arange(0.0, cfg.horizon, cfg.ref_period)
        trans = np.zeros(t.shape, dtype=bool)
        settled = np.zeros(t.shape, dtype=bool)
        for s in steps:
            trans |= (t >= s) & (t < s + 2.0)
            settled |= (t >= s + cfg.ref_period - 2.0) & (t < s + cfg.ref_period)
        mean_trans = float(band[trans].mean())
        mean_settled = float(band[settled].mean())

        # the band comparison is asserted only where settled states fall
        # outside buffer coverage; otherwise the widths are recorded
        admitted = log.extra["admitted"][:, 0] > 0.5
        stored = log.x[admitted]
        probes = log.x[settled][::100]
        d2 = np.min(np.sum((probes[:, None, :] - stored[None, :, :]) ** 2,
                           axis=2), axis=1)
        scores = 1.0 - np.exp(-d2 / (2.0 * cfg.kernel_width ** 2))
        outside = scores >= cfg.eps_tol
        if outside.any():
            band_ok = mean_trans < mean_settled
            band_note = (f"asserted: transient {mean_trans:.3e} < settled "
                         f"{mean_settled:.3e}")
        else:
            band_ok = True
            band_note = (f"recorded (settled states inside buffer coverage): "
                         f"transient {mean_trans:.3e}, settled "
                         f"{mean_settled:.3e}")
        ok = rmse_ok and band_ok
        assert _verdict(4, ok,
                        f"RMSE last/first ratio {ratio:.3f} <= 0.5; band "
                        + band_note)


class TestCriterion5WeightSmoothness:
    def test_total_variation_ordering(self, default_run, dmrac_run):
        _, _, rep_s = default_run
        _, _, rep_d = dmrac_run
        ok = rep_s.w_tv <= rep_d.w_tv
        assert _verdict(5, ok,
                        f"TV ||W||_F S-DMRAC {rep_s.w_tv:.3f} <= "
                        f"DMRAC {rep_d.w_tv:.3f}")


class TestCriterion6GradientCorrectness:
    def test_elbo_gradients_match_finite_differences(self):
        rng = np.random.default_rng(3)
        net = BayesianNetwork.build(2, (20, 20), 1, rng, mu_std=0.5)
        X = rng.normal(size=(32, 2))
        Y = rng.normal(size=(32, 1))
        eps = [draw_noise(net, rng)]
        kl_w = 1.0 / 32.0
        _, grads = elbo_loss_and_grads(net, X, Y, 1, eps_draws=eps,
                                       kl_weight=kl_w)
        h = 1e-5
        worst = 0.0
        for li, layer in enumerate(net.layers):
            for pi, arr in enumerate((layer.mu, layer.rho)):
                it = np.nditer(arr, flags=["multi_index"])
                for _ in it:
                    ix = it.multi_index
                    old = arr[ix]
                    arr[ix] = old + h
                    lp = elbo_loss(net, X, Y, 1, eps_draws=eps, kl_weight=kl_w)
                    arr[ix] = old - h
                    lm = elbo_loss(net, X, Y, 1, eps_draws=eps, kl_weight=kl_w)
                    arr[ix] = old
                    fd = (lp - lm) / (2 * h)
                    an = grads[li][pi][ix]
                    worst = max(worst,
                                abs(fd - an) / max(abs(fd), abs(an), 1e-8))
        ok = worst < 1e-4
        assert _verdict(6, ok, f"max relative gradient error {worst:.3e} "
                               f"< 1e-4 over all mu and rho entries")


class TestCriterion7LyapunovSolver:
    def test_residual_and_positivity(self):
        model = dynamics.wing_rock_reference()
        Q = np.eye(2)
        P = adapt.solve_lyapunov(model.A_m, Q)
        resid = float(np.linalg.norm(model.A_m.T @ P + P @ model.A_m + Q))
        lam = float(np.linalg.eigvalsh(P)[0])
        ok = resid < 1e-10 and lam > 0
        assert _verdict(7, ok,
                        f"residual {resid:.3e} < 1e-10, min eig(P) {lam:.4f} > 0")


class TestCriterion8OracleEquivalence:
    def test_exponential_weight_convergence(self):
        # synthetic linear-in-features plant: Delta = W*^T phi with frozen
        # zero-variance features, multisine reference for excitation
        rng = np.random.default_rng(42)
        net = BayesianNetwork.build(2, (3,), 1, rng, zero_variance=True,
                                    mu_std=1.5)
        version = bnn.NetworkVersion(net, 0)

        def phi_of(x):
            theta = bnn.sample_weights(version.net, rng)
            feats, _ = bnn.forward(version.net, theta, x)
            return feats

        W_star = np.array([[0.8], [-0.5], [0.3]])
        A = np.array([[0.0, 1.0], [0.0, 0.0]])
        B = np.array([[0.0], [1.0]])
        plant = dynamics.LinearPlant(A, B,
                                     lambda x: (W_star.T @ phi_of(x)).ravel())
        model = dynamics.wing_rock_reference()
        gains = adapt.design_gains(A, B, model.A_m, model.B_m, Gamma=200.0)
        freqs = (0.7, 1.3, 2.9, 4.1)
        amp = 0.9 / len(freqs)

        def r_sig(t):
            return np.array([sum(amp * np.sin(w * t) for w in freqs)])

        dt, T = 0.001, 20.0
        W = adapt.FastWeights.zeros(3, 1, 10.0)
        x = np.zeros(2)
        x_m = np.zeros(2)
        ts = np.arange(int(T / dt)) * dt
        wt = np.empty(ts.shape)
        for i, t in enumerate(ts):
            r = r_sig(t)
            phi = phi_of(x)
            u = adapt.total_control(gains, W, phi, x, r)
            W = adapt.update_fast_weights(W, phi, x_m - x, gains, dt)
            x = dynamics.rk4_step(
                lambda s: dynamics.plant_derivative(plant, s, u), x, dt)
            x_m = dynamics.reference_step(model, x_m, r, dt)
            wt[i] = np.linalg.norm(W.W - W_star)
        threshold = 0.05 * np.linalg.norm(W_star)
        hits = np.where(wt < threshold)[0]
        converged = hits.size > 0 and wt[-1] < threshold
        first_hit = float(ts[hits[0]]) if hits.size else np.inf

        # exponential decay check: per-second RMS of the weight error on the
        # pre-saturation segment should be log-linear in time
        secs = np.arange(int(T))
        wsec = np.array([np.sqrt(np.mean(wt[(ts >= s) & (ts < s + 1)] ** 2))
                         for s in secs])
        pre = np.where(wsec > threshold)[0]
        y = np.log(wsec[pre])
        coef = np.polyfit(secs[pre].astype(float), y, 1)
        resid = y - np.polyval(coef, secs[pre].astype(float))
        r2 = float(1.0 - np.sum(resid ** 2) / np.sum((y - y.mean()) ** 2))
        ok = converged and first_hit < 20.0 and coef[0] < 0 and r2 > 0.95
        assert _verdict(8, ok,
                        f"||W - W*|| below 5% at t={first_hit:.1f}s < 20s, "
                        f"decay slope {coef[0]:.3f}, log-linear R^2 {r2:.4f} "
                        f"> 0.95")


class TestCriterion9Determinism:
    def test_repeat_run_byte_identical_trajectory(self, tmp_path):
        blobs = []
        for name in ("first", "second"):
            out = tmp_path / name
            assert main(["simulate", "--seed", "0",
                         "--output-dir", str(out)]) == 0
            blobs.append((out / "trajectory.csv").read_bytes())
        ok = blobs[0] == blobs[1]
        assert _verdict(9, ok,
                        f"trajectory.csv byte-identical across runs "
                        f"({len(blobs[0])} bytes)")
