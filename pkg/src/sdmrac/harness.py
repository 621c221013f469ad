"""Experiment orchestration for the stochastic adaptive-control loop.

Runs the full closed loop (control stepping, buffer admission, retraining,
version switching), in a deterministic single-threaded mode or a pipelined
mode where training happens on a snapshot in a worker thread and publishes
atomically.  Also computes the run diagnostics: windowed feature-Gram
spectra, uncertainty-estimate error, and fast-weight statistics.
"""

import configparser
import json
import threading
from dataclasses import dataclass, field, asdict, fields as dc_fields

import numpy as np

from . import adapt, bnn, dynamics, replay
from .dynamics import DEG

MODES = ("sdmrac", "dmrac", "baseline_only")


@dataclass
class ExperimentConfig:
    """Everything a run needs; seed fully determines single-threaded runs."""

    # experiment
    mode: str = "sdmrac"
    seed: int = 0
    horizon: float = 40.0
    pipelined: bool = False
    # dynamics
    dt: float = 0.001
    method: str = "rk4"
    units: str = "rad"          # stated ICs/commands are degrees; 'rad'
    x0_roll_deg: float = 1.0    # converts them, 'deg' runs raw
    x0_rate_deg: float = 1.0
    # reference staircase, degrees, one level per period
    ref_levels_deg: tuple = (1.0, -1.0, 2.0, 0.0)
    ref_period: float = 10.0
    uncertainty_scale: float = 1.0   # 0 turns the matched uncertainty off
    # controller
    gamma: float = 10.0
    w_bound: float = 10.0
    # bnn
    hidden: tuple = (20, 20)
    activation: str = "tanh"
    prior_std: float = 1.0
    likelihood_std: float = 0.1
    mu_init_std: float = 0.1
    rho_init: float = -3.0
    learning_rate: float = 0.01
    momentum: float = 0.9
    epochs: int = 25
    batch_size: int = 32
    train_draws: int = 2
    mc_draws: int = 10
    # buffer
    p_max: int = 250
    eps_tol: float = 0.1
    kernel_width: float = 0.05
    score_space: str = "state"
    # harness
    retrain_new_points: int = 25
    retrain_every_steps: int = 0   # 0 disables the step-count trigger
    # restart the fast weights from the trained final layer at each switch,
    # keeping the deployed estimate continuous across feature changes
    warm_start_weights: bool = False
    # seed the training network's final-layer mean from the live fast
    # weights before each retrain, so training starts at a small residual
    # and the features drift as little as the data demands
    seed_final_layer: bool = True
    pe_window: float = 2.0
    pe_stride: float = 0.5
    error_ceiling: float = 0.5

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.units not in ("rad", "deg"):
            raise ValueError("units must be 'rad' or 'deg'")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        self.ref_levels_deg = tuple(float(v) for v in self.ref_levels_deg)
        self.hidden = tuple(int(v) for v in self.hidden)

    @property
    def angle_scale(self):
        return DEG if self.units == "rad" else 1.0

    def x0(self):
        return np.array([self.x0_roll_deg, self.x0_rate_deg]) * self.angle_scale

    def reference_signal(self):
        levels = [np.array([v * self.angle_scale]) for v in self.ref_levels_deg]
        return dynamics.staircase(levels, self.ref_period)

    def to_ini(self, path):
        cp = configparser.ConfigParser()
        cp["experiment"] = {}
        for f in dc_fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ", ".join(str(x) for x in v)
            cp["experiment"][f.name] = str(v)
        with open(path, "w") as fh:
            cp.write(fh)

    @classmethod
    def from_ini(cls, path, overrides=None):
        cp = configparser.ConfigParser()
        read = cp.read(path)
        if not read:
            raise FileNotFoundError(path)
        raw = {}
        for section in cp.sections():
            raw.update(dict(cp[section]))
        raw.update(overrides or {})
        kwargs = {}
        for f in dc_fields(cls):
            if f.name not in raw:
                continue
            s = str(raw[f.name]).strip()
            if f.name in ("ref_levels_deg", "hidden"):
                kwargs[f.name] = tuple(
                    float(v) if f.name == "ref_levels_deg" else int(float(v))
                    for v in s.replace("(", "").replace(")", "").split(",")
                    if v.strip())
            elif isinstance(f.default, bool):
                kwargs[f.name] = s.lower() in ("1", "true", "yes", "on")
            elif f.name in ("seed", "epochs", "batch_size", "train_draws",
                            "mc_draws", "p_max", "retrain_new_points",
                            "retrain_every_steps"):
                kwargs[f.name] = int(float(s))
            elif f.name in ("mode", "method", "units", "activation",
                            "score_space"):
                kwargs[f.name] = s
            else:
                kwargs[f.name] = float(s)
        return cls(**kwargs)

    def replaced(self, **kw):
        d = asdict(self)
        d.update(kw)
        return ExperimentConfig(**d)


@dataclass
class PEWindowReport:
    """Feature excitation over one time window."""

    start: float
    end: float
    gram: np.ndarray
    lambda_min: float
    gamma_threshold: float = 1e-6


def pe_spectrum(t, phi, window, stride):
    """Trapezoid-integrated feature Gram per sliding window.

    t: (T,) sample times; phi: (T, k) per-step sampled features (the ones
    that entered the adaptive element).
    """
    t = np.asarray(t, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if t.shape[0] < 2:
        raise ValueError("log too short")
    if window > t[-1] - t[0] + 1e-12:
        raise ValueError("window longer than log")
    dt = t[1] - t[0]
    reports = []
    start = t[0]
    while start + window <= t[-1] + 1e-9:
        i0 = int(round((start - t[0]) / dt))
        i1 = int(round((start + window - t[0]) / dt))
        seg = phi[i0:i1 + 1]
        weights = np.full(seg.shape[0], dt)
        weights[0] = weights[-1] = 0.5 * dt
        gram = np.einsum("i,ij,ik->jk", weights, seg, seg)
        gram = 0.5 * (gram + gram.T)
        lam = float(np.linalg.eigvalsh(gram)[0])
        reports.append(PEWindowReport(start=float(start),
                                      end=float(start + window),
                                      gram=gram, lambda_min=lam))
        start += stride
    return reports


def ideal_weight_diagnostics(phi_bar, delta, W_series=None, sigma=None):
    """Least-squares ideal-weight fit per switching epoch; diagnostics only.

    phi_bar: (T, k) feature means, delta: (T, m) true uncertainty.  Returns
    a list of per-epoch dicts and, when W_series (T, k, m) is given, the
    per-step distance from the epoch's fitted ideal weights.
    """
    phi_bar = np.asarray(phi_bar, dtype=float)
    delta = np.atleast_2d(np.asarray(delta, dtype=float))
    if delta.shape[0] != phi_bar.shape[0]:
        delta = delta.T
    T, k = phi_bar.shape
    if sigma is None:
        sigma = np.zeros(T, dtype=int)
    sigma = np.asarray(sigma).astype(int)
    epochs = []
    wtilde = np.full(T, np.nan) if W_series is not None else None
    for s in np.unique(sigma):
        idx = np.where(sigma == s)[0]
        W_star, _, rank, _ = np.linalg.lstsq(phi_bar[idx], delta[idx], rcond=None)
        resid = phi_bar[idx] @ W_star - delta[idx]
        epochs.append({
            "sigma": int(s),
            "W_star": W_star,
            "residual_rms": float(np.sqrt(np.mean(resid ** 2))),
            "rank_deficient": bool(rank < k),
        })
        if wtilde is not None:
            Ws = np.asarray(W_series)[idx]
            wtilde[idx] = np.linalg.norm(Ws - W_star[None, :, :], axis=(1, 2))
    return epochs, wtilde


@dataclass
class DiagnosticsReport:
    """Run-level summary statistics serialized alongside the raw logs."""

    mode: str
    seed: int
    rms_error_total: float
    rms_error_phases: list
    sup_error_after_5s: float
    uncertainty_rmse_first10: float
    uncertainty_rmse_last10: float
    band_epi_per_second: list
    band_alea_per_second: list
    w_tv: float
    w_norm_max: float
    pe_window_starts: list
    pe_lambda_min: list
    retrain_times: list
    sigma_final: int

    def to_json(self, path=None):
        d = asdict(self)
        if path is None:
            return json.dumps(d, indent=1)
        with open(path, "w") as fh:
            json.dump(d, fh, indent=1)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            d = json.load(fh)
        return cls(**d)


class _Trainer:
    """Owns the slow-weight training cycle and version publication."""

    def __init__(self, cfg, net, pipelined, on_publish=None):
        self.cfg = cfg
        self.net = net
        self.pipelined = pipelined
        self.version = bnn.NetworkVersion(net, sigma=0)
        self.retrain_times = []
        self.on_publish = on_publish
        self._thread = None
        self._pending = None

    def _rng_for(self, sigma):
        return np.random.default_rng((self.cfg.seed, 0x5DAC, sigma))

    def _fit(self, snap, sigma):
        cfg = self.cfg
        return bnn.train(self.net, snap, cfg.epochs, cfg.batch_size,
                         cfg.learning_rate, self._rng_for(sigma),
                         momentum=cfg.momentum, n_samples=cfg.train_draws,
                         sigma=sigma)

    def busy(self):
        return self._thread is not None and self._thread.is_alive()

    def request(self, snap, t):
        if self.busy():
            return False
        sigma = self.version.sigma
        if self.pipelined:
            def work():
                self._pending = self._fit(snap, sigma)
            self._thread = threading.Thread(target=work, daemon=True)
            self._thread.start()
        else:
            self.version = self._fit(snap, sigma)
            self.retrain_times.append(t)
            if self.on_publish:
                self.on_publish(self.version)
        return True

    def poll(self, t):
        """Publish a finished pipelined version, if any (atomic swap)."""
        if self._pending is not None and not self.busy():
            self.version = self._pending
            self._pending = None
            self.retrain_times.append(t)
            if self.on_publish:
                self.on_publish(self.version)

    def finish(self, t):
        if self._thread is not None:
            self._thread.join()
        self.poll(t)


def run_experiment(cfg):
    """Execute one closed-loop run; returns (TrajectoryLog, DiagnosticsReport).

    The log carries extra channels: sampled features (phi_s_*), feature
    means (phi_m_*), fast weights (W_*), switching index, epistemic and
    aleatoric band half-widths on the adaptive element, admission flags.
    """
    rng = np.random.default_rng(cfg.seed)
    plant = dynamics.wing_rock_plant()
    if cfg.uncertainty_scale != 1.0:
        base = plant.uncertainty
        scale = float(cfg.uncertainty_scale)
        plant = dynamics.LinearPlant(plant.A, plant.B,
                                     lambda x: scale * base(x))
    model = dynamics.wing_rock_reference()
    gains = adapt.design_gains(plant.A, plant.B, model.A_m, model.B_m,
                               Gamma=cfg.gamma)
    net = bnn.BayesianNetwork.build(
        plant.n, cfg.hidden, plant.m, rng, activation=cfg.activation,
        prior_std=cfg.prior_std, likelihood_std=cfg.likelihood_std,
        zero_variance=(cfg.mode == "dmrac"),
        mu_std=cfg.mu_init_std, rho_init=cfg.rho_init)
    k = net.feature_dim
    trainer = _Trainer(cfg, net, cfg.pipelined)
    weights = adapt.FastWeights.zeros(k, plant.m, cfg.w_bound)
    buf = replay.ReplayBuffer(cfg.p_max, cfg.eps_tol, cfg.kernel_width,
                              cfg.score_space)
    icfg = dynamics.IntegratorConfig(cfg.dt, cfg.method)
    state = {"new_points": 0, "step_count": 0, "weights": weights,
             "extras": None}
    adaptive = cfg.mode in ("sdmrac", "dmrac")
    n_draws = cfg.mc_draws

    def controller(t, x, x_m, r):
        W = state["weights"]
        u_bl = adapt.baseline_control(gains, x, r)
        if not adaptive:
            state["extras"] = {
                "phi_s": np.zeros(k), "phi_m": np.zeros(k),
                "W": W.W.reshape(-1), "sigma": trainer.version.sigma,
                "band": np.zeros(2), "admitted": 0.0,
            }
            return u_bl, np.zeros(plant.m)
        version = trainer.version
        draws = version.feature_draws(x, n_draws + 1, rng)
        phi_sample = draws[0]
        phi_mean = draws[1:].mean(axis=0)
        u_ad = adapt.adaptive_element(W, phi_sample)
        u = u_bl - u_ad
        # update-law error is reference-minus-plant; the log keeps x - x_m
        W = adapt.update_fast_weights(W, phi_mean, x_m - x, gains, cfg.dt)
        state["weights"] = W
        admitted = buf.try_admit(x, W, version, rng, n_draws=n_draws, t=t,
                                 phi=phi_mean)
        if admitted:
            state["new_points"] += 1
        u_ad_draws = draws[1:] @ W.W  # (N, m)
        band_epi = float(np.linalg.norm(u_ad_draws.std(axis=0, ddof=1))) \
            if n_draws >= 2 else 0.0
        band_alea = float(np.linalg.norm(W.W) * net.likelihood_std)
        state["extras"] = {
            "phi_s": phi_sample, "phi_m": phi_mean, "W": W.W.reshape(-1),
            "sigma": version.sigma, "band": np.array([band_epi, band_alea]),
            "admitted": float(admitted),
        }
        return u, u_ad

    def on_publish(version):
        if cfg.warm_start_weights:
            W_new = adapt.project_frobenius(
                version.net.layers[-1].mu.T.copy(), cfg.w_bound)
            state["weights"] = adapt.FastWeights(W_new, cfg.w_bound)

    trainer.on_publish = on_publish

    def observer(i, log):
        for name, value in state["extras"].items():
            log.extra[name][i] = value
        if not adaptive:
            return
        trainer.poll(log.t[i])
        state["step_count"] += 1
        due = state["new_points"] >= cfg.retrain_new_points
        if cfg.retrain_every_steps > 0:
            due = due or state["step_count"] % cfg.retrain_every_steps == 0
        if due and len(buf) >= cfg.batch_size and not trainer.busy():
            if cfg.seed_final_layer:
                net.layers[-1].mu[:] = state["weights"].W.T
            if trainer.request(buf.snapshot(), log.t[i]):
                state["new_points"] = 0

    extra_channels = {"phi_s": k, "phi_m": k, "W": k * plant.m, "sigma": 1,
                      "band": 2, "admitted": 1}
    log = dynamics.integrate_closed_loop(
        plant, model, controller, cfg.reference_signal(), cfg.x0(),
        cfg.x0(), cfg.horizon, icfg, extra_channels, observer)
    trainer.finish(log.t[-1])
    report = build_report(cfg, log, trainer)
    return log, report


def build_report(cfg, log, trainer=None):
    t = log.t
    err = np.linalg.norm(log.e, axis=1)
    n_phases = max(1, int(np.ceil((t[-1] + 1e-9) / cfg.ref_period)))
    phases = []
    for p in range(n_phases):
        m = (t >= p * cfg.ref_period) & (t < (p + 1) * cfg.ref_period)
        phases.append(float(np.sqrt(np.mean(err[m] ** 2))) if m.any() else 0.0)
    est_err = np.linalg.norm(log.u_ad - log.delta, axis=1)
    first = t <= min(10.0, t[-1])
    last = t >= max(0.0, t[-1] - 10.0)
    band = log.extra["band"]
    per_sec_epi, per_sec_alea = [], []
    for s in range(int(np.floor(t[-1]))):
        m = (t >= s) & (t < s + 1)
        per_sec_epi.append(float(band[m, 0].mean()))
        per_sec_alea.append(float(band[m, 1].mean()))
    w_norms = np.linalg.norm(log.extra["W"], axis=1)
    reports = pe_spectrum(t, log.extra["phi_s"], cfg.pe_window, cfg.pe_stride)
    after5 = t >= min(5.0, t[-1])
    return DiagnosticsReport(
        mode=cfg.mode,
        seed=cfg.seed,
        rms_error_total=float(np.sqrt(np.mean(err ** 2))),
        rms_error_phases=phases,
        sup_error_after_5s=float(err[after5].max()),
        uncertainty_rmse_first10=float(np.sqrt(np.mean(est_err[first] ** 2))),
        uncertainty_rmse_last10=float(np.sqrt(np.mean(est_err[last] ** 2))),
        band_epi_per_second=per_sec_epi,
        band_alea_per_second=per_sec_alea,
        w_tv=float(np.sum(np.abs(np.diff(w_norms)))),
        w_norm_max=float(w_norms.max()),
        pe_window_starts=[r.start for r in reports],
        pe_lambda_min=[r.lambda_min for r in reports],
        retrain_times=list(trainer.retrain_times) if trainer else [],
        sigma_final=int(trainer.version.sigma) if trainer else 0,
    )


def compare_runs(cfg_a, cfg_b):
    """Run two configurations sharing plant, gains, seed, and schedule.

    Returns (report_a, report_b, deltas) where deltas holds b-minus-a
    differences of the headline statistics.
    """
    shared = ("seed", "horizon", "dt", "method", "units", "x0_roll_deg",
              "x0_rate_deg", "ref_levels_deg", "ref_period", "gamma",
              "w_bound")
    for name in shared:
        if getattr(cfg_a, name) != getattr(cfg_b, name):
            raise ValueError(f"configs differ in shared field {name!r}")
    log_a, rep_a = run_experiment(cfg_a)
    log_b, rep_b = run_experiment(cfg_b)
    lam_a = np.array(rep_a.pe_lambda_min)
    lam_b = np.array(rep_b.pe_lambda_min)
    deltas = {
        "rms_error": rep_b.rms_error_total - rep_a.rms_error_total,
        "w_tv": rep_b.w_tv - rep_a.w_tv,
        "pe_lambda_min_median": float(np.median(lam_b) - np.median(lam_a)),
        "pe_lambda_min": (lam_b - lam_a).tolist(),
    }
    return (log_a, rep_a), (log_b, rep_b), deltas
