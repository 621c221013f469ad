"""Command-line front end: run experiments, compare modes, emit figures.

Exit codes: 0 success, 1 usage/configuration error, 2 runtime divergence.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import bnn, dynamics, harness, plots, replay

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DIVERGED = 2


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems with exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        sys.exit(EXIT_USAGE)


def _load_config(args):
    overrides = {}
    for name in ("seed", "mode", "horizon", "gamma", "pipelined"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    if getattr(args, "config", None):
        cfg = harness.ExperimentConfig.from_ini(args.config, overrides)
    else:
        cfg = harness.ExperimentConfig(**{
            k: (v if k not in ("seed",) else int(v))
            for k, v in overrides.items()})
    if cfg.horizon <= 0:
        raise ValueError("horizon must be positive")
    return cfg


def _prepare_dir(path, force):
    marker = os.path.join(path, "config.ini")
    if os.path.exists(marker) and not force:
        raise FileExistsError(
            f"output directory {path!r} already holds a run; use --force")
    os.makedirs(path, exist_ok=True)


def _write_run(out_dir, cfg, log, report):
    cfg.to_ini(os.path.join(out_dir, "config.ini"))
    log.to_csv(os.path.join(out_dir, "trajectory.csv"))
    s = len(log)
    k = log.extra["phi_s"].shape[1]
    dynamics.write_csv(
        os.path.join(out_dir, "weights.csv"),
        ["t"] + [f"W_{j+1}" for j in range(log.extra["W"].shape[1])],
        np.hstack([log.t[:, None], log.extra["W"]]))
    dynamics.write_csv(
        os.path.join(out_dir, "features.csv"),
        (["t"] + [f"phi_s_{j+1}" for j in range(k)]
         + [f"phi_m_{j+1}" for j in range(k)]
         + ["sigma", "band_epi", "band_alea", "admitted"]),
        np.hstack([log.t[:, None], log.extra["phi_s"], log.extra["phi_m"],
                   log.extra["sigma"], log.extra["band"],
                   log.extra["admitted"]]))
    report.to_json(os.path.join(out_dir, "diagnostics.json"))
    windows = harness.pe_spectrum(log.t, log.extra["phi_s"],
                                  cfg.pe_window, cfg.pe_stride)
    dynamics.write_csv(
        os.path.join(out_dir, "pe_windows.csv"),
        ["window_start", "window_end", "lambda_min"],
        np.array([[w.start, w.end, w.lambda_min] for w in windows]))
    _plot_run(out_dir)


def _plot_run(out_dir):
    traj = os.path.join(out_dir, "trajectory.csv")
    feats = os.path.join(out_dir, "features.csv")
    wcsv = os.path.join(out_dir, "weights.csv")
    plots.plot_states(traj, os.path.join(out_dir, "states.svg"))
    plots.plot_uncertainty(traj, feats, os.path.join(out_dir, "uncertainty.svg"))
    plots.plot_weights(wcsv, os.path.join(out_dir, "weights.svg"))


def cmd_simulate(args):
    cfg = _load_config(args)
    _prepare_dir(args.output_dir, args.force)
    try:
        log, report = harness.run_experiment(cfg)
    except dynamics.SimulationDiverged as exc:
        if exc.log is not None and len(exc.log) > 0:
            exc.log.to_csv(os.path.join(args.output_dir, "trajectory.csv"))
        with open(os.path.join(args.output_dir, "divergence.json"), "w") as fh:
            json.dump({"error": str(exc),
                       "last_finite_step": exc.last_finite_step}, fh)
        print(f"simulation diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    _write_run(args.output_dir, cfg, log, report)
    print(f"run complete: mode={cfg.mode} seed={cfg.seed} "
          f"rms_error={report.rms_error_total:.6g}")
    return EXIT_OK


def cmd_compare(args):
    cfg = _load_config(args)
    cfg_s = cfg.replaced(mode="sdmrac")
    cfg_d = cfg.replaced(mode="dmrac")
    _prepare_dir(args.output_dir, args.force)
    try:
        (log_s, rep_s), (log_d, rep_d), deltas = harness.compare_runs(cfg_s, cfg_d)
    except dynamics.SimulationDiverged as exc:
        print(f"simulation diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    for sub, c, log, rep in (("sdmrac", cfg_s, log_s, rep_s),
                             ("dmrac", cfg_d, log_d, rep_d)):
        sub_dir = os.path.join(args.output_dir, sub)
        os.makedirs(sub_dir, exist_ok=True)
        _write_run(sub_dir, c, log, rep)
    comparison = {
        "sdmrac": json.loads(rep_s.to_json()),
        "dmrac": json.loads(rep_d.to_json()),
        "deltas_dmrac_minus_sdmrac": deltas,
    }
    with open(os.path.join(args.output_dir, "comparison.json"), "w") as fh:
        json.dump(comparison, fh, indent=1)
    plots.plot_overlay(
        [os.path.join(args.output_dir, "sdmrac"),
         os.path.join(args.output_dir, "dmrac")],
        ["S-DMRAC", "DMRAC"], os.path.join(args.output_dir, "compare"))
    print(f"comparison complete: delta rms_error={deltas['rms_error']:.6g}")
    return EXIT_OK


def cmd_train_offline(args):
    X, Y = replay.load_buffer_csv(args.buffer)
    if X.shape[0] == 0:
        print("buffer file is empty", file=sys.stderr)
        return EXIT_USAGE
    cfg = _load_config(args)
    os.makedirs(args.output_dir, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    net = bnn.BayesianNetwork.build(
        X.shape[1], cfg.hidden, Y.shape[1], rng, activation=cfg.activation,
        prior_std=cfg.prior_std, likelihood_std=cfg.likelihood_std,
        mu_std=cfg.mu_init_std, rho_init=cfg.rho_init)
    losses = []
    batch = min(cfg.batch_size, X.shape[0])
    version = bnn.train(net, (X, Y), args.epochs, batch, cfg.learning_rate,
                        rng, momentum=cfg.momentum,
                        n_samples=cfg.train_draws, loss_history=losses)
    version.save(os.path.join(args.output_dir, "checkpoint.json"))
    dynamics.write_csv(os.path.join(args.output_dir, "loss_curve.csv"),
                       ["step", "loss"],
                       np.column_stack([np.arange(len(losses)), losses])
                       if losses else np.empty((0, 2)))
    print(f"trained {args.epochs} epochs on {X.shape[0]} points")
    return EXIT_OK


def cmd_pe_report(args):
    cfg = _load_config(args)
    feats = os.path.join(args.output_dir, "features.csv")
    header, data = dynamics.read_csv(feats)
    k = sum(1 for h in header if h.startswith("phi_s_"))
    t = data[:, 0]
    phi = data[:, 1:1 + k]
    windows = harness.pe_spectrum(t, phi, cfg.pe_window, cfg.pe_stride)
    dynamics.write_csv(
        os.path.join(args.output_dir, "pe_windows.csv"),
        ["window_start", "window_end", "lambda_min"],
        np.array([[w.start, w.end, w.lambda_min] for w in windows]))
    lam = np.array([w.lambda_min for w in windows])
    print(f"{len(windows)} windows, lambda_min in "
          f"[{lam.min():.3e}, {lam.max():.3e}]")
    return EXIT_OK


def cmd_plot(args):
    _plot_run(args.output_dir)
    print(f"figures regenerated in {args.output_dir}")
    return EXIT_OK


def build_parser():
    parser = _Parser(prog="sdmrac",
                     description="Stochastic deep adaptive-control laboratory")
    sub = parser.add_subparsers(dest="command", required=True)
    default_out = os.environ.get("SDMRAC_OUTPUT_DIR", "out")

    def common(p, needs_config=False):
        p.add_argument("--config", required=needs_config,
                       help="INI config file (defaults used when omitted)")
        p.add_argument("--output-dir", default=default_out)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--mode", choices=harness.MODES, default=None)
        p.add_argument("--horizon", type=float, default=None)
        p.add_argument("--gamma", type=float, default=None,
                       help="adaptation learning rate (sweepable)")
        p.add_argument("--pipelined", action="store_const", const=True,
                       default=None, help="train in a background thread")

    p = sub.add_parser("simulate", help="run one experiment")
    common(p)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare", help="run S-DMRAC vs DMRAC side by side")
    common(p)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("train-offline", help="train a network on a buffer dump")
    common(p)
    p.add_argument("--buffer", required=True, help="buffer CSV dump")
    p.add_argument("--epochs", type=int, default=100)
    p.set_defaults(func=cmd_train_offline)

    p = sub.add_parser("pe-report", help="recompute PE windows from features.csv")
    common(p)
    p.set_defaults(func=cmd_pe_report)

    p = sub.add_parser("plot", help="regenerate figures from CSV logs")
    common(p)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, FileExistsError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
