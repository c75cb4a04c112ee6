"""Command-line front end.

Commands
--------
simulate  write ``imu.csv`` and ``truth.csv`` for a synthetic gait profile
run       run the filter bank over an IMU file and write the trajectory
learn     fit the transition matrix and write the report
compare   run filter bank and baseline against truth; write metrics and plot data

Exit codes: 0 success, 2 configuration error, 3 data parse error,
4 numerical failure, 5 learning did not converge (report still written).
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .baseline import run_zupt_ins
from .exceptions import (
    AllBranchesDead,
    ConfigError,
    NonFinite,
    NotConverged,
    NumericalBlowup,
    ParseError,
    SingularInnovation,
)
from .filterbank import Trajectory, run_filter_bank
from .gaitsim import preset_profile, simulate, simulate_markov
from .learning import LearnConfig, learn_transition_matrix
from .models import VARYING_GAIT_PI_LEARNED, default_initial_transition

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PARSE = 3
EXIT_NUMERICAL = 4
EXIT_NOT_CONVERGED = 5

PROFILES = ("stationary", "walk", "run", "walk-run", "stairs", "markov")
NUMERICAL = (NumericalBlowup, SingularInnovation, AllBranchesDead, NonFinite)


def _config(args) -> io.RunConfig:
    cfg = io.load_config(args.config)
    if getattr(args, "model", None):
        cfg.model = args.model
    if getattr(args, "max_leaves", None) is not None:
        cfg.max_leaves = None if args.max_leaves == 0 else args.max_leaves
    cfg.build_model()
    return cfg


def _output(args, cfg, key, default):
    value = getattr(args, "out", None) or cfg.outputs.get(key) or default
    return Path(value)


def _run_bank(data, cfg: io.RunConfig) -> Trajectory:
    return run_filter_bank(
        data, cfg.build_model(), mode_prior=cfg.mode_prior, noise=cfg.noise, max_leaves=cfg.max_leaves, align=cfg.align
    )


# ---------------------------------------------------------------- commands


def cmd_simulate(args) -> int:
    cfg = io.load_config(args.config)
    noise = cfg.noise.with_(sigma_s=0.0, sigma_w=0.0) if args.noise_free else cfg.noise
    if args.profile == "markov":
        pi = VARYING_GAIT_PI_LEARNED if cfg.transition is None else cfg.transition
        n = int(round(args.duration * 100.0)) + 1
        samples, truth = simulate_markov(pi, n, seed=args.seed, noise=noise)
    else:
        samples, truth = simulate(preset_profile(args.profile, args.duration, seed=args.seed, noise=noise))
    out = Path(args.out_dir)
    io.write_imu_csv(out / "imu.csv", samples)
    io.write_truth_csv(out / "truth.csv", truth)
    counts = np.bincount(truth.mode, minlength=4)[1:]
    print(
        f"simulate: profile={args.profile} seed={args.seed} samples={len(truth)} "
        f"modes={counts.tolist()} -> {out / 'imu.csv'}, {out / 'truth.csv'}"
    )
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _config(args)
    data = io.read_imu_csv(args.imu)
    traj = _run_bank(data, cfg)
    out = _output(args, cfg, "trajectory", "trajectory.csv")
    io.write_trajectory_csv(out, traj)
    r = traj.r[-1]
    print(f"run: {len(traj)} samples, final position ({r[0]:.3f}, {r[1]:.3f}, {r[2]:.3f}) m -> {out}")
    return EXIT_OK


def cmd_learn(args) -> int:
    cfg = _config(args)
    seqs = [io.read_imu_csv(p) for p in args.imu]
    model = cfg.build_model()
    learn = dict(cfg.learn)
    if args.max_iter is not None:
        learn["max_iter"] = args.max_iter
    lc = LearnConfig(seqs, max_leaves=cfg.max_leaves, noise=cfg.noise, align=cfg.align, **learn)
    pi0 = cfg.pi_init if cfg.pi_init is not None else default_initial_transition(model)
    out = _output(args, cfg, "report", "learn_report.json")
    try:
        report = learn_transition_matrix(lc, model, pi0, strict=True)
        code = EXIT_OK
    except NotConverged as exc:
        report, code = exc.report, EXIT_NOT_CONVERGED
    io.write_json(out, report.to_dict())
    occ = ", ".join(f"{v:.1f}%" for v in report.occupancy)
    state = "converged" if report.converged else "not converged"
    print(f"learn: {state} after {report.iterations} iterations, occupancy [{occ}] -> {out}")
    return code


def trajectory_metrics(est: Trajectory, truth) -> dict:
    """Final horizontal, along/cross-track and vertical errors against truth.

    The along-track axis is the horizontal direction from the first to the
    last truth position (the x-axis when they coincide); cross-track is
    90 degrees to its left.
    """
    d = truth.r[-1, :2] - truth.r[0, :2]
    norm = np.linalg.norm(d)
    along = d / norm if norm > 1e-6 else np.array([1.0, 0.0])
    cross = np.array([-along[1], along[0]])
    err = est.r[-1] - truth.r[-1]
    dz = est.r[:, 2] - truth.r[:, 2]
    return {
        "final_horizontal_error": float(np.linalg.norm(err[:2])),
        "along_track_error": float(err[:2] @ along),
        "cross_track_error": float(err[:2] @ cross),
        "final_vertical_error": float(abs(err[2])),
        "vertical_rms": float(np.sqrt(np.mean(dz**2))),
    }


def cmd_compare(args) -> int:
    cfg = _config(args)
    cfg.detector = replace(cfg.detector, gamma=args.gamma)
    data = io.read_imu_csv(args.imu)
    truth = io.read_truth_csv(args.truth)
    if len(truth) != data.shape[0] or np.any(np.abs(truth.t - data[:, 0]) > 1e-9):
        raise ParseError("IMU and truth files do not share timestamps")
    bank = _run_bank(data, cfg)
    base = run_zupt_ins(data, cfg.detector, cfg.noise, cfg.zupt_sigma_v, align=cfg.align)
    metrics = {
        "filter_bank": trajectory_metrics(bank, truth),
        "zupt_baseline": trajectory_metrics(base, truth),
        "settings": {"model": cfg.model, "gamma": float(args.gamma), "max_leaves": cfg.max_leaves, "samples": len(truth)},
    }
    out = Path(args.out_dir)
    mpath = out / Path(cfg.outputs.get("metrics", "metrics.json")).name
    ppath = out / Path(cfg.outputs.get("plot_data", "plot_data.csv")).name
    io.write_json(mpath, metrics)
    columns = (
        "t",
        "speed_truth",
        "speed_filter_bank",
        "speed_zupt_baseline",
        "height_truth",
        "height_filter_bank",
        "height_zupt_baseline",
        "mode_truth",
        "mode_filter_bank",
        "mode_zupt_baseline",
    )
    table = np.column_stack(
        [
            truth.t,
            np.linalg.norm(truth.v, axis=1),
            np.linalg.norm(bank.v, axis=1),
            np.linalg.norm(base.v, axis=1),
            truth.r[:, 2],
            bank.r[:, 2],
            base.r[:, 2],
            truth.mode,
            bank.map_mode,
            base.map_mode,
        ]
    )
    io.write_csv(ppath, columns, table)
    fb, zb = metrics["filter_bank"], metrics["zupt_baseline"]
    print(
        f"compare: filter bank horizontal {fb['final_horizontal_error']:.3f} m, vertical {fb['final_vertical_error']:.3f} m; "
        f"baseline horizontal {zb['final_horizontal_error']:.3f} m, vertical {zb['final_vertical_error']:.3f} m -> {mpath}, {ppath}"
    )
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jmnav", description="Jump Markov foot-mounted inertial navigation.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, model=True):
        p.add_argument("--config", help="JSON run configuration")
        if model:
            p.add_argument("--model", choices=io.MODELS, help="overrides the configured model")
            p.add_argument("--max-leaves", type=int, help="leaf budget; 0 disables pruning")

    p = sub.add_parser("simulate", help="write synthetic IMU and truth CSV files")
    p.add_argument("--profile", choices=PROFILES, default="walk")
    p.add_argument("--duration", type=float, default=60.0, help="seconds (default 60)")
    p.add_argument("--seed", type=int, default=0, help="noise and mode-chain seed (default 0)")
    p.add_argument("--noise-free", action="store_true", help="omit IMU noise")
    p.add_argument("--out-dir", default=".")
    common(p, model=False)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("run", help="run the filter bank over an IMU file")
    p.add_argument("imu")
    p.add_argument("--out", help="trajectory CSV (default trajectory.csv)")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("learn", help="fit the transition matrix")
    p.add_argument("imu", nargs="+")
    p.add_argument("--out", help="report JSON (default learn_report.json)")
    p.add_argument("--max-iter", type=int)
    common(p)
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("compare", help="filter bank against the stance-detector baseline")
    p.add_argument("imu")
    p.add_argument("truth")
    p.add_argument("--gamma", type=float, required=True, help="baseline detector threshold")
    p.add_argument("--out-dir", default=".")
    common(p)
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERICAL as exc:
        sample = getattr(exc, "sample", None)
        where = f" (sample {sample})" if sample is not None else ""
        print(f"numerical failure{where}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
