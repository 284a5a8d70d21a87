"""Command-line front end.

Verbs: ``run``, ``adapt``, ``stats``, ``models``, ``validate``. Errors are
printed as one line ``error: <ErrorClass>: <message>`` and exit with 1.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .adaptation import AdaptParams, user_adapt
from .geometry import CapsuleSet
from .kinematics import Pose, bundled_models, forward_kinematics, load_model
from .perception import DEFAULT_WINDOW, keypoint_stats, load_skeleton_trajectory
from .sim import ConfigError, bundled_scenarios, load_scenario, run_scenario, scenario_path

SCENARIO_HELP = """\
Scenario files are JSON objects with keys: name, robot (bundled id or model
file), pipeline (preplanned-jerk | feedback-accel), skeleton (JSON Lines path
relative to the scenario file), poses.object {p, quat}, optional
poses.object_home / poses.home, events [{kind, t}], rates {command, safety,
perception}, safety {d_min, k_v, k_a, eta}, goal_adaptation {scale, u_safe},
adaptation {step, orientation_weight, max_iters}, delivery {keypoint, offset,
quat}, object {length, radius}, body, window, pd_gains {kp, kd},
completion_tolerance, duration, rng_seed. Bundled scenarios can be named
directly: """


class CliError(Exception):
    pass


def _fmt(v) -> str:
    return "[" + ", ".join(f"{x:.6f}" for x in np.asarray(v, dtype=float)) + "]"


def _summary_line(log) -> str:
    s = log.summary()
    stages = " ".join(f"{k}={v:.2f}s" for k, v in s["stage_durations"].items())
    status = "complete" if s["complete"] else f"incomplete ({s['error']})"
    md = s["min_distance"]
    md_txt = f"{md:.4f} m" if md is not None else "n/a"
    return f"{s['name']}: min distance {md_txt} (d_min {s['d_min']:.3f} m) | {stages} | {status}"


def _run_one(path: str, out: str, seed: int | None) -> tuple[str, bool, str | None]:
    cfg = load_scenario(path)
    if seed is not None:
        cfg = cfg.with_seed(seed)
    log = run_scenario(cfg)
    log.write(out)
    return _summary_line(log), log.complete, log.error


def cmd_run(args) -> int:
    target = Path(args.scenario)
    if target.is_dir():
        paths = sorted(str(p) for p in target.glob("*.json"))
        if not paths:
            raise ConfigError(f"no scenario files in {target}")
    else:
        paths = [str(scenario_path(args.scenario))]
    if args.jobs > 1 and len(paths) > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            results = list(pool.map(_run_one, paths, [args.out] * len(paths), [args.seed] * len(paths)))
    else:
        results = [_run_one(p, args.out, args.seed) for p in paths]
    failed = None
    for line, complete, error in results:
        print(line)
        if not complete and failed is None:
            failed = error
    if failed:
        raise CliError(f"run aborted: {failed}")
    return 0


def cmd_adapt(args) -> int:
    env = CapsuleSet()
    robot, goal = args.model, None
    if args.env:
        path = Path(args.env)
        if not path.is_file():
            raise CliError(f"env file not found: {path}")
        data = json.loads(path.read_text())
        env = CapsuleSet.from_dict(data)
        robot = robot or data.get("robot")
        goal = data.get("goal")
    if args.goal is not None:
        goal = {"p": args.goal, "quat": args.quat or (goal or {}).get("quat")}
    if robot is None:
        raise CliError("no robot model given (use --model or an env file with 'robot')")
    if goal is None:
        raise CliError("no goal pose given (use --goal or an env file with 'goal')")
    model = load_model(robot)
    quat = goal.get("quat") or forward_kinematics(model, model.home_q)[0].quat
    x_G = Pose(goal["p"], quat)
    params = AdaptParams(step=args.step, orientation_weight=args.weight, max_iters=args.iters, rng_seed=args.seed)
    t0 = time.perf_counter()
    res = user_adapt(model, x_G, env, params)
    wall = time.perf_counter() - t0
    print(f"model     {model.name}")
    print(f"q_G       {_fmt(res.q_G)}")
    print(f"q_g       {_fmt(res.q_g)}")
    if res.flag == "no_obstacles":
        print("no obstacles; seed returned")
    elif res.flag == "no_null_space":
        print("no position null space; seed returned")
    else:
        print(f"d before  {res.d_seed:.6f} m")
        print(f"d after   {res.d:.6f} m")
    print(f"V         {res.V:.6f} (seed {res.V_seed:.6f})")
    print(f"e_omega   {res.e_omega:.6f} rad")
    print(f"accepted  {res.accepted}/{res.iters_used}")
    print(f"wall time {wall:.3f} s")
    return 0


def cmd_stats(args) -> int:
    path = Path(args.trajectory)
    if not path.is_file():
        raise CliError(f"trajectory not found: {path}")
    frames = load_skeleton_trajectory(path)
    if args.at is not None:
        frames = [f for f in frames if f.t <= args.at]
    unc, mean = keypoint_stats(frames, args.keypoint, args.window)
    print(f"keypoint {args.keypoint}, last {unc.window} frames")
    print(f"{'axis':<5}{'sigma_m':>12}{'sigma_cm':>10}{'mean_m':>12}")
    for axis, s, m in zip("xyz", unc.sigma, mean):
        print(f"{axis:<5}{s:>12.6f}{s * 100:>10.2f}{m:>12.6f}")
    return 0


def cmd_models(args) -> int:
    for name in bundled_models():
        m = load_model(name)
        pose, _ = forward_kinematics(m, m.home_q)
        print(f"{name}: {m.dof} dof, {len(m.link_capsules)} capsules, home tool at {_fmt(pose.p)}")
    print("scenarios: " + ", ".join(bundled_scenarios()))
    return 0


def cmd_validate(args) -> int:
    cfg = load_scenario(args.scenario).validate()
    print(f"ok: {cfg.name} ({cfg.pipeline}, {cfg.robot}, {len(cfg.events)} events, "
          f"{cfg.safety_rate:g}/{cfg.command_rate:g}/{cfg.perception_rate:g} Hz)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="safehandover", description="Simulated safe human-robot handover.")
    sub = p.add_subparsers(dest="verb", required=True)

    r = sub.add_parser("run", help="simulate a scenario and write its run log",
                       epilog=SCENARIO_HELP + ", ".join(bundled_scenarios()))
    r.add_argument("scenario", help="scenario file, bundled scenario name, or directory of scenarios")
    r.add_argument("--out", default="runs", help="output directory (default: runs)")
    r.add_argument("--seed", type=int, default=None, help="override the scenario rng_seed")
    r.add_argument("--jobs", type=int, default=1, help="parallel runs for a scenario directory")
    r.set_defaults(func=cmd_run)

    a = sub.add_parser("adapt", help="solve one delivery-configuration adaptation",
                       epilog="env files hold {robot, goal {p, quat}, capsules [{label, a, b, radius}]}")
    a.add_argument("--model", help="bundled model id or model file")
    a.add_argument("--goal", type=float, nargs=3, metavar=("X", "Y", "Z"))
    a.add_argument("--quat", type=float, nargs=4, metavar=("W", "X", "Y", "Z"))
    a.add_argument("--env", help="obstacle capsule file")
    a.add_argument("--step", type=float, default=0.05)
    a.add_argument("--weight", type=float, default=1.0, help="orientation weight")
    a.add_argument("--iters", type=int, default=300)
    a.add_argument("--seed", type=int, default=0)
    a.set_defaults(func=cmd_adapt)

    s = sub.add_parser("stats", help="per-axis keypoint standard deviation over a frame window")
    s.add_argument("trajectory", help="skeleton JSON Lines file")
    s.add_argument("--keypoint", default="right_wrist")
    s.add_argument("--window", type=int, default=DEFAULT_WINDOW)
    s.add_argument("--at", type=float, default=None, help="only use frames up to this time")
    s.set_defaults(func=cmd_stats)

    m = sub.add_parser("models", help="list bundled robot models and scenarios")
    m.set_defaults(func=cmd_models)

    v = sub.add_parser("validate", help="check a scenario file without simulating")
    v.add_argument("scenario")
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # every failure becomes one greppable line
        msg = " ".join(str(exc).split()) or "failed"
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
