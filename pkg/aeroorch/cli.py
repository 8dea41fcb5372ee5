import argparse
import logging
import os
import sys

from .allocate import Problem, check_constraints, check_structure, load_certificate, save_certificate
from .environment import realize
from .harness import RunRecord, aggregate, build_instance, emit_outputs, load_config, run_scenario
from .oracle import OracleLimits, oracle_solve
from .orchestrator import Orchestrator, PolicyKind, checkpoint_frame, replay_trace, run_episode, write_trace

log_levels = {
    "critical": logging.CRITICAL,
    "error": logging.ERROR,
    "warn": logging.WARNING,
    "warning": logging.WARNING,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}


def _overrides(args):
    return {
        "seeds": None if args.seed is None else [args.seed],
        "policies": None if getattr(args, "policy", None) is None else [args.policy],
        "scenario": getattr(args, "scenario", None),
        "horizon": args.frames,
        "out": args.out,
    }


def _problem(config):
    point = config.points[0]
    instance = build_instance(config, point)
    seed = config.seeds[0]
    realization = realize(instance, config.horizon, seed, config.arrival_rate, config.requests_at(point))
    return instance, Problem(instance, realization)


def cmd_run(args):
    config = load_config(args.config, **_overrides(args))
    rows = run_scenario(config)
    emit_outputs(rows, config.out, config)
    print(f"{len(rows)} rows written to {os.path.join(config.out, 'metrics.csv')}")
    return 0


def cmd_oracle(args):
    config = load_config(args.config, **_overrides(args))
    _, problem = _problem(config)
    result = oracle_solve(problem, config.alpha, OracleLimits(**config.oracle_limits))
    os.makedirs(config.out, exist_ok=True)
    path = os.path.join(config.out, "certificate.yaml")
    save_certificate(path, result.allocation, result.report, result.explored)
    print(
        f"objective {result.report.objective_value:.6f}, {result.report.accepted_count} accepted, "
        f"{result.explored} leaves explored; certificate at {path}"
    )
    return 0


def cmd_check(args):
    config = load_config(args.config, **_overrides(args))
    _, problem = _problem(config)
    allocation, _ = load_certificate(args.allocation)
    check_structure(allocation, problem)
    violations = check_constraints(allocation, problem)
    for v in violations:
        print(v)
    print(f"{len(violations)} violations")
    return 0 if not violations else 1


def cmd_train(args):
    config = load_config(args.config, **_overrides(args))
    instance = build_instance(config, config.points[0])
    episode = config.episode(PolicyKind.PERFECT, config.seeds[0], config.points[0])
    episode.progress = True
    orch = Orchestrator(instance, episode)
    checkpoint = os.path.join(config.out, "checkpoint")
    start = checkpoint_frame(checkpoint)
    if start is not None:
        # a finished episode only hands over its agents
        try:
            orch.restore(checkpoint, world=start < orch.frames)
        except ValueError as e:
            logging.warning(f"{e}; starting a new episode with the saved agents")
            orch.restore(checkpoint, world=False)
        logging.info(f"resumed from {checkpoint} at frame {orch.frame}")

    def on_frame(o):
        if args.checkpoint_every > 0 and o.frame % args.checkpoint_every == 0 and o.frame < o.frames:
            o.save(checkpoint)

    result = run_episode(instance, episode, orchestrator=orch, on_frame=on_frame)
    orch.save(checkpoint)
    write_trace(os.path.join(config.out, "train.ndjson"), instance, episode, result.trace)
    m = result.metrics
    print(
        f"acceptance {m['acceptance_pct']:.1f}%, energy/request {m['energy_per_request']:.2f}, "
        f"mean R_HL {m['reward']:.4f}; checkpoint at {checkpoint}"
    )
    return 0


def cmd_replay(args):
    result, mismatched = replay_trace(args.trace)
    if args.out is not None:
        config = result.orchestrator.config
        record = RunRecord(0, config.policy.value, result.orchestrator.seed, result.metrics)
        emit_outputs(aggregate([record]), args.out)
    if mismatched:
        print(f"trace diverges at frames {mismatched[:10]}")
        return 1
    print(f"{len(result.trace)} frames reproduced")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="aeroorch", description="UAV-assisted edge orchestration simulator")
    parser.add_argument("--log-level", choices=sorted(log_levels), default="warning")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="YAML run configuration")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--frames", type=int, default=None)
        return p

    run = common(sub.add_parser("run", help="execute a scenario"))
    run.add_argument("--policy", choices=[k.value for k in PolicyKind], default=None)
    run.add_argument("--scenario", default=None)
    run.set_defaults(fn=cmd_run)
    common(sub.add_parser("oracle", help="exact solve of a micro instance")).set_defaults(fn=cmd_oracle)
    check = common(sub.add_parser("check", help="validate an allocation against an instance"))
    check.add_argument("--allocation", required=True)
    check.set_defaults(fn=cmd_check)
    train = common(sub.add_parser("train", help="train the agents with checkpointing"))
    train.add_argument("--checkpoint-every", type=int, default=50, help="frames between checkpoints, 0 for the end only")
    train.set_defaults(fn=cmd_train)
    replay = sub.add_parser("replay", help="re-run a saved trace")
    replay.add_argument("--trace", required=True)
    replay.add_argument("--out", default=None)
    replay.set_defaults(fn=cmd_replay)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code
    logging.getLogger().setLevel(log_levels[args.log_level])
    try:
        return args.fn(args)
    except Exception as e:
        print(f"aeroorch: error: {e}", file=sys.stderr)
        logging.debug("command failed", exc_info=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
