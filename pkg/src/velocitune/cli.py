"""Command-line entry points.

    velocitune fit      --config cfg.json --checkpoints ckpts.csv
    velocitune simulate --config cfg.json [--policy dbl] [--out traj.csv]
    velocitune compare  --config cfg.json --policy velocitune --policy static
    velocitune serve    --config cfg.json [--transport stdio|socket]

`fit` fits the data scaling law per domain from a `domain,tokens,loss` CSV
and reports extrapolated target losses. `simulate` runs the full pipeline
(proxy run, fit, velocity-guided training) on the configured dynamics and
writes the trajectory CSV. `compare` runs several policies under a shared
seed and budget. `serve` answers line-delimited JSON requests so an external
training loop can drive the scheduler (see service module docstring).

All stdout report numbers use 6 significant digits; CSV exports keep full
precision.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

from . import __version__
from .checkpoint import load_checkpoint, save_resume_point
from .config import RunConfig, initial_weights_for, load_config
from .errors import VelocituneError
from .scaling import fit_data_scaling, format_fit_report, predict_loss, read_checkpoint_csv
from .scheduler import POLICY_KINDS
from .service import ServiceSession, serve_socket, serve_stdio
from .sim import (
    compare_policies,
    estimate_targets,
    format_comparison_report,
    initial_losses,
    run_training,
    trajectory_to_csv,
)


def _target_tokens_for(config: RunConfig, domain: str) -> float:
    """Token count at which a domain's target loss is predicted (full dataset)."""
    dataset = float(config.domains.total_tokens)
    if config.token_axis == "total" or domain not in config.domains.names:
        return dataset
    weights = initial_weights_for(config)
    return dataset * weights.values[config.domains.index(domain)]


def cmd_fit(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    series_by_domain = read_checkpoint_csv(args.checkpoints)
    domains = list(series_by_domain)
    fits = [fit_data_scaling(series_by_domain[d], config.fit_options) for d in domains]
    full_tokens = [_target_tokens_for(config, d) for d in domains]
    targets = [predict_loss(fit, toks) for fit, toks in zip(fits, full_tokens)]
    report = format_fit_report(domains, fits, targets, full_tokens)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(report)
    sys.stdout.write(report)
    return 0


def _prepared_run_inputs(config: RunConfig):
    """Init losses plus predicted targets when the policy needs them."""
    params = config.require_dynamics()
    init = initial_losses(params)
    targets = None
    if config.policy.needs_targets:
        estimate = estimate_targets(
            params,
            config.domains,
            batch_tokens=config.batch_tokens,
            proxy_fraction=config.proxy_fraction,
            proxy_eval_interval=config.proxy_eval_interval or config.update_interval,
            seed=config.seed,
            sequence_length=config.sequence_length,
            weights=initial_weights_for(config),
            fit_options=config.fit_options,
            deterministic_allocation=config.deterministic_allocation,
            token_axis=config.token_axis,
        )
        targets = estimate.targets
    return params, init, targets


def cmd_simulate(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    if args.policy:
        config = config.with_policy_kind(args.policy)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    params = config.require_dynamics()

    if args.resume:
        point = load_checkpoint(args.resume).resume_point()
        result = run_training(
            params,
            config.domains,
            point.scheduler.policy,
            total_tokens=config.total_tokens,
            batch_tokens=config.batch_tokens,
            update_interval=config.update_interval,
            seed=config.seed,
            sequence_length=config.sequence_length,
            deterministic_allocation=config.deterministic_allocation,
            stop_after_step=args.checkpoint_at,
            resume=point,
        )
    else:
        params, init, targets = _prepared_run_inputs(config)
        result = run_training(
            params,
            config.domains,
            config.policy,
            total_tokens=config.total_tokens,
            batch_tokens=config.batch_tokens,
            update_interval=config.update_interval,
            seed=config.seed,
            sequence_length=config.sequence_length,
            initial_weights=initial_weights_for(config),
            init_losses=init,
            target_losses=targets,
            deterministic_allocation=config.deterministic_allocation,
            stop_after_step=args.checkpoint_at,
        )

    csv_text = trajectory_to_csv(result.trajectory)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(csv_text)
    else:
        sys.stdout.write(csv_text)

    if result.resume_point is not None:
        if not args.checkpoint_out:
            print("error: --checkpoint-at needs --checkpoint-out", file=sys.stderr)
            return 1
        save_resume_point(args.checkpoint_out, result.resume_point)
        if args.out:
            print(f"checkpointed at step {result.resume_point.step} -> {args.checkpoint_out}")
        return 0

    if args.out:
        print(f"steps: {result.total_steps}")
        print("domains: " + ", ".join(config.domains.names))
        print("init_losses: " + ", ".join(f"{v:.6g}" for v in result.init_losses.values))
        if result.target_losses is not None:
            print(
                "target_losses: "
                + ", ".join(f"{v:.6g}" for v in result.target_losses.values)
            )
        assert result.final_losses is not None
        print("final_losses: " + ", ".join(f"{v:.6g}" for v in result.final_losses.values))
        print(
            "final_weights: "
            + ", ".join(f"{v:.6g}" for v in result.trajectory.rows[-1].weights.values)
        )
        print("consumed_tokens: " + ", ".join(str(c) for c in result.consumed_tokens))
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    kinds = args.policy or ["velocitune", "dbl", "static"]
    policies = [config.with_policy_kind(kind).policy for kind in kinds]
    report = compare_policies(
        config.require_dynamics(),
        config.domains,
        policies,
        total_tokens=config.total_tokens,
        batch_tokens=config.batch_tokens,
        update_interval=config.update_interval,
        seed=config.seed,
        sequence_length=config.sequence_length,
        proxy_fraction=config.proxy_fraction,
        proxy_eval_interval=config.proxy_eval_interval,
        initial_weights=initial_weights_for(config),
        fit_options=config.fit_options,
        deterministic_allocation=config.deterministic_allocation,
        token_axis=config.token_axis,
        stabilization_epsilon=config.stabilization_epsilon,
    )
    text = format_comparison_report(report)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    sys.stdout.write(text)
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    if args.policy:
        config = config.with_policy_kind(args.policy)
    state = None
    if args.resume:
        state = load_checkpoint(args.resume).scheduler

    def make_session() -> ServiceSession:
        return ServiceSession(
            policy=config.policy, update_interval=config.update_interval, state=state
        )

    if args.transport == "stdio":
        serve_stdio(make_session())
    else:
        if not args.socket_path:
            print("error: --transport socket needs --socket-path", file=sys.stderr)
            return 1
        serve_socket(make_session, args.socket_path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="velocitune", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"velocitune {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit the scaling law from a checkpoint CSV")
    p_fit.add_argument("--config", required=True)
    p_fit.add_argument("--checkpoints", required=True, help="CSV with header domain,tokens,loss")
    p_fit.add_argument("--out", help="also write the report to this file")
    p_fit.set_defaults(func=cmd_fit)

    p_sim = sub.add_parser("simulate", help="run the simulated training pipeline")
    p_sim.add_argument("--config", required=True)
    p_sim.add_argument("--policy", choices=POLICY_KINDS)
    p_sim.add_argument("--seed", type=int)
    p_sim.add_argument("--out", help="trajectory CSV path (stdout when omitted)")
    p_sim.add_argument("--checkpoint-at", type=int, help="stop at this evaluation step")
    p_sim.add_argument("--checkpoint-out", help="checkpoint file for --checkpoint-at")
    p_sim.add_argument("--resume", help="continue from a checkpoint file")
    p_sim.set_defaults(func=cmd_simulate)

    p_cmp = sub.add_parser("compare", help="run several policies under one budget")
    p_cmp.add_argument("--config", required=True)
    p_cmp.add_argument("--policy", action="append", choices=POLICY_KINDS)
    p_cmp.add_argument("--seed", type=int)
    p_cmp.add_argument("--out", help="also write the report to this file")
    p_cmp.set_defaults(func=cmd_compare)

    p_srv = sub.add_parser("serve", help="answer scheduler requests over a transport")
    p_srv.add_argument("--config", required=True)
    p_srv.add_argument("--policy", choices=POLICY_KINDS)
    p_srv.add_argument("--transport", choices=("stdio", "socket"), default="stdio")
    p_srv.add_argument("--socket-path")
    p_srv.add_argument("--resume", help="start from a checkpointed scheduler state")
    p_srv.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except VelocituneError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except BrokenPipeError:
        return 1


if __name__ == "__main__":
    sys.exit(main())
