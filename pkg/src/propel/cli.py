"""Command line entry point: ``propel {train,project,eval,sandbox,verify}``.

Exit codes: 0 success, 2 configuration or parse error, 3 runtime abort.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import RunConfig
from .dsl import ParseError, load_program, pretty_print
from .env import make_env
from .errors import ConfigError, ContractError, PropelError
from .loop import load_checkpoint, propel_run
from .policy import MixedPolicy, mean_return, program_policy
from .project import probe_distance, project
from .sandbox import run_approx_pgd, run_sweep
from .verify import load_box, verify

log = logging.getLogger("propel")

EXIT_OK, EXIT_CONFIG, EXIT_ABORT = 0, 2, 3


class Abort(PropelError):
    pass


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", metavar="PATH", help="key=value config file")
    p.add_argument("--set", metavar="KEY=VALUE", action="append", default=[], dest="overrides",
                   help="override one config key (repeatable)")
    p.add_argument("--run-dir", metavar="PATH", help="output directory")
    p.add_argument("--workers", type=int, metavar="N", help="parallel evaluation workers")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="propel", parents=[common],
                                     description="Programmatic policy learning by update-and-project.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="run the update/project loop")
    p = sub.add_parser("project", parents=[common], help="project a saved mixed policy onto the program class")
    p.add_argument("--expert", metavar="RUN_DIR", help="run directory holding the expert checkpoint")
    p.add_argument("--iteration", type=int, help="checkpoint iteration of the expert")
    p = sub.add_parser("eval", parents=[common], help="evaluate a program file")
    p.add_argument("program")
    p.add_argument("--env", dest="env_name")
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--seed0", type=int, default=0, help="episodes use seeds seed0 .. seed0+episodes-1")
    sub.add_parser("sandbox", parents=[common], help="projected gradient descent with injected errors")
    p = sub.add_parser("verify", parents=[common], help="interval and Lipschitz certificates for a program")
    p.add_argument("program")
    p.add_argument("box")
    p.add_argument("--dt", type=float, help="control period (default: box file, else the config env)")
    return parser


def _config(args) -> RunConfig:
    overrides = list(args.overrides)
    if args.workers is not None:
        overrides.append(f"workers={args.workers}")
    return RunConfig.load(args.config, tuple(overrides))


def _program(path, obs_dim: int):
    try:
        return load_program(path, obs_dim)
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror or exc}") from exc


def _run_dir(args, default: str) -> Path:
    d = Path(args.run_dir or default)
    d.mkdir(parents=True, exist_ok=True)
    return d


def cmd_train(args) -> int:
    cfg = _config(args)
    env = cfg.env()
    pi0 = cfg.program(env)
    pcfg = cfg.propel_config()
    run_dir = _run_dir(args, "runs/train")
    (run_dir / "config.copy").write_text(cfg.dump(), encoding="utf-8")
    best, records = propel_run(env, pi0, pcfg, cfg.get("seed"), run_dir)
    if all(r.skipped for r in records[1:]):
        raise Abort("every update diverged; no iteration completed")
    last = records[-1]
    print(f"best_iteration={last.best_iteration} best_mean={last.best_mean!r} iterations={len(records) - 1}")
    print(pretty_print(best))
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config(args)
    env = make_env(args.env_name or cfg.get("env"), cfg.get("seed"))
    prog = _program(args.program, env.spec.obs_dim)
    if args.episodes < 1:
        raise ConfigError("--episodes must be >= 1")
    seeds = range(args.seed0, args.seed0 + args.episodes)
    m, s = mean_return(program_policy(prog, env.spec), env, seeds, workers=cfg.get("workers"))
    print(f"mean={m!r} std={s!r} n={args.episodes}")
    if args.run_dir:
        out = _run_dir(args, args.run_dir) / "eval.csv"
        out.write_text(f"# schema=1\nmean,std,n\n{m!r},{s!r},{args.episodes}\n", encoding="utf-8")
    return EXIT_OK


def cmd_sandbox(args) -> int:
    cfg = _config(args)
    md = cfg.md_config()
    run_dir = _run_dir(args, "runs/sandbox")
    (run_dir / "config.copy").write_text(cfg.dump(), encoding="utf-8")
    grid = cfg.sweep_grid()
    every = cfg.get("sandbox.every")
    if grid:
        for row in run_sweep(md, grid, run_dir, every):
            params = " ".join(f"{k}={row[k]!r}" for k in grid)
            print(f"{params} final_avg_regret={row['final_avg_regret_mean']!r} se={row['final_avg_regret_se']!r}")
        return EXIT_OK
    trace = run_approx_pgd(md)
    (run_dir / "trace.csv").write_text(trace.to_csv(every), encoding="utf-8")
    m, se = trace.final_regret()
    print(f"final_avg_regret={m!r} se={se!r} final_gap={trace.final_gap()!r}")
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg = _config(args)
    box, box_dt = load_box(args.box)
    dt = args.dt or box_dt or make_env(cfg.get("env")).spec.dt
    prog = _program(args.program, box.dim)
    report = verify(prog, box, dt)
    sys.stdout.write(report.render_text())
    if args.run_dir:
        (_run_dir(args, args.run_dir) / "verify.csv").write_text(report.to_csv(), encoding="utf-8")
    return EXIT_OK


def cmd_project(args) -> int:
    cfg = _config(args)
    env = cfg.env()
    expert_run = args.expert or cfg.get("project.expert_run")
    if not expert_run:
        raise ConfigError("no expert checkpoint: pass --expert or set project.expert_run")
    it = args.iteration if args.iteration is not None else cfg.get("project.expert_iteration")
    program, theta = load_checkpoint(expert_run, it, env.spec.obs_dim)
    expert = MixedPolicy(program, theta, cfg.get("update.lam"), env.spec)
    run_dir = _run_dir(args, "runs/project")
    (run_dir / "config.copy").write_text(cfg.dump(), encoding="utf-8")
    prog, metrics = project(expert, env, cfg.dagger_config(), cfg.get("seed"))
    (run_dir / "program.sexp").write_text(pretty_print(prog) + "\n", encoding="utf-8")
    (run_dir / "projection.csv").write_text(metrics.to_csv(), encoding="utf-8")
    (run_dir / "dataset.csv").write_text(metrics.dataset.to_csv(), encoding="utf-8")
    dist = probe_distance(prog, program, env.spec, n=cfg.get("project.probe_states"), seed=cfg.get("seed"))
    print(f"probe_distance={dist!r} heldout_mse={metrics.best_heldout_mse!r} round={metrics.best_round}")
    print(pretty_print(prog))
    return EXIT_OK


COMMANDS = {"train": cmd_train, "project": cmd_project, "eval": cmd_eval, "sandbox": cmd_sandbox,
            "verify": cmd_verify}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ParseError, ContractError) as exc:
        print(f"propel {args.command}: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - the CLI must never crash to the shell
        print(f"propel {args.command}: aborted: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
