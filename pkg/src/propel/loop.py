"""The outer loop: alternate the neural UPDATE and the imitation PROJECT steps.

Run directory layout::

    run_dir/
      config.copy            # written by the CLI
      metrics.csv            # one row per iteration t = 1..T
      timings.csv            # wall time per iteration, kept out of metrics.csv
      iter_000/{program.sexp, metrics.csv}   # the initial program and its evaluation
      iter_NNN/{program.sexp, theta.nnp, metrics.csv, update.csv, projection.csv}

``metrics.csv`` columns, in order: iteration, program_mean, program_std,
mixed_mean, mixed_std, heldout_mse, best_mean, best_iteration, skipped.
"""
from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .dsl import ClassConfig, Program, load_program, pretty_print, validate
from .env import Env
from .errors import CheckpointError, ContractError
from .neural import NeuralParams, UpdateConfig, load_params, save_params, update_f
from .policy import mean_return, program_policy
from .project import DaggerConfig, project

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("iteration", "program_mean", "program_std", "mixed_mean", "mixed_std", "heldout_mse",
                  "best_mean", "best_iteration", "skipped")


@dataclass(frozen=True)
class PropelConfig:
    iterations: int = 5
    update: UpdateConfig = field(default_factory=UpdateConfig)
    dagger: DaggerConfig = field(default_factory=DaggerConfig)
    eval_seeds: tuple[int, ...] = tuple(range(10000, 10010))
    warm_start: bool = True
    workers: int = 1

    def __post_init__(self):
        if self.iterations < 1:
            raise ContractError("iterations must be >= 1")
        if not self.eval_seeds:
            raise ContractError("need at least one evaluation seed")


@dataclass(eq=False)
class IterationRecord:
    iteration: int
    program_mean: float
    program_std: float
    mixed_mean: float = math.nan
    mixed_std: float = math.nan
    heldout_mse: float = math.nan
    best_mean: float = math.nan
    best_iteration: int = 0
    skipped: bool = False
    wall_time: float = 0.0  # reported in timings.csv, not part of equality

    def row(self) -> list:
        return [self.iteration, repr(self.program_mean), repr(self.program_std), repr(self.mixed_mean),
                repr(self.mixed_std), repr(self.heldout_mse), repr(self.best_mean), self.best_iteration,
                int(self.skipped)]

    def __eq__(self, other):
        # compared through the serialized row so NaN fields (iteration 0) compare equal
        if not isinstance(other, IterationRecord):
            return NotImplemented
        return self.row() == other.row()

    @classmethod
    def from_row(cls, row: dict) -> "IterationRecord":
        return cls(int(row["iteration"]), float(row["program_mean"]), float(row["program_std"]),
                   float(row["mixed_mean"]), float(row["mixed_std"]), float(row["heldout_mse"]),
                   float(row["best_mean"]), int(row["best_iteration"]), bool(int(row["skipped"])))


def _csv_text(rows: list[list]) -> str:
    buf = io.StringIO()
    buf.write("# schema=1\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    w.writerows(rows)
    return buf.getvalue()


def read_metrics(path) -> list[IterationRecord]:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise CheckpointError(f"{path}: {exc.strerror or exc}") from exc
    body = [ln for ln in lines if not ln.startswith("#")]
    try:
        return [IterationRecord.from_row(r) for r in csv.DictReader(body)]
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: malformed metrics file ({exc})") from exc


def iter_dir(run_dir, t: int) -> Path:
    return Path(run_dir) / f"iter_{t:03d}"


def save_checkpoint(run_dir, t: int, program: Program, theta: Optional[NeuralParams]) -> Path:
    d = iter_dir(run_dir, t)
    d.mkdir(parents=True, exist_ok=True)
    (d / "program.sexp").write_text(pretty_print(program) + "\n", encoding="utf-8")
    if theta is not None:
        save_params(theta, d / "theta.nnp")
    return d


def load_checkpoint(run_dir, t: int, obs_dim: Optional[int] = None) -> tuple[Program, Optional[NeuralParams]]:
    """Program and neural parameters saved after iteration ``t`` (``theta`` is None for t=0)."""
    d = iter_dir(run_dir, t)
    prog_path = d / "program.sexp"
    if not prog_path.is_file():
        raise CheckpointError(f"{prog_path}: no checkpoint for iteration {t}")
    try:
        program = load_program(prog_path, obs_dim)
    except ValueError as exc:
        raise CheckpointError(f"{prog_path}: {exc}") from exc
    theta_path = d / "theta.nnp"
    theta = load_params(theta_path) if theta_path.exists() else None
    if t > 0 and theta is None:
        raise CheckpointError(f"{theta_path}: missing neural parameters")
    return program, theta


def propel_run(env: Env, pi0: Program, cfg: PropelConfig, seed: int, run_dir=None,
               resume_from: Optional[int] = None) -> tuple[Program, list[IterationRecord]]:
    """Alternate ``update_f`` and ``project`` for ``cfg.iterations`` rounds.

    Iteration ``t`` seeds the update with ``seed + 1000 t`` and the projection
    with ``seed + 1000 t + 500``. The returned program maximizes mean
    evaluation return over the initial and all projected programs, earliest
    first on ties. With ``resume_from=t`` the loop restarts after the
    checkpoint of iteration ``t`` in ``run_dir``.
    """
    spec = env.spec
    klass: ClassConfig = cfg.dagger.fit
    validate(pi0, spec.obs_dim, klass)
    run_dir = Path(run_dir) if run_dir is not None else None

    if resume_from is None:
        m0, s0 = mean_return(program_policy(pi0, spec), env, cfg.eval_seeds, workers=cfg.workers)
        records = [IterationRecord(0, m0, s0, best_mean=m0, best_iteration=0)]
        programs = {0: pi0}
        prog, theta, start = pi0, None, 1
        if run_dir is not None:
            run_dir.mkdir(parents=True, exist_ok=True)
            d = save_checkpoint(run_dir, 0, pi0, None)
            (d / "metrics.csv").write_text(_csv_text([records[0].row()]), encoding="utf-8")
            _write_metrics(run_dir, records)
    else:
        if run_dir is None:
            raise ContractError("resuming needs a run directory")
        records = read_metrics(iter_dir(run_dir, 0) / "metrics.csv")
        records += [r for r in read_metrics(run_dir / "metrics.csv") if 0 < r.iteration <= resume_from]
        if len(records) != resume_from + 1:
            raise CheckpointError(f"{run_dir / 'metrics.csv'}: no record for iteration {resume_from}")
        prog, theta = load_checkpoint(run_dir, resume_from, spec.obs_dim)
        best_t = records[-1].best_iteration
        programs = {best_t: load_checkpoint(run_dir, best_t, spec.obs_dim)[0]}
        start = resume_from + 1

    best_t = records[-1].best_iteration
    best_mean = records[-1].best_mean
    for t in range(start, cfg.iterations + 1):
        t0 = time.perf_counter()
        f, um = update_f(prog, theta if cfg.warm_start else None, env, cfg.update, seed + 1000 * t)
        rec = IterationRecord(t, math.nan, math.nan)
        if um.diverged:
            log.warning("iteration %d: update diverged (%s); keeping the previous program", t, um.message)
            rec.skipped = True
            new_prog, pm = prog, None
        else:
            new_prog, pm = project(f, env, cfg.dagger, seed + 1000 * t + 500, template=prog)
            validate(new_prog, spec.obs_dim, klass)
            rec.heldout_mse = pm.best_heldout_mse
        theta = f.theta  # last finite actor, even when the update diverged
        rec.program_mean, rec.program_std = mean_return(program_policy(new_prog, spec), env, cfg.eval_seeds,
                                                           workers=cfg.workers)
        rec.mixed_mean, rec.mixed_std = mean_return(f, env, cfg.eval_seeds, workers=cfg.workers)
        if rec.program_mean > best_mean:
            best_mean, best_t = rec.program_mean, t
        programs[t] = new_prog
        rec.best_mean, rec.best_iteration = best_mean, best_t
        rec.wall_time = time.perf_counter() - t0
        records.append(rec)
        log.info("iteration %d: program %.2f +- %.2f, mixed %.2f +- %.2f, best %.2f (iter %d)", t,
                 rec.program_mean, rec.program_std, rec.mixed_mean, rec.mixed_std, best_mean, best_t)
        prog = new_prog
        if run_dir is not None:
            d = save_checkpoint(run_dir, t, new_prog, theta)
            (d / "metrics.csv").write_text(_csv_text([rec.row()]), encoding="utf-8")
            (d / "update.csv").write_text(um.to_csv(), encoding="utf-8")
            if pm is not None:
                (d / "projection.csv").write_text(pm.to_csv(), encoding="utf-8")
            _write_metrics(run_dir, records)
    return programs[best_t], records


def _write_metrics(run_dir: Path, records: list[IterationRecord]) -> None:
    (run_dir / "metrics.csv").write_text(_csv_text([r.row() for r in records[1:]]), encoding="utf-8")
    timing = "# schema=1\niteration,wall_time\n" + "".join(f"{r.iteration},{r.wall_time!r}\n" for r in records)
    (run_dir / "timings.csv").write_text(timing, encoding="utf-8")
