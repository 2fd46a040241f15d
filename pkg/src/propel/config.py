"""Flat ``key=value`` run configuration with typed views for each component.

Keys use section prefixes (``update.actor_lr=1e-4``). Unknown keys are
rejected. :meth:`RunConfig.dump` writes every key, defaults included, so a
run directory's ``config.copy`` reproduces the run when fed back.
"""
from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable, Optional

from .dsl import NODE_NAMES, ClassConfig, Program, load_program
from .env import Env, load_track, make_env
from .errors import ConfigError
from .loop import PropelConfig
from .neural import UpdateConfig
from .project import DaggerConfig
from .sandbox import MdConfig


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in s.split(",") if x.strip())


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.split(",") if x.strip())


def _matrix(s: str):
    if not s.strip():
        return None
    return tuple(_floats(row) for row in s.split(";"))


_str = str

# key -> (parser, default text)
SCHEMA: dict[str, tuple[Callable, str]] = {
    "env": (_str, "pendulum"),
    "seed": (int, "0"),
    "iterations": (int, "5"),
    "program": (_str, ""),
    "warm_start": (_bool, "true"),
    "workers": (int, "1"),
    "track.file": (_str, ""),
    "eval.episodes": (int, "10"),
    "eval.seed0": (int, "10000"),
    "update.steps": (int, "15000"),
    "update.actor_lr": (float, "0.001"),
    "update.critic_lr": (float, "0.001"),
    "update.gamma": (float, "0.99"),
    "update.tau": (float, "0.005"),
    "update.noise": (float, "0.1"),
    "update.batch": (int, "64"),
    "update.warmup": (int, "1000"),
    "update.hidden": (_ints, "64,64"),
    "update.buffer": (int, "100000"),
    "update.lam": (float, "1.0"),
    "dagger.rounds": (int, "3"),
    "dagger.episodes": (int, "4"),
    "dagger.horizon": (int, "0"),
    "dagger.betas": (_floats, ""),
    "dagger.heldout_frac": (float, "0.2"),
    "dagger.eval_episodes": (int, "0"),
    "class.kind": (_str, "pid-dsl"),
    "class.nodes": (_str, ",".join(sorted(NODE_NAMES))),
    "class.max_depth": (int, "4"),
    "class.affine_leaves": (_bool, "false"),
    "class.min_leaf": (int, "1"),
    "class.features": (_ints, ""),
    "project.expert_run": (_str, ""),
    "project.expert_iteration": (int, "1"),
    "project.probe_states": (int, "1000"),
    "sandbox.dim": (int, "2"),
    "sandbox.iterations": (int, "10000"),
    "sandbox.step": (_str, "constant"),
    "sandbox.step_c": (float, "0.5"),
    "sandbox.box_lo": (float, "-1.0"),
    "sandbox.box_hi": (float, "1.0"),
    "sandbox.target": (_floats, "0.5,-0.3"),
    "sandbox.scale": (_matrix, ""),
    "sandbox.bias": (float, "0.0"),
    "sandbox.noise": (float, "0.0"),
    "sandbox.proj_error": (float, "0.0"),
    "sandbox.x0": (_floats, ""),
    "sandbox.seed": (int, "0"),
    "sandbox.repeats": (int, "32"),
    "sandbox.every": (int, "1"),
    "sandbox.sweep.bias": (_floats, ""),
    "sandbox.sweep.noise": (_floats, ""),
    "sandbox.sweep.proj_error": (_floats, ""),
    "sandbox.sweep.step_c": (_floats, ""),
}


def parse_lines(text: str, source: str = "<config>") -> dict[str, str]:
    out = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected key=value, got {line!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{n}: unknown config key {key!r}")
        out[key] = value
    return out


@dataclass
class RunConfig:
    raw: dict[str, str]

    @classmethod
    def load(cls, path: Optional[str] = None, overrides: tuple[str, ...] = ()) -> "RunConfig":
        raw = {k: d for k, (_, d) in SCHEMA.items()}
        if path:
            try:
                text = Path(path).read_text(encoding="utf-8")
            except OSError as exc:
                raise ConfigError(f"{path}: {exc.strerror or exc}") from exc
            raw.update(parse_lines(text, str(path)))
        for item in overrides:
            raw.update(parse_lines(item, "--set"))
        cfg = cls(raw)
        for key in raw:
            cfg.get(key)
        return cfg

    def get(self, key: str):
        parser, _ = SCHEMA[key]
        try:
            return parser(self.raw[key])
        except ValueError as exc:
            raise ConfigError(f"config key {key!r}: {exc}") from None

    def dump(self) -> str:
        return "".join(f"{k}={self.raw[k]}\n" for k in sorted(self.raw))

    def env(self) -> Env:
        name = self.get("env")
        track = self.get("track.file")
        if track and name == "track":
            return make_env(name, self.get("seed"), track=load_track(track))
        return make_env(name, self.get("seed"))

    def program(self, env: Env) -> Program:
        path = self.get("program") or str(prior_path(env.spec.name))
        return load_program(path, env.spec.obs_dim, self.class_config())

    def class_config(self) -> ClassConfig:
        feats = self.get("class.features")
        nodes = frozenset(x.strip() for x in self.get("class.nodes").split(",") if x.strip())
        return self._build(ClassConfig, kind=self.get("class.kind"), nodes=nodes,
                           max_depth=self.get("class.max_depth"), features=feats or None,
                           affine_leaves=self.get("class.affine_leaves"), min_leaf=self.get("class.min_leaf"))

    def update_config(self) -> UpdateConfig:
        g = self.get
        return self._build(UpdateConfig, steps=g("update.steps"), actor_lr=g("update.actor_lr"),
                           critic_lr=g("update.critic_lr"), gamma=g("update.gamma"), tau=g("update.tau"),
                           noise=g("update.noise"), batch=g("update.batch"), warmup=g("update.warmup"),
                           hidden=g("update.hidden"), buffer=g("update.buffer"), lam=g("update.lam"))

    def eval_seeds(self) -> tuple[int, ...]:
        s0 = self.get("eval.seed0")
        return tuple(range(s0, s0 + self.get("eval.episodes")))

    def dagger_config(self) -> DaggerConfig:
        g = self.get
        n_eval = g("dagger.eval_episodes")
        return self._build(DaggerConfig, rounds=g("dagger.rounds"), episodes=g("dagger.episodes"),
                           horizon=g("dagger.horizon") or None, betas=g("dagger.betas") or None,
                           fit=self.class_config(), heldout_frac=g("dagger.heldout_frac"),
                           eval_seeds=self.eval_seeds()[:n_eval])

    def propel_config(self) -> PropelConfig:
        return self._build(PropelConfig, iterations=self.get("iterations"), update=self.update_config(),
                           dagger=self.dagger_config(), eval_seeds=self.eval_seeds(),
                           warm_start=self.get("warm_start"), workers=self.get("workers"))

    def md_config(self) -> MdConfig:
        g = self.get
        return self._build(MdConfig, dim=g("sandbox.dim"), iterations=g("sandbox.iterations"),
                           step=g("sandbox.step"), step_c=g("sandbox.step_c"), box_lo=g("sandbox.box_lo"),
                           box_hi=g("sandbox.box_hi"), target=g("sandbox.target"), scale=g("sandbox.scale"),
                           bias=g("sandbox.bias"), noise=g("sandbox.noise"), proj_error=g("sandbox.proj_error"),
                           x0=g("sandbox.x0") or None, seed=g("sandbox.seed"), repeats=g("sandbox.repeats"))

    def sweep_grid(self) -> dict[str, tuple[float, ...]]:
        return {k.split(".")[-1]: self.get(k) for k in sorted(SCHEMA)
                if k.startswith("sandbox.sweep.") and self.get(k)}

    @staticmethod
    def _build(cls, **kw):
        try:
            return cls(**kw)
        except ValueError as exc:
            raise ConfigError(f"invalid {cls.__name__}: {exc}") from None


def prior_path(env_name: str) -> Path:
    p = resources.files("propel") / "priors" / f"{env_name}.sexp"
    if not p.is_file():
        raise ConfigError(f"no shipped prior program for environment {env_name!r}")
    return Path(str(p))
