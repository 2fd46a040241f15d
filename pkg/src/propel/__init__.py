"""Programmatic policies learned by alternating neural updates and imitation projections."""

from .dsl import Program, ProgState, eval_step, parse, pretty_print
from .env import make_env
from .loop import PropelConfig, propel_run
from .neural import UpdateConfig, update_f
from .policy import MixedPolicy, mean_return, rollout
from .project import DaggerConfig, project

__all__ = ["Program", "ProgState", "eval_step", "parse", "pretty_print", "make_env", "PropelConfig",
           "propel_run", "UpdateConfig", "update_f", "MixedPolicy", "mean_return", "rollout",
           "DaggerConfig", "project"]

__version__ = "0.1.0"
