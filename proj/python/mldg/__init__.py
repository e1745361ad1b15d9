"""Python access to the MLDG core: selfchecks, toy meta-objectives, synthetic
domains, the RL environments and experiment runs."""

import json

from ._mldg import (
    CheckResult,
    ConfigError,
    MldgError,
    ToyProblem,
    compare,
    config_text,
    env_reset,
    env_step,
    make_domains,
    selfcheck,
)
from ._mldg import run as _run


def run(path, overrides=(), write=False):
    """Runs a config file and returns the parsed summary."""
    return json.loads(_run(str(path), list(overrides), write))


__all__ = [
    "CheckResult",
    "ConfigError",
    "MldgError",
    "ToyProblem",
    "compare",
    "config_text",
    "env_reset",
    "env_step",
    "make_domains",
    "run",
    "selfcheck",
]
