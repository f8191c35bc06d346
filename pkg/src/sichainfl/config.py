"""TOML experiment configuration.

Top-level keys map onto :class:`~sichainfl.harness.ExperimentConfig` fields;
the nested tables ``[data]``, ``[train]``, ``[dp]``, ``[valuation]``,
``[approx]`` and ``[consensus]`` map onto the nested configs. Any key the
schema does not know is rejected.
"""

from __future__ import annotations

import sys
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .harness import ExperimentConfig, config_from_dict


def load_config(path: str | Path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    return config_from_dict(raw)
