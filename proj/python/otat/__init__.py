"""Optimal-transport adapter tuning workbench."""

from ._core import (
    OtatError,
    build_cost,
    exact_ot,
    generate_episode,
    heatmap_values,
    mnn_alignment,
    ot_match_probs,
    sinkhorn,
)
from ._core import train as _train

__version__ = "0.1.0"

__all__ = [
    "OtatError",
    "build_cost",
    "exact_ot",
    "generate_episode",
    "heatmap_values",
    "mnn_alignment",
    "ot_match_probs",
    "sinkhorn",
    "train",
]


def train(overrides=None):
    """Run the training harness.

    ``overrides`` maps CLI config keys (e.g. ``"train.steps"``, ``"run.arm"``)
    to values; bools become ``true``/``false``, everything else is stringified.
    """
    rendered = {}
    for key, value in (overrides or {}).items():
        if isinstance(value, bool):
            rendered[key] = "true" if value else "false"
        else:
            rendered[key] = str(value)
    return _train(rendered)
