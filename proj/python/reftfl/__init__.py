"""Federated representation fine-tuning simulator.

Thin wrapper over the compiled core: low-rank representation edits, robust
All-But-Me aggregation (Weiszfeld geometric median), parameter accounting and
a deterministic federated experiment runner.
"""

import json as _json

try:
    from ._core import (  # type: ignore[attr-defined]
        ConfigError,
        InputError,
        ShapeError,
        abm_aggregate,
        fedavg,
        generate_dataset,
        geometric_median,
        loreft_apply,
        loreft_init,
        mean_abm,
        orthonormalize_rows,
        param_count,
        __version__,
    )
    from ._core import run_experiment as _run_experiment_json
except ImportError:  # development layout: _core.so on PYTHONPATH, not in the package
    from _core import (  # type: ignore[no-redef]
        ConfigError,
        InputError,
        ShapeError,
        abm_aggregate,
        fedavg,
        generate_dataset,
        geometric_median,
        loreft_apply,
        loreft_init,
        mean_abm,
        orthonormalize_rows,
        param_count,
        __version__,
    )
    from _core import run_experiment as _run_experiment_json


def run_experiment(config):
    """Runs a federated experiment and returns a dict.

    `config` may be a dict or a JSON string; the result carries the resolved
    config echo, one report per round and the final summary.
    """
    if not isinstance(config, str):
        config = _json.dumps(config)
    return _json.loads(_run_experiment_json(config))


__all__ = [
    "ConfigError",
    "InputError",
    "ShapeError",
    "abm_aggregate",
    "fedavg",
    "generate_dataset",
    "geometric_median",
    "loreft_apply",
    "loreft_init",
    "mean_abm",
    "orthonormalize_rows",
    "param_count",
    "run_experiment",
    "__version__",
]
