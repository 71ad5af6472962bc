"""Few-shot class-incremental learning benchmark.

Thin dict-friendly layer over the compiled core: configs go in as dicts (or
JSON text), results come back as plain Python structures. Heavy calls
release the GIL.
"""

import json as _json

try:
    from . import _core
except ImportError:  # build-tree layout: the module sits next to the package on sys.path
    import _core

ConfigError = _core.ConfigError
DataError = _core.DataError
TrainingError = _core.TrainingError
linear_cka = _core.linear_cka
derive_seed = _core.derive_seed
__version__ = _core.__version__

__all__ = [
    "ConfigError",
    "DataError",
    "TrainingError",
    "config_hash",
    "derive_seed",
    "inspect",
    "linear_cka",
    "normalize_config",
    "report",
    "search",
    "train",
]


def _text(config):
    return config if isinstance(config, str) else _json.dumps(config)


def normalize_config(config):
    """Validated config with every default filled in, as a dict."""
    return _json.loads(_core.normalize_config(_text(config)))


def config_hash(config):
    return _core.config_hash(_text(config))


def train(config, output="", resume=False, scale=1.0):
    """Run one experiment; returns {run_dir, strategy, status, sessions}."""
    return _json.loads(_core.train(_text(config), str(output), resume, scale))


def search(config, output="", workers=1, scale=1.0):
    """Random hyperparameter search; returns the list of trial records."""
    return _json.loads(_core.search(_text(config), str(output), workers, scale))


def report(
    run_dirs,
    output,
    session_table=True,
    confusion_heatmaps=True,
    resource_curves=True,
    cka_grid=False,
    metric="a_acc",
    cka_sample=2048,
):
    """Emit tables and figures; returns {dir, files, warnings}."""
    return _json.loads(
        _core.report(
            [str(d) for d in run_dirs],
            str(output),
            session_table,
            confusion_heatmaps,
            resource_curves,
            cka_grid,
            metric,
            cka_sample,
        )
    )


def inspect(run_dir):
    """Plain-text summary of a stored run, one line per session."""
    return _core.inspect(str(run_dir))
