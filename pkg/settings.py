"""Repository defaults (config.toml) and logging setup"""
import copy
import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Dict, Optional

DEFAULT_CONFIG_PATH = Path(__file__).with_name("config.toml")

# Mirrors the shipped config.toml so a missing file changes nothing
BUILTIN_DEFAULTS: Dict[str, Dict] = {
    "solver": {
        "dt": 1e-3,
        "picard_tolerance": 1e-12,
        "picard_max_iterations": 200,
        "window_safety": 0.5,
    },
    "semigroup": {"omega_fraction": 0.95, "grid_density": 32, "dense_limit": 400},
    "analysis": {
        "slack": 1e-9,
        "history_refinement": 8,
        "window_subdivisions": 64,
        "omega_prime_count": 100,
    },
    "oracle": {"refinement": 16, "tolerance": 1e-6},
    "logging": {
        "level": "WARNING",
        "format": "%(asctime)s %(levelname)s %(name)s: %(message)s",
    },
}


def load_defaults(path: Optional[Path] = None) -> Dict[str, Dict]:
    """Read config.toml and overlay it on the built-in defaults"""
    merged = copy.deepcopy(BUILTIN_DEFAULTS)
    path = Path(path) if path is not None else DEFAULT_CONFIG_PATH
    if not path.exists():
        return merged
    with open(path, "rb") as fh:
        loaded = tomllib.load(fh)
    for section, values in loaded.items():
        merged.setdefault(section, {}).update(values)
    return merged


def configure_logging(level: Optional[str] = None, defaults: Optional[Dict] = None) -> None:
    """One stream handler on the root logger; calling again replaces it"""
    defaults = defaults or load_defaults()
    level = (level or defaults["logging"]["level"]).upper()
    root = logging.getLogger()
    for handler in list(root.handlers):
        if getattr(handler, "_delay_lab", False):
            root.removeHandler(handler)
    handler = logging.StreamHandler()
    handler._delay_lab = True
    handler.setFormatter(logging.Formatter(defaults["logging"]["format"]))
    root.addHandler(handler)
    root.setLevel(level)
