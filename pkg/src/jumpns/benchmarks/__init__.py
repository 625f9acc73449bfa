"""Frozen benchmark configurations shipped with the package."""

from importlib import resources
from pathlib import Path

NAMES = ("ldp_scaling", "planted_rate", "continuity_probe")


def benchmark_path(name: str) -> Path:
    if name not in NAMES:
        raise KeyError(f"unknown benchmark {name!r}; choose from {NAMES}")
    return Path(str(resources.files(__name__) / f"{name}.toml"))


def load_benchmark(name: str):
    from ..config import load_config
    return load_config(benchmark_path(name))
