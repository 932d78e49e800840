"""Service/runtime configuration: one structured file + env overrides."""

import json
import os
from dataclasses import dataclass, fields

import yaml

ENV_PREFIX = "LATENTBLEND_"


@dataclass
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8080
    data_dir: str = "service-data"
    models_dir: str = "models"
    max_jobs: int = 1
    static_dir: str = ""  # optional built UI to serve at /


def _coerce(value: str, target_type):
    if target_type is int:
        return int(value)
    return value


def load_service_config(path=None) -> ServiceConfig:
    """Read YAML/JSON config if given, then apply LATENTBLEND_* env overrides."""
    raw = {}
    if path:
        with open(path) as fh:
            if str(path).endswith(".json"):
                raw = json.load(fh)
            else:
                raw = yaml.safe_load(fh) or {}
        unknown = set(raw) - {f.name for f in fields(ServiceConfig)}
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
    cfg = ServiceConfig(**raw)
    for f in fields(ServiceConfig):
        env = os.environ.get(ENV_PREFIX + f.name.upper())
        if env is not None:
            setattr(cfg, f.name, _coerce(env, type(getattr(cfg, f.name))))
    return cfg
