"""Flat pipeline configuration with flags > environment > file precedence.

The file is one flat JSON document; every key can be overridden by an
environment variable RETRANK_<KEY> and by a command-line flag.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

from .errors import DataError

ENV_PREFIX = "RETRANK_"


def _int_list(value) -> list[int]:
    if isinstance(value, str):
        parts = [p for p in value.replace(",", " ").split() if p]
        return [int(p) for p in parts]
    return [int(v) for v in value]


SCHEMA: dict[str, type | staticmethod] = {
    "kb_file": str,
    "images_manifest": str,
    "image_evec": str,
    "section_evec": str,
    "query_token_evec": str,
    "alpha": float,
    "scope": int,
    "k": int,
    "ks": _int_list,
    "template": str,
    "endpoint_base_url": str,
    "endpoint_model": str,
    "endpoint_timeout_s": float,
    "endpoint_max_tokens": int,
    "endpoint_temperature": float,
    "endpoint_max_retries": int,
    "stub_fixtures": str,
    "repetitions": int,
    "warmup": int,
    "scopes": _int_list,
    "host": str,
    "port": int,
    "workers": int,
    "seed": int,
    "n_negatives": int,
    "loss_temperature": float,
}

DEFAULTS: dict = {
    "alpha": 0.5,
    "scope": 20,
    "k": 20,
    "ks": [1, 5, 10, 20],
    "template": "evqa",
    "endpoint_model": "mistral-7b-instruct",
    "endpoint_timeout_s": 30.0,
    "endpoint_max_tokens": 64,
    "endpoint_temperature": 0.0,
    "endpoint_max_retries": 3,
    "repetitions": 15,
    "warmup": 3,
    "scopes": [10, 20, 50, 100, 500],
    "host": "127.0.0.1",
    "port": 8080,
    "workers": 1,
    "seed": 0,
    "n_negatives": 24,
    "loss_temperature": 0.07,
}


def _cast(key: str, value):
    caster = SCHEMA[key]
    try:
        return caster(value)
    except (TypeError, ValueError) as exc:
        raise DataError(f"config key {key!r}: cannot interpret {value!r}: {exc}") from None


def load_settings(
    config_path: str | Path | None = None,
    cli_overrides: dict | None = None,
    environ: dict | None = None,
) -> dict:
    """Merge defaults, config file, environment, and CLI flags, in
    ascending precedence. Unknown file keys are rejected early."""
    settings = dict(DEFAULTS)
    if config_path is not None:
        try:
            with open(config_path, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"config file {config_path}: invalid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise DataError(f"config file {config_path}: expected a flat JSON object")
        for key, value in raw.items():
            if key not in SCHEMA:
                raise DataError(f"config file {config_path}: unknown key {key!r}")
            settings[key] = _cast(key, value)
    env = os.environ if environ is None else environ
    for key in SCHEMA:
        env_key = ENV_PREFIX + key.upper()
        if env_key in env:
            settings[key] = _cast(key, env[env_key])
    for key, value in (cli_overrides or {}).items():
        if value is None:
            continue
        if key not in SCHEMA:
            raise DataError(f"unknown setting {key!r}")
        settings[key] = _cast(key, value)
    return settings


def require(settings: dict, *keys: str) -> None:
    missing = [k for k in keys if settings.get(k) is None]
    if missing:
        raise DataError(
            "missing required settings: " + ", ".join(missing)
            + " (set via flag, RETRANK_* env var, or config file)"
        )


def require_file(settings: dict, key: str) -> str:
    require(settings, key)
    path = settings[key]
    if not Path(path).exists():
        raise DataError(f"{key}: file not found: {path}")
    return path
