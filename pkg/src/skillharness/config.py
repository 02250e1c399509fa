"""Service configuration: one YAML document, overridable per-field from the
environment. Credentials are never stored in config files; config only
names the environment variable that holds the key."""

from __future__ import annotations

import os
from dataclasses import dataclass, fields, replace
from pathlib import Path

import yaml

from .providers import (
    CannedChatProvider,
    HashEmbeddingProvider,
    OpenAIChatProvider,
    OpenAIEmbeddingProvider,
)

ENV_PREFIX = "SKILLHARNESS_"


@dataclass(frozen=True)
class ApiConfig:
    bind_address: str = "127.0.0.1:8732"
    data_root: str = "./data"
    provider: str = "mock"  # mock | live
    chat_base_url: str = "https://api.openai.com/v1"
    chat_model: str = "gpt-4o-mini"
    chat_api_key_env: str = "OPENAI_API_KEY"
    embed_base_url: str = "https://api.openai.com/v1"
    embed_model: str = "text-embedding-3-small"
    embed_dim: int = 8
    embed_api_key_env: str = "OPENAI_API_KEY"
    theta: float = 0.6
    max_tokens: int = 64000
    retain_recent: int = 10
    evolution_mode: str = "auto"  # auto | manual
    weights: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    gamma: float = 1.0
    auth_token_env: str | None = None
    max_steps: int = 8
    dedup_threshold: float = 0.9
    suggestion_threshold: int = 2
    norm_chars: int = 2000

    def __post_init__(self) -> None:
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError("theta must be in [0, 1]")
        if self.max_tokens < 1024:
            raise ValueError("max_tokens must be >= 1024")
        if self.provider not in ("mock", "live"):
            raise ValueError("provider must be 'mock' or 'live'")
        if self.evolution_mode not in ("auto", "manual"):
            raise ValueError("evolution_mode must be 'auto' or 'manual'")
        if len(self.weights) != 3 or any(w < 0 for w in self.weights):
            raise ValueError("weights must be three non-negative numbers")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")

    @property
    def host(self) -> str:
        return self.bind_address.rsplit(":", 1)[0]

    @property
    def port(self) -> int:
        return int(self.bind_address.rsplit(":", 1)[1])


def _coerce(name: str, raw, target_type) -> object:
    if name == "weights":
        if isinstance(raw, str):
            parts = [p for p in raw.replace(",", " ").split() if p]
        else:
            parts = list(raw)
        return tuple(float(p) for p in parts)
    if target_type is bool:
        return str(raw).lower() in ("1", "true", "yes")
    if target_type is int:
        return int(raw)
    if target_type is float:
        return float(raw)
    return raw


_FIELD_TYPES = {
    "embed_dim": int,
    "max_tokens": int,
    "retain_recent": int,
    "max_steps": int,
    "suggestion_threshold": int,
    "norm_chars": int,
    "theta": float,
    "gamma": float,
    "dedup_threshold": float,
    "weights": tuple,
}


def load_config(path: Path | str | None = None, env: dict | None = None) -> ApiConfig:
    """Defaults, then the YAML file, then SKILLHARNESS_* environment
    variables; later layers win per field."""
    env = os.environ if env is None else env
    values: dict = {}
    if path is not None:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        if not isinstance(data, dict):
            raise ValueError(f"config file {path} must hold a mapping")
        values.update(data)
    known = {f.name for f in fields(ApiConfig)}
    unknown = set(values) - known
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
    config = ApiConfig(
        **{
            name: _coerce(name, value, _FIELD_TYPES.get(name, str))
            for name, value in values.items()
        }
    )
    overrides: dict = {}
    for f in fields(ApiConfig):
        env_name = ENV_PREFIX + f.name.upper()
        if env_name in env:
            overrides[f.name] = _coerce(
                f.name, env[env_name], _FIELD_TYPES.get(f.name, str)
            )
    if overrides:
        config = replace(config, **overrides)
    return config


def build_providers(config: ApiConfig):
    """(chat, embedding) pair per the configured provider mode."""
    if config.provider == "mock":
        return CannedChatProvider(), HashEmbeddingProvider(dim=config.embed_dim)
    chat = OpenAIChatProvider(
        base_url=config.chat_base_url,
        model=config.chat_model,
        api_key_env=config.chat_api_key_env,
    )
    embed = OpenAIEmbeddingProvider(
        base_url=config.embed_base_url,
        model=config.embed_model,
        dim=config.embed_dim,
        api_key_env=config.embed_api_key_env,
    )
    return chat, embed
