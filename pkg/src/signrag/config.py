"""Runtime configuration and backend construction.

Precedence: command-line flags > ``SIGNRAG_*`` environment variables >
JSON config file > defaults. API keys are read from the environment only.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Optional

from .catalog import DEFAULT_DIMENSION, load_catalog
from .errors import SignRAGError
from .prompts import DEFAULT_VERSION

ENV_PREFIX = "SIGNRAG_"
CREDENTIAL_KEYS = ("api_key", "descriptor_api_key", "embedder_api_key", "generator_api_key")
PATH_KEYS = ("mock_catalog", "mock_script", "threshold_path")


class ConfigError(SignRAGError):
    """Configuration is missing, malformed or inconsistent."""


@dataclass(frozen=True)
class Config:
    descriptor: str = "mock"
    embedder: str = "mock"
    generator: str = "oracle"
    endpoint: str = "https://api.openai.com/v1"
    descriptor_endpoint: Optional[str] = None
    embedder_endpoint: Optional[str] = None
    generator_endpoint: Optional[str] = None
    descriptor_model: str = "gemini-2.5-flash"
    embedder_model: str = "text-embedding-3-large"
    generator_model: str = "gpt-5"
    temperature: float = 0.0
    k: int = 5
    dimension: int = DEFAULT_DIMENSION
    template_version: str = DEFAULT_VERSION
    threshold_path: Optional[str] = None
    max_in_flight: int = 4
    max_workers: int = 1
    timeout: float = 60.0
    batch_size: int = 64
    seed: int = 0
    noise_p: float = 0.1
    mock_catalog: Optional[str] = None
    mock_script: Optional[str] = None
    strict: bool = False
    verbose: bool = False

    def validate(self) -> "Config":
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.dimension < 1:
            raise ConfigError(f"dimension must be >= 1, got {self.dimension}")
        if self.timeout <= 0:
            raise ConfigError(f"timeout must be > 0, got {self.timeout}")
        if self.max_in_flight < 1 or self.max_workers < 1 or self.batch_size < 1:
            raise ConfigError("max_in_flight, max_workers and batch_size must be >= 1")
        if not 0.0 <= self.noise_p <= 1.0:
            raise ConfigError(f"noise_p must be in [0, 1], got {self.noise_p}")
        for name, allowed in (("descriptor", ("mock", "remote")), ("embedder", ("mock", "remote")),
                              ("generator", ("oracle", "noisy", "guess", "remote"))):
            if getattr(self, name) not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")
        return self

    @property
    def is_mock(self) -> bool:
        return self.descriptor == "mock" and self.embedder == "mock" and self.generator != "remote"


_FIELD_TYPES = {f.name: f.type for f in fields(Config)}


def _coerce(name, value):
    kind = _FIELD_TYPES[name]
    if value is None:
        return None
    try:
        if kind in ("int",):
            return int(value)
        if kind in ("float",):
            return float(value)
        if kind in ("bool",):
            if isinstance(value, str):
                return value.strip().lower() in ("1", "true", "yes", "on")
            return bool(value)
    except (TypeError, ValueError):
        raise ConfigError(f"invalid value {value!r} for {name}") from None
    return str(value)


def load_config(path=None, env=None, overrides=None) -> Config:
    env = os.environ if env is None else env
    values = {}
    if path is not None:
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        for key in raw:
            if key in CREDENTIAL_KEYS:
                raise ConfigError(f"{path}: credentials must come from the environment, not '{key}'")
            if key not in _FIELD_TYPES:
                raise ConfigError(f"{path}: unknown config key '{key}'")
        for key, value in raw.items():
            if key in PATH_KEYS and value is not None:
                value = str((path.parent / value).resolve())
            values[key] = _coerce(key, value)
    for name in _FIELD_TYPES:
        env_value = env.get(ENV_PREFIX + name.upper())
        if env_value is not None:
            values[name] = _coerce(name, env_value)
    for name, value in (overrides or {}).items():
        if value is not None:
            values[name] = _coerce(name, value)
    return replace(Config(), **values).validate()


def api_key(role: str, env=None) -> Optional[str]:
    env = os.environ if env is None else env
    return env.get(f"{ENV_PREFIX}{role.upper()}_API_KEY") or env.get(f"{ENV_PREFIX}API_KEY")


def build_backends(config: Config, catalog=None, env=None):
    """Construct :class:`~signrag.retrieval.Backends` from configuration.

    Mock descriptors learn reference images from ``catalog`` (or the
    configured ``mock_catalog``) and scenes from ``mock_script``.
    """
    from ._remote import APIClient
    from .descriptor import MockDescriptor, RemoteDescriptor
    from .embedder import MockEmbedder, RemoteEmbedder
    from .generation import GuessingGenerator, NoisyGenerator, OracleGenerator, RemoteGenerator
    from .retrieval import Backends

    def client(role):
        endpoint = getattr(config, f"{role}_endpoint") or config.endpoint
        return APIClient(endpoint, api_key(role, env), config.timeout, config.max_in_flight, config.verbose)

    answers = {}
    if config.descriptor == "mock":
        if catalog is None and config.mock_catalog:
            catalog = load_catalog(config.mock_catalog, dimension=config.dimension)
        descriptor = MockDescriptor.from_catalog(catalog, seed=config.seed) if catalog is not None \
            else MockDescriptor(seed=config.seed)
        if config.mock_script:
            descriptor.load_script(config.mock_script)
        answers = descriptor.answers()
    else:
        descriptor = RemoteDescriptor(client("descriptor"), config.descriptor_model, config.temperature,
                                      config.template_version)

    if config.embedder == "mock":
        embedder = MockEmbedder(config.dimension, seed=config.seed, batch_size=config.batch_size)
    else:
        embedder = RemoteEmbedder(client("embedder"), config.embedder_model, config.dimension, config.batch_size)

    if config.generator == "oracle":
        generator = OracleGenerator(answers)
    elif config.generator == "noisy":
        generator = NoisyGenerator(config.noise_p, config.seed, answers)
    elif config.generator == "guess":
        generator = GuessingGenerator(config.seed)
    else:
        generator = RemoteGenerator(client("generator"), config.generator_model, config.temperature)
    return Backends(descriptor, embedder, generator)
