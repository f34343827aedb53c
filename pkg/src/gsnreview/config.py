import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import List, Optional

from gsnreview.constants import DEFAULT_CONCURRENCY, DEFAULT_MAX_ATTEMPTS, DEFAULT_RUNS, DEFAULT_TIMEOUT
from gsnreview.gateway import ModelSpec
from gsnreview.util import FSPath

# Keys that would put credentials in a config file.
_SECRET_KEYS = frozenset(['api_key', 'apikey', 'token', 'secret'])


@dataclass(frozen=True)
class CliConfig:
    corpus: Optional[Path] = None
    store: Optional[Path] = None
    example: Optional[Path] = None
    models: List[ModelSpec] = field(default_factory=list)
    runs: int = DEFAULT_RUNS
    concurrency: int = DEFAULT_CONCURRENCY
    strict_output: bool = False
    timeout: float = DEFAULT_TIMEOUT
    max_attempts: int = DEFAULT_MAX_ATTEMPTS

    def __post_init__(self):
        if self.runs < 1:
            raise ValueError(f'runs must be at least 1, got {self.runs}')
        if self.concurrency < 1:
            raise ValueError(f'concurrency must be at least 1, got {self.concurrency}')
        if self.max_attempts < 1:
            raise ValueError(f'max_attempts must be at least 1, got {self.max_attempts}')
        if self.timeout <= 0:
            raise ValueError(f'timeout must be positive, got {self.timeout}')

    def override(self, **kwargs) -> 'CliConfig':
        """Replace the values of every keyword argument that is not ``None``."""
        return replace(self, **{k: v for k, v in kwargs.items() if v is not None})


def _find_secrets(obj, path=''):
    if isinstance(obj, dict):
        for key, value in obj.items():
            if key.lower() in _SECRET_KEYS:
                yield f'{path}{key}'
            yield from _find_secrets(value, f'{path}{key}.')
    elif isinstance(obj, list):
        for i, value in enumerate(obj):
            yield from _find_secrets(value, f'{path}{i}.')


def config_from_json(obj: dict, base_dir: Optional[Path] = None) -> CliConfig:
    if not isinstance(obj, dict):
        raise ValueError('config must be a JSON object')
    secrets = list(_find_secrets(obj))
    if secrets:
        raise ValueError(f'config must not contain credentials (found {", ".join(secrets)}); '
                         f'use environment variables instead')
    known = {f.name for f in fields(CliConfig)}
    unknown = sorted(set(obj) - known)
    if unknown:
        raise ValueError(f'unknown config keys: {", ".join(unknown)}')
    kwargs = dict(obj)
    for key in ('corpus', 'store', 'example'):
        if kwargs.get(key) is not None:
            path = Path(kwargs[key])
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            kwargs[key] = path
    if 'models' in kwargs:
        try:
            kwargs['models'] = [ModelSpec.from_json(m) for m in kwargs['models']]
        except (KeyError, TypeError, AttributeError):
            raise ValueError('each model must be an object with "provider" and "model"') from None
    return CliConfig(**kwargs)


def load_config(path: FSPath) -> CliConfig:
    """Load a config file. Relative paths in it are resolved against the file's directory."""
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding='utf-8'))
    except json.JSONDecodeError as ex:
        raise ValueError(f'invalid config file {path}: {ex}') from ex
    return config_from_json(obj, path.parent)
