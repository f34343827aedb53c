"""Dispatch of review prompts to chat-completion providers, and the multi-run experiment grid."""

import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from itertools import product
from typing import Callable, Dict, Iterator, List, Mapping, Optional, Sequence

import httpx

from gsnreview.case import AssuranceCase
from gsnreview.constants import (
    DEFAULT_CONCURRENCY, DEFAULT_MAX_ATTEMPTS, DEFAULT_RUNS, DEFAULT_TIMEOUT, ENV_PREFIX,
)
from gsnreview.prompts import Criterion, OneShotExample, PromptBundle, Strategy, compile
from gsnreview.util import sha256_hex

logger = logging.getLogger(__name__)

# Chat-completions endpoints of the built-in providers (all OpenAI-compatible).
DEFAULT_BASE_URLS = {
    'openai': 'https://api.openai.com/v1',
    'deepseek': 'https://api.deepseek.com/v1',
    'gemini': 'https://generativelanguage.googleapis.com/v1beta/openai',
}
MOCK_PROVIDER_ID = 'mock'
DEFAULT_MOCK_RESPONSE = 'Score: 3'


class GatewayError(RuntimeError):
    transient = False


class AuthError(GatewayError):
    pass


class RateLimited(GatewayError):
    transient = True


class TransportError(GatewayError):
    transient = True


class ProviderRefusal(GatewayError):
    pass


class ConfigurationError(GatewayError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    provider_id: str
    model_id: str
    params: Mapping[str, object] = field(default_factory=dict, compare=False)

    @property
    def name(self) -> str:
        return f'{self.provider_id}/{self.model_id}'

    @classmethod
    def parse(cls, text: str) -> 'ModelSpec':
        """Parse a ``provider/model`` string, e.g. ``openai/gpt-4o`` or ``mock/a``."""
        provider_id, sep, model_id = text.partition('/')
        if not sep or not provider_id or not model_id:
            raise ValueError(f'model must be given as provider/model: {text}')
        return cls(provider_id, model_id)

    def to_json(self) -> dict:
        return {'provider': self.provider_id, 'model': self.model_id, 'params': dict(self.params)}

    @classmethod
    def from_json(cls, obj: dict) -> 'ModelSpec':
        return cls(obj['provider'], obj['model'], dict(obj.get('params') or {}))


@dataclass(frozen=True)
class CompletionResult:
    text: str
    latency_ms: int
    truncated: bool = False
    attempts: int = 1


class Provider:
    # Providers that cannot take concurrent calls set this, and the gateway serialises them.
    serial = False

    def complete(self, model: ModelSpec, bundle: PromptBundle) -> CompletionResult:
        raise NotImplementedError()

    def close(self):
        pass


class MockProvider(Provider):
    """Deterministic offline provider.

    Responses are looked up by prompt fingerprint, then by model id, falling back to a default.
    A failure script maps model ids to exceptions raised, in order, by successive calls.
    """

    def __init__(
        self,
        responses: Optional[Mapping[str, str]] = None,
        default: str = DEFAULT_MOCK_RESPONSE,
        failures: Optional[Mapping[str, Sequence[Exception]]] = None,
        serial: bool = False,
    ):
        self.responses = dict(responses or {})
        self.serial = serial
        self.default = default
        self._failures = {k: list(v) for k, v in (failures or {}).items()}
        self._lock = threading.Lock()
        self.calls: List[str] = []

    def complete(self, model: ModelSpec, bundle: PromptBundle) -> CompletionResult:
        with self._lock:
            self.calls.append(model.model_id)
            script = self._failures.get(model.model_id)
            if script:
                raise script.pop(0)
        fingerprint = bundle.fingerprint
        if fingerprint in self.responses:
            text = self.responses[fingerprint]
        else:
            text = self.responses.get(model.model_id, self.default)
        return CompletionResult(text, latency_ms=0)


class OpenAICompatibleProvider(Provider):
    def __init__(
        self,
        provider_id: str,
        base_url: str,
        api_key: str,
        timeout: float = DEFAULT_TIMEOUT,
        client: Optional[httpx.Client] = None,
    ):
        self.provider_id = provider_id
        self.base_url = base_url.rstrip('/')
        self.api_key = api_key
        self._client = client if client is not None else httpx.Client(timeout=timeout)

    def close(self):
        self._client.close()

    def complete(self, model: ModelSpec, bundle: PromptBundle) -> CompletionResult:
        payload = {
            'model': model.model_id,
            'messages': [
                {'role': 'system', 'content': bundle.system_prompt},
                {'role': 'user', 'content': bundle.user_prompt},
            ],
        }
        # Sampling parameters are only sent when explicitly configured.
        payload.update(model.params)
        start = time.perf_counter()
        try:
            response = self._client.post(
                f'{self.base_url}/chat/completions',
                json=payload,
                headers={'Authorization': f'Bearer {self.api_key}'},
            )
        except httpx.HTTPError as ex:
            raise TransportError(f'{self.provider_id}: {ex}') from ex
        latency_ms = int((time.perf_counter() - start) * 1000)
        status = response.status_code
        if status in (401, 403):
            raise AuthError(f'{self.provider_id}: authentication failed ({status})')
        if status == 429:
            raise RateLimited(f'{self.provider_id}: rate limited')
        if status >= 500:
            raise TransportError(f'{self.provider_id}: server error ({status})')
        if status >= 400:
            raise ProviderRefusal(f'{self.provider_id}: request rejected ({status}): {response.text[:200]}')
        try:
            choice = response.json()['choices'][0]
            text = choice['message'].get('content') or ''
            finish_reason = choice.get('finish_reason')
        except (ValueError, KeyError, IndexError, TypeError, AttributeError) as ex:
            raise TransportError(f'{self.provider_id}: malformed response') from ex
        if finish_reason == 'content_filter':
            raise ProviderRefusal(f'{self.provider_id}: response blocked by content filter')
        truncated = finish_reason == 'length'
        if not text and not truncated:
            raise ProviderRefusal(f'{self.provider_id}: empty response')
        return CompletionResult(text, latency_ms, truncated)


def _env_name(provider_id: str, suffix: str) -> str:
    return f'{ENV_PREFIX}_{provider_id.upper().replace("-", "_")}_{suffix}'


def provider_from_env(
    provider_id: str,
    env: Optional[Mapping[str, str]] = None,
    timeout: float = DEFAULT_TIMEOUT,
) -> Provider:
    """Create a provider, taking credentials from ``GSNREV_<PROVIDER>_API_KEY`` and
    ``GSNREV_<PROVIDER>_BASE_URL``.
    """
    if provider_id == MOCK_PROVIDER_ID:
        return MockProvider()
    env = os.environ if env is None else env
    base_url = env.get(_env_name(provider_id, 'BASE_URL')) or DEFAULT_BASE_URLS.get(provider_id)
    if base_url is None:
        raise ConfigurationError(
            f'unknown provider {provider_id} (set {_env_name(provider_id, "BASE_URL")} to use it)'
        )
    api_key = env.get(_env_name(provider_id, 'API_KEY'))
    if not api_key:
        raise ConfigurationError(f'missing API key for {provider_id} (set {_env_name(provider_id, "API_KEY")})')
    return OpenAICompatibleProvider(provider_id, base_url, api_key, timeout=timeout)


class Gateway:
    def __init__(
        self,
        providers: Mapping[str, Provider],
        max_attempts: int = DEFAULT_MAX_ATTEMPTS,
        backoff: float = 1.0,
        max_backoff: float = 30.0,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if max_attempts < 1:
            raise ValueError(f'max_attempts must be at least 1, got {max_attempts}')
        self.providers = dict(providers)
        self.max_attempts = max_attempts
        self.backoff = backoff
        self.max_backoff = max_backoff
        self._sleep = sleep
        self._serial_locks = {pid: threading.Lock() for pid, p in self.providers.items() if p.serial}

    @classmethod
    def from_env(cls, models: Sequence[ModelSpec], env=None, timeout=DEFAULT_TIMEOUT, **kwargs) -> 'Gateway':
        providers = {}
        for model in models:
            if model.provider_id not in providers:
                providers[model.provider_id] = provider_from_env(model.provider_id, env, timeout)
        return cls(providers, **kwargs)

    def close(self):
        for provider in self.providers.values():
            provider.close()

    def provider(self, model: ModelSpec) -> Provider:
        try:
            return self.providers[model.provider_id]
        except KeyError:
            raise ConfigurationError(f'provider {model.provider_id} is not registered') from None

    def _call(self, provider, model, bundle):
        lock = self._serial_locks.get(model.provider_id)
        if lock is None:
            return provider.complete(model, bundle)
        with lock:
            return provider.complete(model, bundle)

    def complete(self, model: ModelSpec, bundle: PromptBundle) -> CompletionResult:
        """Send a prompt bundle, retrying transient failures with exponential backoff.

        Raises:
            AuthError: Credentials were rejected (never retried).
            RateLimited: Still rate limited after the last attempt.
            TransportError: Network or server failure on the last attempt.
            ProviderRefusal: The provider returned an empty or blocked response.
        """
        provider = self.provider(model)
        for attempt in range(1, self.max_attempts + 1):
            try:
                result = self._call(provider, model, bundle)
            except GatewayError as ex:
                logger.warning('%s: attempt %d/%d failed: %s', model.name, attempt, self.max_attempts, ex)
                if not ex.transient or attempt == self.max_attempts:
                    raise
                self._sleep(min(self.backoff * 2 ** (attempt - 1), self.max_backoff))
                continue
            if attempt > 1:
                logger.info('%s: completed after %d attempts', model.name, attempt)
            return replace(result, attempts=attempt)
        raise AssertionError('unreachable')


@dataclass(frozen=True)
class ExperimentRecord:
    record_id: str
    case_name: str
    model: ModelSpec
    strategy: Strategy
    criterion: Criterion
    run_index: int
    prompt_fingerprint: str
    raw_response: str
    timestamp: str
    error: Optional[str] = None
    latency_ms: Optional[int] = None
    truncated: bool = False
    attempts: int = 0

    @property
    def key(self):
        return self.case_name, self.model.name, self.strategy, self.criterion, self.run_index

    @property
    def failed(self) -> bool:
        return self.error is not None

    def to_json(self) -> dict:
        return {
            'record_id': self.record_id,
            'case_name': self.case_name,
            'model': self.model.to_json(),
            'strategy': self.strategy.value,
            'criterion': self.criterion.value,
            'run_index': self.run_index,
            'prompt_fingerprint': self.prompt_fingerprint,
            'raw_response': self.raw_response,
            'timestamp': self.timestamp,
            'error': self.error,
            'latency_ms': self.latency_ms,
            'truncated': self.truncated,
            'attempts': self.attempts,
        }

    @classmethod
    def from_json(cls, obj: dict) -> 'ExperimentRecord':
        return cls(
            record_id=obj['record_id'],
            case_name=obj['case_name'],
            model=ModelSpec.from_json(obj['model']),
            strategy=Strategy(obj['strategy']),
            criterion=Criterion(obj['criterion']),
            run_index=obj['run_index'],
            prompt_fingerprint=obj['prompt_fingerprint'],
            raw_response=obj['raw_response'],
            timestamp=obj['timestamp'],
            error=obj.get('error'),
            latency_ms=obj.get('latency_ms'),
            truncated=obj.get('truncated', False),
            attempts=obj.get('attempts', 0),
        )


def make_record_id(case_name: str, model: ModelSpec, strategy: Strategy, criterion: Criterion,
                   run_index: int) -> str:
    return sha256_hex(case_name, model.name, strategy.value, criterion.value, str(run_index))[:16]


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec='seconds')


def run_experiment(
    gateway: Gateway,
    cases: Sequence[AssuranceCase],
    criteria: Sequence[Criterion],
    strategies: Sequence[Strategy],
    models: Sequence[ModelSpec],
    runs: int = DEFAULT_RUNS,
    example: Optional[OneShotExample] = None,
    *,
    strict_output: bool = False,
    concurrency: int = DEFAULT_CONCURRENCY,
    clock: Callable[[], str] = _utc_now,
) -> Iterator[ExperimentRecord]:
    """Run every (case, criterion, strategy, model, run) review of an experiment grid.

    Requests are dispatched concurrently, but records are yielded in nested loop order. A failed
    completion yields a record carrying an error marker.

    Raises:
        ConfigurationError: Raised before anything is dispatched if the grid is unusable.
    """
    if runs < 1:
        raise ConfigurationError(f'runs must be at least 1, got {runs}')
    if concurrency < 1:
        raise ConfigurationError(f'concurrency must be at least 1, got {concurrency}')
    if Strategy.ONE_SHOT_COT in strategies and example is None:
        raise ConfigurationError('the one-shot strategy requires an example')
    dimensions = [
        ('case names', [case.name for case in cases]),
        ('criteria', list(criteria)),
        ('strategies', list(strategies)),
        ('models', [model.name for model in models]),
    ]
    for dimension, values in dimensions:
        if len(set(values)) != len(values):
            raise ConfigurationError(f'{dimension} must be unique within an experiment')
    for model in models:
        gateway.provider(model)

    bundles: Dict[tuple, PromptBundle] = {}
    for case, criterion, strategy in product(cases, criteria, strategies):
        shot = example if strategy is Strategy.ONE_SHOT_COT else None
        bundles[case.name, criterion, strategy] = compile(case, criterion, strategy, shot,
                                                          strict_output=strict_output)
    tasks = [
        (case.name, criterion, strategy, model, run_index)
        for case, criterion, strategy, model, run_index
        in product(cases, criteria, strategies, models, range(1, runs + 1))
    ]

    def review(task) -> ExperimentRecord:
        case_name, criterion, strategy, model, run_index = task
        bundle = bundles[case_name, criterion, strategy]
        record = ExperimentRecord(
            record_id=make_record_id(case_name, model, strategy, criterion, run_index),
            case_name=case_name,
            model=model,
            strategy=strategy,
            criterion=criterion,
            run_index=run_index,
            prompt_fingerprint=bundle.fingerprint,
            raw_response='',
            timestamp=clock(),
        )
        try:
            result = gateway.complete(model, bundle)
        except GatewayError as ex:
            return replace(record, error=f'{type(ex).__name__}: {ex}')
        except Exception as ex:
            logger.exception('%s: review of %s failed unexpectedly', model.name, case_name)
            return replace(record, error=f'{type(ex).__name__}: {ex}')
        return replace(record, raw_response=result.text, latency_ms=result.latency_ms,
                       truncated=result.truncated, attempts=result.attempts)

    def generate():
        with ThreadPoolExecutor(max_workers=concurrency) as executor:
            futures = [executor.submit(review, task) for task in tasks]
            try:
                for future in futures:
                    yield future.result()
            finally:
                for future in futures:
                    future.cancel()

    return generate()


def grid_size(n_cases, n_criteria, n_strategies, n_models, runs) -> int:
    return n_cases * n_criteria * n_strategies * n_models * runs
