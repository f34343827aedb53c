import json
import logging
import threading
import time
from itertools import product

import httpx
import pytest
from hypothesis import given, settings

from gsnreview.case import ElementKind, build_case
from gsnreview.gateway import (
    AuthError, ConfigurationError, ExperimentRecord, Gateway, MockProvider, ModelSpec, OpenAICompatibleProvider,
    ProviderRefusal, RateLimited, TransportError, grid_size, make_record_id, provider_from_env, run_experiment,
)
from gsnreview.prompts import Criterion, OneShotExample, PromptBundle, Strategy, compile
from gsnreview.store import load_corpus

from tests.strategies import records

BUNDLE = PromptBundle('system prompt', 'user prompt')
MODEL = ModelSpec('openai', 'gpt-4o')


def _provider(handler):
    client = httpx.Client(transport=httpx.MockTransport(handler))
    return OpenAICompatibleProvider('openai', 'https://llm.test/v1/', 'secret-key', client=client)


def _reply(content='Score: 2', finish_reason='stop', status=200):
    def handler(request):
        return httpx.Response(status, json={
            'choices': [{'message': {'role': 'assistant', 'content': content}, 'finish_reason': finish_reason}],
        })
    return handler


def _null_message(request):
    return httpx.Response(200, json={'choices': [{'message': None}]})


def _cases(n):
    return [build_case(f'case{i}', [('G1', ElementKind.GOAL, f'Goal of case {i}.')]) for i in range(n)]


class _ExclusiveProvider(MockProvider):
    """Mock provider that records how many calls were in progress at once."""

    def __init__(self):
        super().__init__(serial=True)
        self.active = 0
        self.max_active = 0
        self._active_lock = threading.Lock()

    def complete(self, model, bundle):
        with self._active_lock:
            self.active += 1
            self.max_active = max(self.max_active, self.active)
        try:
            time.sleep(0.002)
            return super().complete(model, bundle)
        finally:
            with self._active_lock:
                self.active -= 1


class TestModelSpec:
    def test_parse(self):
        model = ModelSpec.parse('deepseek/deepseek-chat')
        assert model == ModelSpec('deepseek', 'deepseek-chat')
        assert model.name == 'deepseek/deepseek-chat'

    def test_parse_keeps_slashes_in_model(self):
        assert ModelSpec.parse('openai/org/model').model_id == 'org/model'

    @pytest.mark.parametrize('text', ['gpt-4o', '/gpt-4o', 'openai/', ''])
    def test_parse_invalid(self, text):
        with pytest.raises(ValueError):
            ModelSpec.parse(text)

    def test_json(self):
        model = ModelSpec('openai', 'gpt-4o', {'temperature': 0})
        assert ModelSpec.from_json(model.to_json()).params == {'temperature': 0}


class TestOpenAICompatibleProvider:
    def test_request(self):
        requests = []

        def handler(request):
            requests.append(request)
            return _reply()(request)

        result = _provider(handler).complete(ModelSpec('openai', 'gpt-4o', {'temperature': 0.2}), BUNDLE)
        assert result.text == 'Score: 2'
        assert not result.truncated
        request, = requests
        assert str(request.url) == 'https://llm.test/v1/chat/completions'
        assert request.headers['Authorization'] == 'Bearer secret-key'
        assert json.loads(request.content) == {
            'model': 'gpt-4o',
            'messages': [
                {'role': 'system', 'content': 'system prompt'},
                {'role': 'user', 'content': 'user prompt'},
            ],
            'temperature': 0.2,
        }

    def test_no_sampling_params_by_default(self):
        payloads = []

        def handler(request):
            payloads.append(json.loads(request.content))
            return _reply()(request)

        _provider(handler).complete(MODEL, BUNDLE)
        assert set(payloads[0]) == {'model', 'messages'}

    def test_truncated(self):
        result = _provider(_reply('Issue(G1, partial', finish_reason='length')).complete(MODEL, BUNDLE)
        assert result.truncated
        assert result.text == 'Issue(G1, partial'

    @pytest.mark.parametrize('status,error', [
        (401, AuthError),
        (403, AuthError),
        (429, RateLimited),
        (500, TransportError),
        (503, TransportError),
        (400, ProviderRefusal),
    ])
    def test_status(self, status, error):
        with pytest.raises(error):
            _provider(_reply(status=status)).complete(MODEL, BUNDLE)

    def test_content_filter(self):
        with pytest.raises(ProviderRefusal):
            _provider(_reply('', finish_reason='content_filter')).complete(MODEL, BUNDLE)

    def test_empty(self):
        with pytest.raises(ProviderRefusal) as ex:
            _provider(_reply('')).complete(MODEL, BUNDLE)
        assert str(ex.value) == 'openai: empty response'

    def test_malformed(self):
        with pytest.raises(TransportError):
            _provider(lambda request: httpx.Response(200, json={'data': []})).complete(MODEL, BUNDLE)

    def test_null_message(self):
        with pytest.raises(TransportError) as ex:
            _provider(_null_message).complete(MODEL, BUNDLE)
        assert str(ex.value) == 'openai: malformed response'

    def test_network_error(self):
        def handler(request):
            raise httpx.ConnectError('connection refused', request=request)

        with pytest.raises(TransportError):
            _provider(handler).complete(MODEL, BUNDLE)


class TestProviderFromEnv:
    def test_mock(self):
        assert isinstance(provider_from_env('mock', env={}), MockProvider)

    def test_known(self):
        provider = provider_from_env('deepseek', env={'GSNREV_DEEPSEEK_API_KEY': 'k'})
        assert isinstance(provider, OpenAICompatibleProvider)
        assert provider.base_url == 'https://api.deepseek.com/v1'
        provider.close()

    def test_base_url_override(self):
        env = {'GSNREV_LOCAL_LLM_API_KEY': 'k', 'GSNREV_LOCAL_LLM_BASE_URL': 'http://localhost:8000/v1'}
        provider = provider_from_env('local-llm', env=env)
        assert provider.base_url == 'http://localhost:8000/v1'
        provider.close()

    def test_missing_key(self):
        with pytest.raises(ConfigurationError) as ex:
            provider_from_env('openai', env={})
        assert 'GSNREV_OPENAI_API_KEY' in str(ex.value)

    def test_unknown_provider(self):
        with pytest.raises(ConfigurationError):
            provider_from_env('acme', env={'GSNREV_ACME_API_KEY': 'k'})

    def test_gateway_from_env(self):
        gateway = Gateway.from_env([ModelSpec('mock', 'a'), ModelSpec('mock', 'b')], env={})
        assert list(gateway.providers) == ['mock']


class TestGateway:
    def test_retries_transient(self, caplog):
        sleeps = []
        provider = MockProvider(failures={'a': [TransportError('server error (503)'), RateLimited('slow down')]})
        gateway = Gateway({'mock': provider}, sleep=sleeps.append)
        with caplog.at_level(logging.INFO, logger='gsnreview.gateway'):
            result = gateway.complete(ModelSpec('mock', 'a'), BUNDLE)
        assert result.text == 'Score: 3'
        assert result.attempts == 3
        assert sleeps == [1.0, 2.0]
        messages = [r.getMessage() for r in caplog.records]
        assert messages == [
            'mock/a: attempt 1/4 failed: server error (503)',
            'mock/a: attempt 2/4 failed: slow down',
            'mock/a: completed after 3 attempts',
        ]

    def test_auth_not_retried(self):
        provider = MockProvider(failures={'a': [AuthError('denied')]})
        gateway = Gateway({'mock': provider}, sleep=lambda seconds: None)
        with pytest.raises(AuthError):
            gateway.complete(ModelSpec('mock', 'a'), BUNDLE)
        assert provider.calls == ['a']

    def test_gives_up(self):
        provider = MockProvider(failures={'a': [RateLimited('slow down')] * 3})
        gateway = Gateway({'mock': provider}, max_attempts=2, sleep=lambda seconds: None)
        with pytest.raises(RateLimited):
            gateway.complete(ModelSpec('mock', 'a'), BUNDLE)
        assert provider.calls == ['a', 'a']

    def test_backoff_capped(self):
        sleeps = []
        provider = MockProvider(failures={'a': [TransportError('x')] * 5})
        gateway = Gateway({'mock': provider}, max_attempts=6, backoff=4.0, max_backoff=10.0, sleep=sleeps.append)
        gateway.complete(ModelSpec('mock', 'a'), BUNDLE)
        assert sleeps == [4.0, 8.0, 10.0, 10.0, 10.0]

    def test_unregistered_provider(self, mock_gateway):
        with pytest.raises(ConfigurationError):
            mock_gateway.complete(MODEL, BUNDLE)

    def test_invalid_attempts(self):
        with pytest.raises(ValueError):
            Gateway({}, max_attempts=0)

    def test_mock_responses(self):
        other = PromptBundle('other', 'prompt')
        provider = MockProvider(responses={other.fingerprint: 'Score: 1', 'b': 'Score: 5'})
        gateway = Gateway({'mock': provider})
        assert gateway.complete(ModelSpec('mock', 'a'), other).text == 'Score: 1'
        assert gateway.complete(ModelSpec('mock', 'b'), BUNDLE).text == 'Score: 5'
        assert gateway.complete(ModelSpec('mock', 'a'), BUNDLE).text == 'Score: 3'


class TestRunExperiment:
    MODELS = [ModelSpec('mock', 'a'), ModelSpec('mock', 'b')]

    def test_grid_sizes(self):
        assert grid_size(4, 4, 3, 4, 5) == 960
        assert grid_size(4, 4, 1, 4, 5) == 320
        assert grid_size(4, 4, 1, 1, 1) == 16

    def test_records_in_loop_order(self, mock_gateway):
        cases = _cases(2)
        results = list(run_experiment(mock_gateway, cases, list(Criterion), [Strategy.ZERO_SHOT,
                                      Strategy.ZERO_SHOT_COT], self.MODELS, runs=3, concurrency=4,
                                      clock=lambda: '2025-01-01T00:00:00+00:00'))
        expected = [
            (case.name, model.name, strategy, criterion, run_index)
            for case, criterion, strategy, model, run_index
            in product(cases, Criterion, [Strategy.ZERO_SHOT, Strategy.ZERO_SHOT_COT], self.MODELS, range(1, 4))
        ]
        assert len(results) == grid_size(2, 4, 2, 2, 3)
        assert [r.key for r in results] == expected
        assert all(r.raw_response == 'Score: 3' and not r.failed for r in results)
        assert all(r.attempts == 1 for r in results)

    def test_record_fields(self, mock_gateway):
        case, = _cases(1)
        record, = run_experiment(mock_gateway, [case], [Criterion.WELL_FORMEDNESS], [Strategy.ZERO_SHOT],
                                 self.MODELS[:1], runs=1, clock=lambda: 'now')
        bundle = compile(case, Criterion.WELL_FORMEDNESS, Strategy.ZERO_SHOT)
        assert record.prompt_fingerprint == bundle.fingerprint
        assert record.record_id == make_record_id('case0', self.MODELS[0], Strategy.ZERO_SHOT,
                                                  Criterion.WELL_FORMEDNESS, 1)
        assert len(record.record_id) == 16
        assert record.timestamp == 'now'

    def test_failures_recorded(self):
        provider = MockProvider(failures={'b': [AuthError('denied')]})
        gateway = Gateway({'mock': provider}, sleep=lambda seconds: None)
        results = list(run_experiment(gateway, _cases(1), [Criterion.ARGUMENT_COMPREHENSION],
                                      [Strategy.ZERO_SHOT], self.MODELS, runs=2, concurrency=1))
        assert [r.failed for r in results] == [False, False, True, False]
        assert results[2].error == 'AuthError: denied'
        assert results[2].raw_response == ''

    def test_strict_output(self, mock_gateway):
        case, = _cases(1)
        record, = run_experiment(mock_gateway, [case], [Criterion.ARGUMENT_COMPREHENSION], [Strategy.ZERO_SHOT],
                                 self.MODELS[:1], runs=1, strict_output=True)
        strict = compile(case, Criterion.ARGUMENT_COMPREHENSION, Strategy.ZERO_SHOT, strict_output=True)
        assert record.prompt_fingerprint == strict.fingerprint

    def test_one_shot(self, mock_gateway):
        example = OneShotExample('G1: An example goal.\n', 'Score: 2\n')
        results = list(run_experiment(mock_gateway, _cases(1), [Criterion.ARGUMENT_COMPREHENSION],
                                      [Strategy.ZERO_SHOT_COT, Strategy.ONE_SHOT_COT], self.MODELS[:1],
                                      runs=1, example=example))
        assert [r.strategy for r in results] == [Strategy.ZERO_SHOT_COT, Strategy.ONE_SHOT_COT]

    def test_one_shot_needs_example(self, mock_gateway):
        with pytest.raises(ConfigurationError):
            run_experiment(mock_gateway, _cases(1), [Criterion.ARGUMENT_COMPREHENSION], [Strategy.ONE_SHOT_COT],
                           self.MODELS, runs=1)

    def test_duplicate_case_names(self, mock_gateway):
        cases = _cases(1) * 2
        with pytest.raises(ConfigurationError):
            run_experiment(mock_gateway, cases, [Criterion.ARGUMENT_COMPREHENSION], [Strategy.ZERO_SHOT],
                           self.MODELS, runs=1)

    def test_unregistered_model(self, mock_gateway):
        with pytest.raises(ConfigurationError):
            run_experiment(mock_gateway, _cases(1), [Criterion.ARGUMENT_COMPREHENSION], [Strategy.ZERO_SHOT],
                           [MODEL], runs=1)

    @pytest.mark.parametrize('kwargs', [{'runs': 0}, {'concurrency': 0}])
    def test_invalid_counts(self, mock_gateway, kwargs):
        with pytest.raises(ConfigurationError):
            run_experiment(mock_gateway, _cases(1), [Criterion.ARGUMENT_COMPREHENSION], [Strategy.ZERO_SHOT],
                           self.MODELS, **kwargs)

    def test_malformed_reply_recorded(self):
        gateway = Gateway({'openai': _provider(_null_message)}, sleep=lambda seconds: None)
        results = list(run_experiment(gateway, _cases(1), [Criterion.ARGUMENT_COMPREHENSION],
                                      [Strategy.ZERO_SHOT], [MODEL], runs=2))
        assert len(results) == 2
        assert [r.error for r in results] == ['TransportError: openai: malformed response'] * 2

    def test_unexpected_error_recorded(self, caplog):
        provider = MockProvider(failures={'a': [ValueError('boom')]})
        gateway = Gateway({'mock': provider}, sleep=lambda seconds: None)
        with caplog.at_level(logging.ERROR, logger='gsnreview.gateway'):
            results = list(run_experiment(gateway, _cases(1), [Criterion.ARGUMENT_COMPREHENSION],
                                          [Strategy.ZERO_SHOT], self.MODELS[:1], runs=3, concurrency=1))
        assert [r.error for r in results] == ['ValueError: boom', None, None]
        assert [r.raw_response for r in results] == ['', 'Score: 3', 'Score: 3']
        record, = caplog.records
        assert record.getMessage() == 'mock/a: review of case0 failed unexpectedly'
        assert record.exc_info[0] is ValueError

    @pytest.mark.parametrize('criteria,strategies,models', [
        ([Criterion.WELL_FORMEDNESS] * 2, [Strategy.ZERO_SHOT], [ModelSpec('mock', 'a')]),
        ([Criterion.WELL_FORMEDNESS], [Strategy.ZERO_SHOT, Strategy.ZERO_SHOT], [ModelSpec('mock', 'a')]),
        ([Criterion.WELL_FORMEDNESS], [Strategy.ZERO_SHOT], [ModelSpec('mock', 'a'), ModelSpec('mock', 'a')]),
        ([Criterion.WELL_FORMEDNESS], [Strategy.ZERO_SHOT],
         [ModelSpec('mock', 'a'), ModelSpec('mock', 'a', {'temperature': 0})]),
    ])
    def test_duplicate_grid_values(self, mock_gateway, criteria, strategies, models):
        with pytest.raises(ConfigurationError) as ex:
            run_experiment(mock_gateway, _cases(1), criteria, strategies, models, runs=1)
        assert 'must be unique within an experiment' in str(ex.value)

    def test_serial_provider(self):
        provider = _ExclusiveProvider()
        gateway = Gateway({'mock': provider})
        results = list(run_experiment(gateway, _cases(2), list(Criterion), [Strategy.ZERO_SHOT],
                                      self.MODELS, runs=2, concurrency=8))
        assert len(results) == 32
        assert not any(r.failed for r in results)
        assert provider.max_active == 1

    def test_nothing_dispatched_on_error(self):
        provider = MockProvider()
        gateway = Gateway({'mock': provider})
        with pytest.raises(ConfigurationError):
            run_experiment(gateway, _cases(1), [Criterion.ARGUMENT_COMPREHENSION], [Strategy.ONE_SHOT_COT],
                           self.MODELS, runs=1)
        assert provider.calls == []

    @pytest.fixture
    def corpus_cases(self, manifest_path):
        return [case for _, case in load_corpus(manifest_path)]

    def test_single_strategy_grid(self, corpus_cases, example, mock_gateway):
        models = [ModelSpec('mock', name) for name in ('a', 'b', 'c', 'd')]
        results = list(run_experiment(mock_gateway, corpus_cases, list(Criterion), [Strategy.ONE_SHOT_COT],
                                      models, runs=5, example=example, concurrency=8))
        assert len(results) == 320
        assert len({r.record_id for r in results}) == 320
        assert len({r.prompt_fingerprint for r in results}) == 16

    def test_full_grid(self, corpus_cases, example, mock_gateway):
        models = [ModelSpec('mock', name) for name in ('a', 'b', 'c', 'd')]
        results = list(run_experiment(mock_gateway, corpus_cases, list(Criterion), list(Strategy), models,
                                      runs=5, example=example, concurrency=8))
        assert len(results) == 960
        assert not any(r.failed for r in results)
        for strategy in Strategy:
            assert len({r.prompt_fingerprint for r in results if r.strategy is strategy}) == 16


class TestExperimentRecord:
    @settings(max_examples=200, deadline=None)
    @given(records())
    def test_json(self, record):
        assert ExperimentRecord.from_json(json.loads(json.dumps(record.to_json()))) == record

    def test_optional_fields(self):
        obj = {
            'record_id': '0123456789abcdef',
            'case_name': 'gpca',
            'model': {'provider': 'mock', 'model': 'a'},
            'strategy': 'ZeroShot',
            'criterion': 'WellFormedness',
            'run_index': 1,
            'prompt_fingerprint': '0' * 64,
            'raw_response': 'Score: 3',
            'timestamp': '2025-01-01T00:00:00+00:00',
        }
        record = ExperimentRecord.from_json(obj)
        assert not record.failed
        assert record.attempts == 0
        assert record.model.params == {}
