import json
import logging
from dataclasses import replace

import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from gsnreview.gateway import ExperimentRecord, ModelSpec
from gsnreview.metrics import AssessorRating
from gsnreview.prompts import Criterion, Strategy
from gsnreview.store import (
    RECORDS_FILENAME, ExperimentStore, find_entry, join_reviews, load_corpus, read_manifest, resolve_case,
)

from tests.strategies import records


def _record(record_id='r1', raw_response='Score: 2', **kwargs):
    fields = dict(
        record_id=record_id,
        case_name='gpca',
        model=ModelSpec('mock', 'a'),
        strategy=Strategy.ZERO_SHOT,
        criterion=Criterion.WELL_FORMEDNESS,
        run_index=1,
        prompt_fingerprint='0' * 64,
        raw_response=raw_response,
        timestamp='2025-01-01T00:00:00+00:00',
    )
    fields.update(kwargs)
    return ExperimentRecord(**fields)


def _write_manifest(path, entries):
    path.write_text(json.dumps(entries), encoding='utf-8')
    return path


class TestReadManifest:
    def test_corpus(self, manifest_path, corpus_dir):
        entries = read_manifest(manifest_path)
        assert [e.name for e in entries] == ['baidu_apollo', 'gpca', 'im_software', 'lms']
        gpca = find_entry(entries, 'gpca')
        assert gpca.domain == 'Medical'
        assert gpca.prose_path == corpus_dir.joinpath('gpca.gsn')
        assert gpca.expected_counts == (27, 26)
        assert gpca.expected_decorators == 6
        assert find_entry(entries, 'im_software').case_kind == 'security case'

    def test_find_missing(self, manifest_path):
        with pytest.raises(KeyError):
            find_entry(read_manifest(manifest_path), 'level4_ads')

    def test_defaults(self, tmp_path):
        path = _write_manifest(tmp_path.joinpath('manifest.json'), [
            {'name': 'tiny', 'domain': 'Testing', 'prose': 'tiny.gsn'},
        ])
        entry, = read_manifest(path)
        assert entry.expected_counts is None
        assert entry.case_kind == 'assurance case'
        assert entry.system_name is None

    @pytest.mark.parametrize('entries', [
        {'name': 'tiny'},
        [{'name': 'tiny', 'domain': 'Testing'}],
        [{'name': 'tiny', 'domain': '', 'prose': 'tiny.gsn'}],
        [{'name': 'tiny', 'domain': 'Testing', 'prose': 'tiny.gsn', 'expected_elements': 3}],
        [{'name': 'tiny', 'domain': 'Testing', 'prose': 'a.gsn'},
         {'name': 'tiny', 'domain': 'Testing', 'prose': 'b.gsn'}],
        ['tiny.gsn'],
    ])
    def test_invalid(self, tmp_path, entries):
        path = _write_manifest(tmp_path.joinpath('manifest.json'), entries)
        with pytest.raises(ValueError):
            read_manifest(path)

    def test_invalid_json(self, tmp_path):
        path = tmp_path.joinpath('manifest.json')
        path.write_text('[{', encoding='utf-8')
        with pytest.raises(ValueError):
            read_manifest(path)


class TestLoadCorpus:
    def test_counts(self, manifest_path, caplog):
        with caplog.at_level(logging.WARNING, logger='gsnreview.store'):
            corpus = load_corpus(manifest_path)
        assert len(corpus) == 4
        for entry, case in corpus:
            assert entry.check(case) == []
            assert case.name == entry.name
            assert case.case_kind == entry.case_kind
            assert case.system_name == entry.system_name
        assert not [r for r in caplog.records if 'expected' in r.getMessage()]

    def test_mismatch_logged(self, tmp_path, caplog):
        tmp_path.joinpath('tiny.gsn').write_text('G1: goal\nSn1: evidence\nG1 is supported by Sn1\n',
                                                 encoding='utf-8')
        path = _write_manifest(tmp_path.joinpath('manifest.json'), [{
            'name': 'tiny', 'domain': 'Testing', 'prose': 'tiny.gsn',
            'expected_elements': 3, 'expected_relationships': 1, 'expected_decorators': 1,
        }])
        with caplog.at_level(logging.WARNING, logger='gsnreview.store'):
            (entry, case), = load_corpus(path)
        assert case.counts() == (2, 1)
        messages = [r.getMessage() for r in caplog.records]
        assert 'tiny: expected 3 elements, found 2' in messages
        assert 'tiny: expected 1 decorators, found 0' in messages


class TestResolveCase:
    def test_by_name(self, manifest_path):
        case = resolve_case('gpca', read_manifest(manifest_path))
        assert case.name == 'gpca'
        assert case.case_kind == 'safety case'

    def test_by_path(self, corpus_dir):
        case = resolve_case(str(corpus_dir.joinpath('level4_ads.gsn')))
        assert case.name == 'level4_ads'
        assert case.counts() == (38, 37)

    def test_unknown(self, manifest_path):
        with pytest.raises(ValueError) as ex:
            resolve_case('apollo', read_manifest(manifest_path))
        assert str(ex.value) == 'no corpus entry or prose file named apollo'

    def test_missing_gsn_file(self, tmp_path):
        with pytest.raises(OSError):
            resolve_case(str(tmp_path.joinpath('missing.gsn')))


class TestExperimentStore:
    def test_append_and_load(self, tmp_path):
        store = ExperimentStore(tmp_path.joinpath('store'))
        assert store.load_records() == []
        first, second = _record('r1'), _record('r2', 'Score: 4', run_index=2)
        store.append_record(first)
        store.append_record(second)
        assert store.load_records() == [first, second]
        lines = store.path.read_text(encoding='utf-8').splitlines()
        assert [json.loads(line)['record_id'] for line in lines] == ['r1', 'r2']

    def test_missing(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            ExperimentStore(tmp_path.joinpath('store'), create=False)

    def test_reopen(self, tmp_path):
        ExperimentStore(tmp_path).append_records([_record('r1'), _record('r2')])
        assert len(ExperimentStore(tmp_path, create=False).load_records()) == 2

    @settings(max_examples=500, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
    @given(st.lists(records(), max_size=5))
    def test_records_preserved(self, tmp_path_factory, batch):
        store = ExperimentStore(tmp_path_factory.mktemp('store'))
        assert store.append_records(batch) == len(batch)
        assert store.load_records() == batch

    def test_one_line_per_record(self, tmp_path):
        store = ExperimentStore(tmp_path)
        store.append_record(_record(raw_response='Issue(G1, a)\n\nScore: 2\r\n '))
        assert len(store.read_lines()) == 1
        assert store.load_records()[0].raw_response == 'Issue(G1, a)\n\nScore: 2\r\n '

    def test_torn_tail(self, tmp_path, caplog):
        store = ExperimentStore(tmp_path)
        store.append_record(_record('r1'))
        with store.path.open('ab') as f:
            f.write(b'{"record_id": "r2", "case_na')
        with caplog.at_level(logging.WARNING, logger='gsnreview.store'):
            assert [r.record_id for r in store.load_records()] == ['r1']
        assert any('incomplete final record' in r.getMessage() for r in caplog.records)
        store.append_record(_record('r3'))
        assert [r.record_id for r in store.load_records()] == ['r1', 'r3']
        assert store.path.read_text(encoding='utf-8').endswith('\n')

    def test_filters(self, tmp_path):
        store = ExperimentStore(tmp_path)
        store.append_records([
            _record('r1'),
            _record('r2', model=ModelSpec('openai', 'gpt-4o')),
            _record('r3', strategy=Strategy.ZERO_SHOT_COT, run_index=2),
            _record('r4', case_name='lms', criterion=Criterion.ARGUMENT_COMPREHENSION),
        ])

        def ids(**kwargs):
            return [r.record_id for r in store.load_records(**kwargs)]

        assert ids(case_name='lms') == ['r4']
        assert ids(model='gpt-4o') == ['r2']
        assert ids(model='openai/gpt-4o') == ['r2']
        assert ids(strategy='zs-cot') == ['r3']
        assert ids(strategy=Strategy.ZERO_SHOT) == ['r1', 'r2', 'r4']
        assert ids(criterion='arg-comp') == ['r4']
        assert ids(run_index=2) == ['r3']
        assert ids(case_name='gpca', model='mock/a', run_index=1) == ['r1']
        with pytest.raises(ValueError):
            store.load_records(strategy='few-shot')

    def test_file_name(self, tmp_path):
        store = ExperimentStore(tmp_path)
        assert store.path == tmp_path.joinpath(RECORDS_FILENAME)


class TestJoinReviews:
    def test_join(self):
        first = _record('r1', 'Issue(G3, goal)\nScore: 2')
        second = _record('r2', 'No score here.')
        failed = _record('r3', '', error='TransportError: server error (503)')
        ratings = [AssessorRating('r1', 'a1', 2, 3, 4), AssessorRating('r1', 'a2', 1, 1, 1),
                   AssessorRating('r9', 'a1', 1, 1, 1)]
        rows = join_reviews([first, second, failed], ratings)
        assert [row.record.record_id for row in rows] == ['r1', 'r2', 'r3']
        assert rows[0].review.score == 2
        assert len(rows[0].ratings) == 2
        assert rows[1].review.score is None
        assert rows[1].scored_run() is None
        assert rows[2].review.findings == []

    def test_observations(self):
        row, = join_reviews([_record('r1', 'Score: 4')], [AssessorRating('r1', 'a1', 2, 3, 5)])
        observations = row.observations()
        assert [(o.metric, o.value) for o in observations] == [
            ('score', 4), ('informativeness', 2), ('coherence', 3), ('usefulness', 5),
        ]
        assert {(o.llm, o.strategy, o.criterion) for o in observations} == {('mock/a', 'zs', 'well-formed')}

    def test_scored_run(self):
        row, = join_reviews([replace(_record('r1', 'Score: 1'), run_index=3)])
        run = row.scored_run()
        assert (run.case_name, run.run_index, run.model, run.score) == ('gpca', 3, 'mock/a', 1)
        assert (run.criterion, run.strategy) == ('well-formed', 'zs')
