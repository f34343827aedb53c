"""Fixture corpus loading and experiment record persistence."""

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, List, Optional, Sequence, Tuple, Union

from gsnreview.case import AssuranceCase
from gsnreview.constants import DEFAULT_CASE_KIND
from gsnreview.gateway import ExperimentRecord
from gsnreview.metrics import METRICS, AssessorRating, Observation, ScoredRun
from gsnreview.prompts import Criterion, Strategy
from gsnreview.prose import Severity, load_prose
from gsnreview.review import ParsedReview, parse_review
from gsnreview.util import FSPath

logger = logging.getLogger(__name__)

RECORDS_FILENAME = 'records.jsonl'


@dataclass(frozen=True)
class CorpusEntry:
    name: str
    domain: str
    prose_path: Path
    expected_counts: Optional[Tuple[int, int]] = None
    case_kind: str = DEFAULT_CASE_KIND
    system_name: Optional[str] = None
    expected_decorators: Optional[int] = None

    def check(self, case: AssuranceCase) -> List[str]:
        """Compare a parsed case against the sizes stated in the manifest.

        Returns:
            One message per mismatch.
        """
        problems = []
        if self.expected_counts is not None:
            n_elements, n_relationships = case.counts()
            if n_elements != self.expected_counts[0]:
                problems.append(f'{self.name}: expected {self.expected_counts[0]} elements, found {n_elements}')
            if n_relationships != self.expected_counts[1]:
                problems.append(
                    f'{self.name}: expected {self.expected_counts[1]} relationships, found {n_relationships}'
                )
        if self.expected_decorators is not None and case.decorator_count() != self.expected_decorators:
            problems.append(
                f'{self.name}: expected {self.expected_decorators} decorators, found {case.decorator_count()}'
            )
        return problems


def _entry_from_json(obj, base_dir: Path, index: int) -> CorpusEntry:
    if not isinstance(obj, dict):
        raise ValueError(f'manifest entry {index} is not an object')
    name = obj.get('name')
    for key in ('name', 'domain', 'prose'):
        if not isinstance(obj.get(key), str) or not obj[key]:
            raise ValueError(f'manifest entry {name or index} is missing "{key}"')
    n_elements = obj.get('expected_elements')
    n_relationships = obj.get('expected_relationships')
    if (n_elements is None) != (n_relationships is None):
        raise ValueError(f'manifest entry {name} must give both expected counts or neither')
    expected_counts = None if n_elements is None else (int(n_elements), int(n_relationships))
    decorators = obj.get('expected_decorators')
    return CorpusEntry(
        name=name,
        domain=obj['domain'],
        prose_path=base_dir.joinpath(obj['prose']),
        expected_counts=expected_counts,
        case_kind=obj.get('case_kind', DEFAULT_CASE_KIND),
        system_name=obj.get('system'),
        expected_decorators=None if decorators is None else int(decorators),
    )


def read_manifest(manifest_path: FSPath) -> List[CorpusEntry]:
    """Read a corpus manifest (a JSON array of entries).

    Prose paths are resolved relative to the manifest's directory.
    """
    manifest_path = Path(manifest_path)
    try:
        data = json.loads(manifest_path.read_text(encoding='utf-8'))
    except json.JSONDecodeError as ex:
        raise ValueError(f'invalid corpus manifest {manifest_path}: {ex}') from ex
    if not isinstance(data, list):
        raise ValueError(f'corpus manifest {manifest_path} must be a JSON array')
    entries = [_entry_from_json(obj, manifest_path.parent, i) for i, obj in enumerate(data)]
    names = set()
    for entry in entries:
        if entry.name in names:
            raise ValueError(f'duplicate corpus entry name: {entry.name}')
        names.add(entry.name)
    return entries


def _log_diagnostics(name, diagnostics):
    for diagnostic in diagnostics:
        level = logging.ERROR if diagnostic.severity is Severity.ERROR else logging.WARNING
        logger.log(level, '%s: %s', name, diagnostic)


def load_entry(entry: CorpusEntry) -> AssuranceCase:
    case, diagnostics = load_prose(entry.prose_path, entry.name, entry.case_kind, entry.system_name)
    _log_diagnostics(entry.name, diagnostics)
    for problem in entry.check(case):
        logger.warning(problem)
    return case


def load_corpus(manifest_path: FSPath) -> List[Tuple[CorpusEntry, AssuranceCase]]:
    return [(entry, load_entry(entry)) for entry in read_manifest(manifest_path)]


def find_entry(entries: Sequence[CorpusEntry], name: str) -> CorpusEntry:
    for entry in entries:
        if entry.name == name:
            return entry
    raise KeyError(name)


class ExperimentStore:
    """Append-only JSON Lines store of experiment records.

    One writer per store directory. Each record is written as a single complete line, and a
    partial final line left by an interrupted write is ignored on load and dropped on the next
    append.
    """

    def __init__(self, root: FSPath, create: bool = True):
        self.root = Path(root)
        if create:
            self.root.mkdir(parents=True, exist_ok=True)
        elif not self.root.is_dir():
            raise FileNotFoundError(f'experiment store does not exist: {self.root}')
        self.path = self.root / RECORDS_FILENAME

    def __repr__(self):
        return f'ExperimentStore({str(self.root)!r})'

    def _drop_torn_tail(self, f):
        f.seek(0, os.SEEK_END)
        size = f.tell()
        if size == 0:
            return
        f.seek(size - 1)
        if f.read(1) == b'\n':
            return
        f.seek(0)
        data = f.read()
        keep = data.rfind(b'\n') + 1
        logger.warning('%s: dropping %d bytes of incomplete record', self.path, size - keep)
        f.truncate(keep)

    def append_records(self, records: Iterable[ExperimentRecord]) -> int:
        count = 0
        with self.path.open('a+b') as f:
            self._drop_torn_tail(f)
            for record in records:
                line = json.dumps(record.to_json(), ensure_ascii=False) + '\n'
                f.write(line.encode('utf-8'))
                f.flush()
                os.fsync(f.fileno())
                count += 1
        return count

    def append_record(self, record: ExperimentRecord):
        self.append_records([record])

    def read_lines(self) -> List[str]:
        if not self.path.exists():
            return []
        text = self.path.read_text(encoding='utf-8')
        lines = text.split('\n')
        # The last piece is empty unless the final write was interrupted.
        if lines[-1]:
            logger.warning('%s: ignoring incomplete final record', self.path)
        return [line for line in lines[:-1] if line]

    def iter_records(self) -> Iterator[ExperimentRecord]:
        for line in self.read_lines():
            yield ExperimentRecord.from_json(json.loads(line))

    def load_records(
        self,
        case_name: Optional[str] = None,
        model: Optional[str] = None,
        strategy: Union[Strategy, str, None] = None,
        criterion: Union[Criterion, str, None] = None,
        run_index: Optional[int] = None,
    ) -> List[ExperimentRecord]:
        """Load stored records, in stored order, that match every given filter.

        Args:
            model: Matches either the full ``provider/model`` name or the model id.
        """
        if isinstance(strategy, str):
            strategy = Strategy.from_flag(strategy)
        if isinstance(criterion, str):
            criterion = Criterion.from_flag(criterion)
        result = []
        for record in self.iter_records():
            if case_name is not None and record.case_name != case_name:
                continue
            if model is not None and model not in (record.model.name, record.model.model_id):
                continue
            if strategy is not None and record.strategy is not strategy:
                continue
            if criterion is not None and record.criterion is not criterion:
                continue
            if run_index is not None and record.run_index != run_index:
                continue
            result.append(record)
        return result


@dataclass
class ReviewRow:
    record: ExperimentRecord
    review: ParsedReview
    ratings: List[AssessorRating] = field(default_factory=list)

    def scored_run(self) -> Optional[ScoredRun]:
        if self.review.score is None:
            return None
        r = self.record
        return ScoredRun(r.case_name, r.run_index, r.criterion.flag, r.strategy.flag, r.model.name,
                         self.review.score)

    def observations(self) -> List[Observation]:
        r = self.record
        keys = (r.model.name, r.strategy.flag, r.criterion.flag)
        result = []
        if self.review.score is not None:
            result.append(Observation(*keys, 'score', self.review.score))
        for rating in self.ratings:
            for metric in METRICS:
                result.append(Observation(*keys, metric, rating.metric(metric)))
        return result


def join_reviews(
    records: Iterable[ExperimentRecord],
    ratings: Iterable[AssessorRating] = (),
) -> List[ReviewRow]:
    """Pair every record with its parsed review and the assessor ratings given to it."""
    by_record = {}
    for rating in ratings:
        by_record.setdefault(rating.record_id, []).append(rating)
    return [
        ReviewRow(record, parse_review(record.raw_response), by_record.get(record.record_id, []))
        for record in records
    ]


def resolve_case(ref: str, entries: Sequence[CorpusEntry] = ()) -> AssuranceCase:
    """Load a case given either a corpus entry name or a path to a prose file."""
    for entry in entries:
        if entry.name == ref:
            return load_entry(entry)
    path = Path(ref)
    if path.suffix != '.gsn' and not path.exists():
        raise ValueError(f'no corpus entry or prose file named {ref}')
    case, diagnostics = load_prose(path)
    _log_diagnostics(case.name, diagnostics)
    return case
