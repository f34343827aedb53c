"""Assessor ratings, aggregate tables and Fleiss' kappa."""

import csv
import io
from collections import OrderedDict
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Dict, Hashable, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from gsnreview.constants import MAX_SCORE, MIN_SCORE, N_CATEGORIES
from gsnreview.util import FSPath

METRICS = ('informativeness', 'coherence', 'usefulness')
GROUP_KEYS = ('llm', 'strategy', 'criterion', 'metric')
TABLE_COLUMNS = GROUP_KEYS + ('mean', 'count')
RATINGS_HEADER = ('record_id', 'assessor_id') + METRICS
# Placeholder for group keys that were aggregated over.
ALL = 'all'


class Undefined(Enum):
    """Kappa of a rating matrix whose chance agreement is total."""
    UNDEFINED = 'undefined'

    def __str__(self):
        return self.value


UNDEFINED = Undefined.UNDEFINED
Kappa = Union[float, Undefined]


def check_score(value, what='score') -> int:
    if isinstance(value, bool) or int(value) != value or not MIN_SCORE <= value <= MAX_SCORE:
        raise ValueError(f'{what} must be an integer from {MIN_SCORE} to {MAX_SCORE}, got {value!r}')
    return int(value)


@dataclass(frozen=True)
class AssessorRating:
    record_id: str
    assessor_id: str
    informativeness: int
    coherence: int
    usefulness: int

    def __post_init__(self):
        for metric in METRICS:
            check_score(getattr(self, metric), metric)

    def metric(self, name: str) -> int:
        if name not in METRICS:
            raise ValueError(f'unknown metric: {name}')
        return getattr(self, name)


def read_ratings(text: str) -> List[AssessorRating]:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or tuple(reader.fieldnames) != RATINGS_HEADER:
        raise ValueError(f'ratings header must be {",".join(RATINGS_HEADER)}')
    ratings = []
    seen = set()
    for row in reader:
        key = (row['record_id'], row['assessor_id'])
        if key in seen:
            raise ValueError(f'duplicate rating of record {key[0]} by assessor {key[1]}')
        seen.add(key)
        try:
            values = [int(row[metric]) for metric in METRICS]
        except (TypeError, ValueError):
            raise ValueError(f'non-integer rating for record {key[0]} by assessor {key[1]}') from None
        ratings.append(AssessorRating(key[0], key[1], *values))
    return ratings


def load_ratings(path: FSPath) -> List[AssessorRating]:
    return read_ratings(Path(path).read_text(encoding='utf-8'))


class RatingMatrix:
    """Counts of raters assigning each category to each subject.

    Row i, column j holds the number of raters who put subject i in category j + 1.
    """

    def __init__(self, counts, subjects: Optional[Sequence[Hashable]] = None):
        counts = np.asarray(counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] < 1 or counts.shape[1] != N_CATEGORIES:
            raise ValueError(f'rating matrix must have shape (N >= 1, {N_CATEGORIES}), got {counts.shape}')
        if (counts < 0).any():
            raise ValueError('rating counts must be non-negative')
        row_sums = counts.sum(axis=1)
        if (row_sums != row_sums[0]).any():
            raise ValueError('every subject must be rated by the same number of raters')
        if row_sums[0] < 2:
            raise ValueError('at least two raters are required')
        self.counts = counts
        self.subjects = list(subjects) if subjects is not None else list(range(counts.shape[0]))

    @property
    def n_subjects(self) -> int:
        return self.counts.shape[0]

    @property
    def raters_per_subject(self) -> int:
        return int(self.counts[0].sum())


def build_rating_matrix(scores: Mapping[Hashable, Sequence[int]]) -> RatingMatrix:
    """Count the scores given to each subject.

    Args:
        scores: Mapping from subject to the score given by each rater.
    """
    if not scores:
        raise ValueError('at least one subject is required')
    n = None
    rows = []
    for subject, subject_scores in scores.items():
        if n is None:
            n = len(subject_scores)
        elif len(subject_scores) != n:
            raise ValueError(f'subject {subject!r} has {len(subject_scores)} scores, expected {n}')
        row = np.zeros(N_CATEGORIES, dtype=np.int64)
        for score in subject_scores:
            row[check_score(score) - MIN_SCORE] += 1
        rows.append(row)
    return RatingMatrix(np.stack(rows), subjects=list(scores.keys()))


def fleiss_kappa(matrix: RatingMatrix) -> Kappa:
    """Calculate Fleiss' kappa with exact rational arithmetic.

    Returns:
        Kappa in [-1, 1], or ``UNDEFINED`` when the expected chance agreement is 1.
    """
    counts = matrix.counts
    n_subjects = matrix.n_subjects
    n = matrix.raters_per_subject
    n_total = n_subjects * n
    column_sums = [int(x) for x in counts.sum(axis=0)]
    p_expected = Fraction(sum(c * c for c in column_sums), n_total * n_total)
    if p_expected == 1:
        return UNDEFINED
    sum_squares = int((counts * counts).sum())
    p_mean = Fraction(sum_squares - n_total, n_total * (n - 1))
    return float((p_mean - p_expected) / (1 - p_expected))


@dataclass(frozen=True)
class Observation:
    llm: str
    strategy: str
    criterion: str
    metric: str
    value: int


@dataclass(frozen=True)
class AggregateCell:
    llm: str
    strategy: str
    criterion: str
    metric: str
    mean: Fraction
    count: int

    @property
    def key(self) -> Tuple[str, str, str, str]:
        return self.llm, self.strategy, self.criterion, self.metric

    def to_json(self) -> dict:
        return {'llm': self.llm, 'strategy': self.strategy, 'criterion': self.criterion,
                'metric': self.metric, 'mean': float(self.mean), 'count': self.count}


class AggregateTable:
    def __init__(self, cells: Iterable[AggregateCell]):
        self.cells = list(cells)

    def __len__(self):
        return len(self.cells)

    def __iter__(self):
        return iter(self.cells)

    def cell(self, llm=ALL, strategy=ALL, criterion=ALL, metric=ALL) -> AggregateCell:
        for cell in self.cells:
            if cell.key == (llm, strategy, criterion, metric):
                return cell
        raise KeyError((llm, strategy, criterion, metric))


def aggregate_mean(observations: Iterable[Observation], group_by: Sequence[str] = GROUP_KEYS) -> AggregateTable:
    """Average observed values per group.

    Args:
        observations: Scores or ratings, each in 1..5.
        group_by: Subset of ``GROUP_KEYS`` to group by. Other keys are reported as "all".

    Returns:
        One cell per non-empty group, ordered by group key.
    """
    for key in group_by:
        if key not in GROUP_KEYS:
            raise ValueError(f'cannot group by {key}')
    totals: Dict[Tuple[str, ...], List[int]] = OrderedDict()
    for obs in observations:
        value = check_score(obs.value, 'value')
        key = tuple(getattr(obs, k) if k in group_by else ALL for k in GROUP_KEYS)
        total = totals.setdefault(key, [0, 0])
        total[0] += value
        total[1] += 1
    return AggregateTable(
        AggregateCell(*key, mean=Fraction(total, count), count=count)
        for key, (total, count) in sorted(totals.items())
    )


def _format_mean(mean) -> str:
    return f'{float(mean):.4f}'


def export_table(table: AggregateTable, fmt: str = 'csv') -> str:
    rows = [[*cell.key, _format_mean(cell.mean), str(cell.count)] for cell in table]
    return export_rows(TABLE_COLUMNS, rows, fmt)


def export_rows(header: Sequence[str], rows: Sequence[Sequence[str]], fmt: str = 'csv') -> str:
    if fmt == 'csv':
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator='\n')
        writer.writerow(header)
        writer.writerows(rows)
        return buffer.getvalue()
    if fmt == 'markdown':
        lines = [
            '| ' + ' | '.join(header) + ' |',
            '|' + '|'.join('---' for _ in header) + '|',
        ]
        for row in rows:
            lines.append('| ' + ' | '.join(row) + ' |')
        return '\n'.join(lines) + '\n'
    raise ValueError(f'unknown table format: {fmt}')


def parse_table_csv(text: str) -> AggregateTable:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(header) != TABLE_COLUMNS:
        raise ValueError(f'table header must be {",".join(TABLE_COLUMNS)}')
    cells = []
    for row in reader:
        if not row:
            continue
        llm, strategy, criterion, metric, mean, count = row
        cells.append(AggregateCell(llm, strategy, criterion, metric, Fraction(mean), int(count)))
    return AggregateTable(cells)


@dataclass(frozen=True)
class ScoredRun:
    case_name: str
    run_index: int
    criterion: str
    strategy: str
    model: str
    score: int


@dataclass(frozen=True)
class AgreementCell:
    criterion: str
    strategy: str
    kappa: Kappa
    subjects: int
    dropped: int

    def to_json(self) -> dict:
        kappa = str(self.kappa) if self.kappa is UNDEFINED else self.kappa
        return {'criterion': self.criterion, 'strategy': self.strategy, 'kappa': kappa,
                'subjects': self.subjects, 'dropped': self.dropped}


def cell_agreement(ratings: Iterable[Tuple[Tuple[str, str], Hashable, Hashable, int]]) -> List[AgreementCell]:
    """Calculate Fleiss' kappa for each (criterion, strategy) cell.

    Args:
        ratings: (cell key, subject, rater, score) tuples. Subjects that some rater of their
            cell did not score are dropped.
    """
    cells: Dict[Tuple[str, str], Dict[Hashable, Dict[Hashable, int]]] = OrderedDict()
    raters: Dict[Tuple[str, str], set] = {}
    for cell_key, subject, rater, score in ratings:
        cells.setdefault(cell_key, OrderedDict()).setdefault(subject, {})[rater] = check_score(score)
        raters.setdefault(cell_key, set()).add(rater)
    result = []
    for cell_key in sorted(cells):
        cell_raters = sorted(raters[cell_key])
        complete = OrderedDict()
        for subject, by_rater in cells[cell_key].items():
            if len(by_rater) == len(cell_raters):
                complete[subject] = [by_rater[r] for r in cell_raters]
        dropped = len(cells[cell_key]) - len(complete)
        if len(cell_raters) < 2 or not complete:
            kappa = UNDEFINED
        else:
            kappa = fleiss_kappa(build_rating_matrix(complete))
        result.append(AgreementCell(*cell_key, kappa=kappa, subjects=len(complete), dropped=dropped))
    return result


def model_agreement(scored_runs: Iterable[ScoredRun]) -> List[AgreementCell]:
    """Calculate inter-model agreement for each (criterion, strategy) pair.

    Subjects are (case, run) pairs and raters are the models.
    """
    return cell_agreement(
        ((run.criterion, run.strategy), (run.case_name, run.run_index), run.model, run.score)
        for run in scored_runs
    )


def assessor_agreement(rated: Iterable[Tuple[str, str, AssessorRating]], metric: str) -> List[AgreementCell]:
    """Calculate inter-assessor agreement on one metric for each (criterion, strategy) pair.

    Args:
        rated: (criterion, strategy, rating) triples. Subjects are the rated records and raters
            are the assessors.
        metric: One of ``METRICS``.
    """
    if metric not in METRICS:
        raise ValueError(f'unknown metric: {metric}')
    return cell_agreement(
        ((criterion, strategy), rating.record_id, rating.assessor_id, rating.metric(metric))
        for criterion, strategy, rating in rated
    )


def format_kappa(kappa: Kappa) -> str:
    return str(kappa) if kappa is UNDEFINED else f'{kappa:.4f}'


def export_agreement(cells: Sequence[AgreementCell], fmt: str = 'csv') -> str:
    rows = [[c.criterion, c.strategy, format_kappa(c.kappa)] for c in cells]
    return export_rows(('criterion', 'strategy', 'kappa'), rows, fmt)
