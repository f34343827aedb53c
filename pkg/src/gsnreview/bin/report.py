"""Summarise an experiment store as tables of mean scores and inter-rater agreement.

The mean LLM score table and the inter-model agreement table are always printed. With a ratings
file, the mean assessor ratings and the inter-assessor agreement for each metric follow.
"""

import json
import logging
import sys

from gsnreview.metrics import (
    GROUP_KEYS, METRICS, aggregate_mean, assessor_agreement, export_agreement, export_table,
    load_ratings, model_agreement,
)
from gsnreview.store import ExperimentStore, join_reviews
from gsnreview.util import EXIT_ENVIRONMENT, EXIT_FINDINGS, EXIT_OK, UsageArgumentParser

logger = logging.getLogger(__name__)

TABLE_FORMATS = ['csv', 'markdown']


def argument_parser():
    parser = UsageArgumentParser(description='Summarise the reviews in an experiment store.')
    parser.add_argument('--store', type=str, required=True,
                        help='experiment store directory')
    parser.add_argument('--ratings', type=str, default=None,
                        help='CSV file of assessor ratings')
    parser.add_argument('--format', type=str, choices=TABLE_FORMATS, default='csv',
                        help='table format')
    parser.add_argument('--group-by', type=str, nargs='+', choices=GROUP_KEYS[:-1],
                        default=list(GROUP_KEYS[:-1]),
                        help='keys to group mean values by (others are reported as "all")')
    parser.add_argument('--json', action='store_true',
                        help='print the tables as JSON')
    parser.add_argument('--verbose', action='store_true',
                        help='log debugging information')
    return parser


def _section(title, table, fmt):
    heading = f'## {title}' if fmt == 'markdown' else f'# {title}'
    return f'{heading}\n{table}'


def main(args):
    opts = argument_parser().parse_args(args)
    logging.basicConfig(level=logging.DEBUG if opts.verbose else logging.WARNING)

    try:
        store = ExperimentStore(opts.store, create=False)
        records = store.load_records()
        ratings = load_ratings(opts.ratings) if opts.ratings else []
    except (OSError, ValueError) as ex:
        print(f'cannot load input: {ex}', file=sys.stderr)
        return EXIT_ENVIRONMENT
    if not records:
        print(f'experiment store {opts.store} holds no records', file=sys.stderr)
        return EXIT_FINDINGS

    rows = join_reviews(records, ratings)
    known_ids = {record.record_id for record in records}
    unknown = sum(1 for rating in ratings if rating.record_id not in known_ids)
    if unknown:
        logger.warning('%d ratings refer to records that are not in the store', unknown)

    group_by = list(opts.group_by) + ['metric']
    observations = [obs for row in rows for obs in row.observations()]
    scores = aggregate_mean((obs for obs in observations if obs.metric == 'score'), group_by)
    scored_runs = [run for run in (row.scored_run() for row in rows) if run is not None]
    agreement = model_agreement(scored_runs)
    unscored = len(rows) - len(scored_runs)
    if unscored:
        logger.warning('%d of %d responses state no score', unscored, len(rows))

    rating_means = None
    rating_agreement = {}
    if opts.ratings:
        rating_means = aggregate_mean((obs for obs in observations if obs.metric in METRICS), group_by)
        rated = [
            (row.record.criterion.flag, row.record.strategy.flag, rating)
            for row in rows for rating in row.ratings
        ]
        for metric in METRICS:
            rating_agreement[metric] = assessor_agreement(rated, metric)

    if opts.json:
        output = {
            'records': len(rows),
            'unscored': unscored,
            'scores': [cell.to_json() for cell in scores],
            'model_agreement': [cell.to_json() for cell in agreement],
        }
        if rating_means is not None:
            output['ratings'] = [cell.to_json() for cell in rating_means]
            output['assessor_agreement'] = {
                metric: [cell.to_json() for cell in cells] for metric, cells in rating_agreement.items()
            }
        print(json.dumps(output, indent=2, ensure_ascii=False))
        return EXIT_OK

    sections = [
        _section('Mean scores', export_table(scores, opts.format), opts.format),
        _section('Inter-model agreement', export_agreement(agreement, opts.format), opts.format),
    ]
    if rating_means is not None:
        sections.append(_section('Mean ratings', export_table(rating_means, opts.format), opts.format))
        for metric, cells in rating_agreement.items():
            sections.append(_section(f'Inter-assessor agreement ({metric})',
                                     export_agreement(cells, opts.format), opts.format))
    print('\n'.join(sections), end='')
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main(sys.argv[1:]))
