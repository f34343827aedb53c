"""Send review prompts for a grid of cases, criteria, strategies and models, and store the
responses.

Every (case, criterion, strategy, model, run) combination produces one record in the experiment
store. Failed completions are stored with an error marker and make the script exit with status 1.
"""

import json
import logging
import sys

from tqdm import tqdm

from gsnreview.config import CliConfig, load_config
from gsnreview.gateway import ConfigurationError, Gateway, ModelSpec, grid_size, run_experiment
from gsnreview.prompts import Criterion, OneShotExample, Strategy
from gsnreview.review import extract_score
from gsnreview.store import ExperimentStore, read_manifest, resolve_case
from gsnreview.util import EXIT_ENVIRONMENT, EXIT_FINDINGS, EXIT_OK, UsageArgumentParser, add_boolean_argument

logger = logging.getLogger(__name__)

ALL = 'all'


def argument_parser():
    parser = UsageArgumentParser(description='Run LLM-based reviews of assurance cases.')
    parser.add_argument('--config', type=str, default=None,
                        help='path to a JSON config file')
    parser.add_argument('--corpus', type=str, default=None,
                        help='corpus manifest (default: from config)')
    parser.add_argument('--case', type=str, action='append', default=None,
                        help='corpus entry name or .gsn path; repeatable (default: every corpus entry)')
    parser.add_argument('--criterion', type=str, action='append', default=None,
                        choices=[c.flag for c in Criterion] + [ALL],
                        help='review criterion; repeatable (default: all)')
    parser.add_argument('--strategy', type=str, action='append', default=None,
                        choices=[s.flag for s in Strategy] + [ALL],
                        help='prompting strategy; repeatable (default: zs)')
    parser.add_argument('--model', type=str, action='append', default=None,
                        help='model as provider/model, e.g. openai/gpt-4o or mock/a; repeatable')
    parser.add_argument('--runs', type=int, default=None,
                        help='number of times each prompt is sent')
    parser.add_argument('--store', type=str, default=None,
                        help='experiment store directory')
    parser.add_argument('--concurrency', type=int, default=None,
                        help='maximum number of requests in flight')
    parser.add_argument('--example', type=str, default=None,
                        help='one-shot example prose file, with its review next to it as .review.txt')
    add_boolean_argument(parser, 'strict_output', default=None,
                         description='asking for a machine-readable score line')
    parser.add_argument('--json', action='store_true',
                        help='print a JSON summary of the stored records')
    parser.add_argument('--verbose', action='store_true',
                        help='log debugging information')
    return parser


def _select(flags, enum_type, default):
    if not flags:
        return list(default)
    if ALL in flags:
        return list(enum_type)
    selected = []
    for flag in flags:
        value = enum_type.from_flag(flag)
        if value not in selected:
            selected.append(value)
    return selected


def _summary(record):
    score = extract_score(record.raw_response) if not record.failed else None
    return {
        'record_id': record.record_id,
        'case_name': record.case_name,
        'model': record.model.name,
        'strategy': record.strategy.flag,
        'criterion': record.criterion.flag,
        'run_index': record.run_index,
        'score': score,
        'error': record.error,
    }


def _summary_line(summary):
    head = (f'{summary["case_name"]} {summary["criterion"]} {summary["strategy"]} '
            f'{summary["model"]} run {summary["run_index"]}')
    if summary['error'] is not None:
        return f'{head}: error: {summary["error"]}'
    score = summary['score'] if summary['score'] is not None else 'no score'
    return f'{head}: {score}'


def main(args):
    parser = argument_parser()
    opts = parser.parse_args(args)
    logging.basicConfig(level=logging.DEBUG if opts.verbose else logging.WARNING)

    try:
        config = load_config(opts.config) if opts.config else CliConfig()
        models = [ModelSpec.parse(m) for m in opts.model] if opts.model else None
        config = config.override(
            corpus=opts.corpus, store=opts.store, example=opts.example, models=models, runs=opts.runs,
            concurrency=opts.concurrency, strict_output=opts.strict_output,
        )
    except (OSError, ValueError) as ex:
        print(f'invalid configuration: {ex}', file=sys.stderr)
        return EXIT_ENVIRONMENT
    if config.store is None:
        parser.error('an experiment store is required (--store or "store" in the config file)')
    if not config.models:
        parser.error('at least one model is required (--model or "models" in the config file)')

    criteria = _select(opts.criterion, Criterion, Criterion)
    strategies = _select(opts.strategy, Strategy, [Strategy.ZERO_SHOT])

    try:
        entries = read_manifest(config.corpus) if config.corpus else []
        if opts.case:
            cases = [resolve_case(ref, entries) for ref in opts.case]
        else:
            if not entries:
                parser.error('no cases given (--case, --corpus or "corpus" in the config file)')
            cases = [resolve_case(entry.name, entries) for entry in entries]
        example = None
        if Strategy.ONE_SHOT_COT in strategies and config.example is not None:
            example = OneShotExample.load(config.example)
        store = ExperimentStore(config.store)
    except (OSError, ValueError) as ex:
        print(f'cannot load input: {ex}', file=sys.stderr)
        return EXIT_ENVIRONMENT

    try:
        gateway = Gateway.from_env(config.models, timeout=config.timeout, max_attempts=config.max_attempts)
    except ConfigurationError as ex:
        print(f'invalid configuration: {ex}', file=sys.stderr)
        return EXIT_ENVIRONMENT

    summaries = []
    try:
        try:
            records = run_experiment(gateway, cases, criteria, strategies, config.models, config.runs,
                                     example, strict_output=config.strict_output,
                                     concurrency=config.concurrency)
        except ConfigurationError as ex:
            print(f'invalid configuration: {ex}', file=sys.stderr)
            return EXIT_ENVIRONMENT
        total = grid_size(len(cases), len(criteria), len(strategies), len(config.models), config.runs)
        with tqdm(records, total=total, leave=True, ascii=True, desc='Reviewing') as progress:
            for record in progress:
                store.append_record(record)
                summary = _summary(record)
                summaries.append(summary)
                if not opts.json:
                    progress.write(_summary_line(summary))
    finally:
        gateway.close()

    n_failed = sum(1 for s in summaries if s['error'] is not None)
    if n_failed:
        logger.warning('%d of %d reviews failed', n_failed, len(summaries))
    if opts.json:
        print(json.dumps({
            'store': str(store.root),
            'records': len(summaries),
            'failed': n_failed,
            'results': summaries,
        }, indent=2, ensure_ascii=False))
    return EXIT_FINDINGS if n_failed else EXIT_OK


if __name__ == '__main__':
    sys.exit(main(sys.argv[1:]))
