"""Compile the system and user prompts for reviewing a case against one criterion."""

import logging
import sys
from pathlib import Path

from gsnreview.config import load_config
from gsnreview.prompts import Criterion, OneShotExample, Strategy, compile
from gsnreview.store import read_manifest, resolve_case
from gsnreview.util import EXIT_ENVIRONMENT, EXIT_OK, UsageArgumentParser, add_boolean_argument

logger = logging.getLogger(__name__)

CRITERION_FLAGS = [criterion.flag for criterion in Criterion]
STRATEGY_FLAGS = [strategy.flag for strategy in Strategy]


def argument_parser():
    parser = UsageArgumentParser(description='Compile review prompts for an assurance case.')
    parser.add_argument('case', type=str,
                        help='corpus entry name or path to a structured prose (.gsn) file')
    parser.add_argument('--criterion', type=str, choices=CRITERION_FLAGS, required=True,
                        help='review criterion')
    parser.add_argument('--strategy', type=str, choices=STRATEGY_FLAGS, required=True,
                        help='prompting strategy')
    parser.add_argument('--example', type=str, default=None,
                        help='one-shot example prose file, with its review next to it as .review.txt')
    parser.add_argument('--config', type=str, default=None,
                        help='path to a JSON config file')
    parser.add_argument('--corpus', type=str, default=None,
                        help='corpus manifest used to look up cases by name')
    parser.add_argument('--output', type=str, default=None,
                        help='write to this file instead of stdout')
    add_boolean_argument(parser, 'strict_output', default=False,
                         description='asking for a machine-readable score line')
    add_boolean_argument(parser, 'json', default=True,
                         description='JSON output (plain prompts otherwise)')
    parser.add_argument('--verbose', action='store_true',
                        help='log debugging information')
    return parser


def main(args):
    parser = argument_parser()
    opts = parser.parse_args(args)
    logging.basicConfig(level=logging.DEBUG if opts.verbose else logging.WARNING)

    try:
        config = load_config(opts.config) if opts.config else None
    except (OSError, ValueError) as ex:
        print(f'cannot load config: {ex}', file=sys.stderr)
        return EXIT_ENVIRONMENT

    strategy = Strategy.from_flag(opts.strategy)
    example_path = opts.example or (config.example if config is not None else None)
    if strategy is Strategy.ONE_SHOT_COT and example_path is None:
        parser.error('the os-cot strategy requires --example')
    if strategy is not Strategy.ONE_SHOT_COT and opts.example is not None:
        parser.error(f'--example cannot be used with the {opts.strategy} strategy')

    manifest = opts.corpus or (config.corpus if config is not None else None)
    try:
        entries = read_manifest(manifest) if manifest else []
        case = resolve_case(opts.case, entries)
        example = None
        if strategy is Strategy.ONE_SHOT_COT:
            example = OneShotExample.load(example_path)
    except (OSError, ValueError) as ex:
        print(f'cannot load input: {ex}', file=sys.stderr)
        return EXIT_ENVIRONMENT

    bundle = compile(case, Criterion.from_flag(opts.criterion), strategy, example,
                     strict_output=opts.strict_output)
    logger.info('%s: prompt fingerprint %s', case.name, bundle.fingerprint)
    if opts.json:
        text = bundle.dumps() + '\n'
    else:
        text = f'{bundle.system_prompt}\n\n{bundle.user_prompt}\n'

    if opts.output:
        try:
            Path(opts.output).write_text(text, encoding='utf-8')
        except OSError as ex:
            print(f'cannot write {opts.output}: {ex}', file=sys.stderr)
            return EXIT_ENVIRONMENT
    else:
        sys.stdout.write(text)
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main(sys.argv[1:]))
