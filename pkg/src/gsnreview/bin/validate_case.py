"""Check the well-formedness of an assurance case written in structured prose.

Exits with status 0 if the case is well-formed, 1 if it has structural errors or unparseable
lines, and 2 if the file cannot be read.
"""

import json
import logging
import sys

from gsnreview.constants import DEFAULT_CASE_KIND
from gsnreview.prose import Severity, load_prose
from gsnreview.util import EXIT_ENVIRONMENT, EXIT_FINDINGS, EXIT_OK, UsageArgumentParser
from gsnreview.wellformed import analyze

logger = logging.getLogger(__name__)


def argument_parser():
    parser = UsageArgumentParser(description='Check the well-formedness of an assurance case.')
    parser.add_argument('prose', type=str,
                        help='path to the structured prose (.gsn) file')
    parser.add_argument('--name', type=str, default=None,
                        help='name of the case (default: file name without suffix)')
    parser.add_argument('--case-kind', type=str, default=DEFAULT_CASE_KIND,
                        help='kind of assurance case, e.g. "safety case"')
    parser.add_argument('--json', action='store_true',
                        help='print the report as JSON')
    parser.add_argument('--verbose', action='store_true',
                        help='log debugging information')
    return parser


def main(args):
    opts = argument_parser().parse_args(args)
    logging.basicConfig(level=logging.DEBUG if opts.verbose else logging.WARNING)

    try:
        case, diagnostics = load_prose(opts.prose, opts.name, opts.case_kind)
    except (OSError, UnicodeDecodeError) as ex:
        print(f'cannot read {opts.prose}: {ex}', file=sys.stderr)
        return EXIT_ENVIRONMENT

    report = analyze(case)
    parse_errors = any(d.severity is Severity.ERROR for d in diagnostics)
    ok = not parse_errors and not report.has_errors()
    n_elements, n_relationships = case.counts()

    if opts.json:
        output = {
            'case_name': case.name,
            'elements': n_elements,
            'relationships': n_relationships,
            'decorators': case.decorator_count(),
            'diagnostics': [
                {'line': d.line_no, 'severity': d.severity.value, 'message': d.message}
                for d in diagnostics
            ],
            **report.to_json(),
            'ok': ok,
        }
        print(json.dumps(output, indent=2, ensure_ascii=False))
    else:
        print(f'{case.name}: {n_elements} elements, {n_relationships} relationships, '
              f'{case.decorator_count()} decorators')
        for diagnostic in diagnostics:
            print(diagnostic)
        print(report.to_text(), end='')

    return EXIT_OK if ok else EXIT_FINDINGS


if __name__ == '__main__':
    sys.exit(main(sys.argv[1:]))
