import hashlib
import os
import sys
from argparse import ArgumentParser
from typing import Union, AnyStr

FSPath = Union[AnyStr, os.PathLike]

EXIT_OK = 0
EXIT_FINDINGS = 1
EXIT_ENVIRONMENT = 2
EXIT_USAGE = 64


class UsageArgumentParser(ArgumentParser):
    """Argument parser which reports usage errors with exit status 64 (EX_USAGE)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f'{self.prog}: error: {message}\n')


def add_boolean_argument(parser: ArgumentParser, name, description, default):
    group = parser.add_mutually_exclusive_group(required=False)
    kebab_name = name.replace('_', '-')
    group.add_argument('--' + kebab_name, dest=name, action='store_true',
                       help=f'enable {description}')
    group.add_argument('--no-' + kebab_name, dest=name, action='store_false',
                       help=f'disable {description}')
    parser.set_defaults(**{name: default})


def sha256_hex(*parts: str, sep: str = '\n') -> str:
    """Hash the UTF-8 encoding of `parts` joined by `sep`."""
    return hashlib.sha256(sep.join(parts).encode('utf-8')).hexdigest()
