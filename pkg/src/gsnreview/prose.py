"""Structured prose format for GSN assurance cases.

One construct per line::

    G1: The system is acceptably safe.
    Sn1 (Solution): Hazard log.
    G1 is supported by S1, Sn1
    G1 is in the context of C1
    G2 is undeveloped
    D1 challenges G3
    G3 is defeated by D1
    D1 is a rebuttal defeater

A trailing backslash continues an element statement on the next line. Blank lines and lines
starting with ``#`` are ignored. References may select the n-th declaration of a duplicated
label with ``G3[2]``.
"""

import logging
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from gsnreview.case import (
    LABEL_PATTERN, REF_PATTERN, AssuranceCase, DefeaterKind, DEVELOPABLE_KINDS, ElementHandle, ElementKind,
    Endpoint, RelationKind, kind_for_label,
)
from gsnreview.constants import DEFAULT_CASE_KIND
from gsnreview.util import FSPath

logger = logging.getLogger(__name__)

_KIND_NAMES = '|'.join(kind.value for kind in ElementKind)

_ELEMENT_RE = re.compile(rf'^({LABEL_PATTERN})(?:\s+\(({_KIND_NAMES})\))?:\s?(.*)$', re.DOTALL)
_REF_RE = re.compile(rf'^({LABEL_PATTERN})(?:\[([1-9][0-9]*)\])?$')
_REF_LIST = rf'{REF_PATTERN}(?:\s*,\s*{REF_PATTERN})*'
_MULTI_TARGET_RES = [
    (re.compile(rf'^({REF_PATTERN})\s+is supported by\s+({_REF_LIST})$'), RelationKind.SUPPORTED_BY),
    (re.compile(rf'^({REF_PATTERN})\s+is in the context of\s+({_REF_LIST})$'), RelationKind.IN_CONTEXT_OF),
]
_SINGLE_TARGET_RES = [
    (re.compile(rf'^({REF_PATTERN})\s+challenges\s+({REF_PATTERN})$'), RelationKind.CHALLENGES),
    (re.compile(rf'^({REF_PATTERN})\s+is defeated by\s+({REF_PATTERN})$'), RelationKind.DEFEATED),
]
_UNDEVELOPED_RE = re.compile(rf'^({REF_PATTERN})\s+is undeveloped$')
_DEFEATER_RES = [
    (re.compile(rf'^({REF_PATTERN})\s+is a rebuttal defeater$'), DefeaterKind.REBUTTAL),
    (re.compile(rf'^({REF_PATTERN})\s+is an undercutting defeater$'), DefeaterKind.UNDERCUTTING),
]

_RELATION_PHRASES = {
    RelationKind.SUPPORTED_BY: '{src} is supported by {dst}',
    RelationKind.IN_CONTEXT_OF: '{src} is in the context of {dst}',
    RelationKind.CHALLENGES: '{src} challenges {dst}',
    RelationKind.DEFEATED: '{src} is defeated by {dst}',
}
_DEFEATER_PHRASES = {
    DefeaterKind.REBUTTAL: '{label} is a rebuttal defeater',
    DefeaterKind.UNDERCUTTING: '{label} is an undercutting defeater',
}


class Severity(Enum):
    WARNING = 'Warning'
    ERROR = 'Error'


@dataclass(frozen=True)
class ParseDiagnostic:
    line_no: int
    severity: Severity
    message: str

    def __str__(self):
        return f'line {self.line_no}: {self.severity.value.lower()}: {self.message}'


@dataclass
class _Declaration:
    line_no: int
    label: str
    kind: ElementKind
    text: str
    undeveloped: bool = False
    defeater: Optional[DefeaterKind] = None


def _logical_lines(text: str) -> List[Tuple[int, str]]:
    """Split text into (first physical line number, content) pairs, joining continuations."""
    physical = text.split('\n')
    if physical and physical[-1] == '':
        physical.pop()
    result = []
    pending: Optional[Tuple[int, List[str]]] = None
    for line_no, line in enumerate(physical, start=1):
        if line.endswith('\r'):
            line = line[:-1]
        if pending is None:
            pending = (line_no, [])
        if line.endswith('\\'):
            pending[1].append(line[:-1])
            continue
        pending[1].append(line)
        result.append((pending[0], '\n'.join(pending[1])))
        pending = None
    if pending is not None:
        result.append((pending[0], '\n'.join(pending[1])))
    return result


class _Parser:
    def __init__(self):
        self.declarations: List[_Declaration] = []
        self.by_label: Dict[str, List[int]] = {}
        self.diagnostics: List[ParseDiagnostic] = []
        # (line_no, src ref, dst ref, kind)
        self.statements: List[Tuple[int, str, str, RelationKind]] = []
        self.decorators: List[Tuple[int, str, Optional[DefeaterKind]]] = []

    def warn(self, line_no, message):
        self.diagnostics.append(ParseDiagnostic(line_no, Severity.WARNING, message))

    def error(self, line_no, message):
        self.diagnostics.append(ParseDiagnostic(line_no, Severity.ERROR, message))

    def read_line(self, line_no: int, line: str):
        stripped = line.strip()
        if not stripped or stripped.startswith('#'):
            return
        match = _ELEMENT_RE.match(stripped)
        if match:
            label, kind_name, text = match.groups()
            if kind_name is not None:
                kind = ElementKind(kind_name)
            else:
                kind = kind_for_label(label)
                if kind is None:
                    self.warn(line_no, f'label {label} has no known kind prefix, assuming Goal')
                    kind = ElementKind.GOAL
            self.by_label.setdefault(label, []).append(len(self.declarations))
            self.declarations.append(_Declaration(line_no, label, kind, text.strip()))
            return
        for regex, relation_kind in _MULTI_TARGET_RES:
            match = regex.match(stripped)
            if match:
                src, targets = match.groups()
                for dst in targets.split(','):
                    self.statements.append((line_no, src, dst.strip(), relation_kind))
                return
        for regex, relation_kind in _SINGLE_TARGET_RES:
            match = regex.match(stripped)
            if match:
                self.statements.append((line_no, match.group(1), match.group(2), relation_kind))
                return
        match = _UNDEVELOPED_RE.match(stripped)
        if match:
            self.decorators.append((line_no, match.group(1), None))
            return
        for regex, defeater_kind in _DEFEATER_RES:
            match = regex.match(stripped)
            if match:
                self.decorators.append((line_no, match.group(1), defeater_kind))
                return
        self.error(line_no, f'unrecognised line: {_shorten(stripped)}')

    def resolve(self, ref: str) -> Optional[int]:
        label, occurrence = _REF_RE.match(ref).groups()
        indices = self.by_label.get(label, [])
        position = int(occurrence) - 1 if occurrence else 0
        if position < len(indices):
            return indices[position]
        return None

    def apply_decorators(self):
        for line_no, ref, defeater_kind in self.decorators:
            index = self.resolve(ref)
            if index is None:
                self.warn(line_no, f'decorator refers to undeclared element {ref}')
                continue
            declaration = self.declarations[index]
            if defeater_kind is not None:
                declaration.defeater = defeater_kind
            elif declaration.kind not in DEVELOPABLE_KINDS:
                self.error(line_no, f'undeveloped decorator is not allowed on {declaration.kind.value} {ref}')
            else:
                declaration.undeveloped = True

    def build(self, name: str, case_kind: str, system_name: Optional[str]) -> AssuranceCase:
        self.apply_decorators()
        case = AssuranceCase(name, case_kind=case_kind, system_name=system_name)
        for d in self.declarations:
            case.add_element(d.label, d.kind, d.text, d.undeveloped, d.defeater)
        for line_no, src, dst, relation_kind in self.statements:
            endpoints = []
            for ref in (src, dst):
                index = self.resolve(ref)
                if index is None:
                    self.warn(line_no, f'reference to undeclared element {ref}')
                    endpoints.append(ref)
                else:
                    endpoints.append(ElementHandle(index))
            case.add_relationship(endpoints[0], endpoints[1], relation_kind)
        return case


def _shorten(text, max_len=40):
    text = text.replace('\n', ' ')
    return text if len(text) <= max_len else text[:max_len - 3] + '...'


def parse_prose(
    text: Union[str, bytes],
    name: str = 'case',
    case_kind: str = DEFAULT_CASE_KIND,
    system_name: Optional[str] = None,
) -> Tuple[AssuranceCase, List[ParseDiagnostic]]:
    """Parse structured prose into an assurance case.

    Defective content never aborts parsing: it is reported through the returned diagnostics.

    Args:
        text: The structured prose. Bytes are decoded as UTF-8.
        name: Name to give the case.
        case_kind: Kind of the case, e.g. "safety case".
        system_name: Name of the system the case argues about.

    Returns:
        The parsed case and the list of diagnostics, ordered by line number.
    """
    if isinstance(text, bytes):
        text = text.decode('utf-8')
    if not isinstance(text, str):
        raise TypeError(f'expected text, got {type(text).__name__}')
    parser = _Parser()
    for line_no, line in _logical_lines(text):
        parser.read_line(line_no, line)
    case = parser.build(name, case_kind, system_name)
    diagnostics = sorted(parser.diagnostics, key=lambda d: d.line_no)
    logger.debug('parsed %s: %d elements, %d relationships, %d diagnostics',
                 name, *case.counts(), len(diagnostics))
    return case, diagnostics


def load_prose(
    path: FSPath,
    name: Optional[str] = None,
    case_kind: str = DEFAULT_CASE_KIND,
    system_name: Optional[str] = None,
) -> Tuple[AssuranceCase, List[ParseDiagnostic]]:
    path = Path(path)
    if name is None:
        name = path.stem
    return parse_prose(path.read_text(encoding='utf-8'), name, case_kind, system_name)


def _reference(case: AssuranceCase, endpoint: Endpoint) -> str:
    if isinstance(endpoint, str):
        return endpoint
    label = case.element(endpoint).label
    occurrence = case.occurrence(endpoint)
    return label if occurrence == 1 else f'{label}[{occurrence}]'


def serialize_prose(case: AssuranceCase) -> str:
    """Render a case as structured prose.

    Elements come first in insertion order, then decorators, then one line per relationship.
    The output is byte-deterministic.
    """
    lines = []
    for element in case.elements:
        head = element.label
        if kind_for_label(element.label) is not element.kind:
            head += f' ({element.kind.value})'
        statement = f'{head}: {element.text}'
        if statement.endswith('\\'):
            # Continue onto an empty line so the final backslash is kept as text.
            statement += '\n'
        lines.append(statement.replace('\n', '\\\n'))
    for element in case.elements:
        if element.undeveloped:
            lines.append(f'{_reference(case, element.handle)} is undeveloped')
    for element in case.elements:
        if element.defeater is not None:
            lines.append(_DEFEATER_PHRASES[element.defeater].format(label=_reference(case, element.handle)))
    for relationship in case.relationships:
        lines.append(_RELATION_PHRASES[relationship.kind].format(
            src=_reference(case, relationship.src),
            dst=_reference(case, relationship.dst),
        ))
    if not lines:
        return ''
    return '\n'.join(lines) + '\n'


def save_prose(case: AssuranceCase, path: FSPath):
    Path(path).write_text(serialize_prose(case), encoding='utf-8')
