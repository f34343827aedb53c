"""Static well-formedness checks for assurance cases."""

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, List, Optional, Set

import networkx as nx

from gsnreview.case import (
    AssuranceCase, DEVELOPABLE_KINDS, ElementHandle, RelationKind, kind_for_label,
)
from gsnreview.review import DuplicateGroupF


class IssueKind(Enum):
    DUPLICATE_LABEL = 'DuplicateLabel'
    CYCLE = 'Cycle'
    UNSUPPORTED_GOAL = 'UnsupportedGoal'
    UNDEVELOPED_ELEMENT = 'UndevelopedElement'
    DANGLING_REFERENCE = 'DanglingReference'
    NAMING_VIOLATION = 'NamingViolation'
    UNREACHABLE_ELEMENT = 'UnreachableElement'
    MULTIPLE_ROOTS = 'MultipleRoots'


# Issue kinds that are reported but do not count as errors.
INFORMATIONAL_KINDS = frozenset([IssueKind.UNDEVELOPED_ELEMENT])


@dataclass(frozen=True)
class StructuralIssue:
    kind: IssueKind
    labels: List[str]
    detail: str

    def __post_init__(self):
        if not self.labels:
            raise ValueError('structural issue must name at least one label')
        if self.kind is IssueKind.DUPLICATE_LABEL:
            if len(self.labels) < 2 or len(set(self.labels)) != 1:
                raise ValueError('duplicate label issue must list at least two equal labels')

    def sort_key(self):
        return self.kind.value, self.labels[0], self.detail

    def to_json(self) -> dict:
        return {'kind': self.kind.value, 'labels': list(self.labels), 'detail': self.detail}


@dataclass
class StructuralReport:
    case_name: str
    issues: List[StructuralIssue] = field(default_factory=list)

    def __len__(self):
        return len(self.issues)

    def of_kind(self, kind: IssueKind) -> List[StructuralIssue]:
        return [issue for issue in self.issues if issue.kind is kind]

    def has_errors(self) -> bool:
        return any(issue.kind not in INFORMATIONAL_KINDS for issue in self.issues)

    def to_json(self) -> dict:
        return {'case_name': self.case_name, 'issues': [issue.to_json() for issue in self.issues]}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, ensure_ascii=False)

    def to_text(self) -> str:
        if not self.issues:
            return f'{self.case_name}: no structural issues\n'
        lines = [f'{self.case_name}: {len(self.issues)} structural issue(s)']
        for issue in self.issues:
            lines.append(f'  [{issue.kind.value}] {", ".join(issue.labels)}: {issue.detail}')
        return '\n'.join(lines) + '\n'


def _support_graph(case: AssuranceCase, *kinds: RelationKind) -> nx.DiGraph:
    graph = nx.DiGraph()
    graph.add_nodes_from(e.handle for e in case.elements)
    graph.add_edges_from(case.edges(*kinds))
    return graph


def _sorted(issues: Iterable[StructuralIssue]) -> List[StructuralIssue]:
    return sorted(issues, key=StructuralIssue.sort_key)


def check_duplicates(case: AssuranceCase) -> List[StructuralIssue]:
    issues = []
    for label, handles in case.label_histogram().items():
        if len(handles) < 2:
            continue
        texts = '; '.join(f'"{case.element(h).text}"' for h in handles)
        issues.append(StructuralIssue(
            IssueKind.DUPLICATE_LABEL,
            [label] * len(handles),
            f'label {label} is declared {len(handles)} times: {texts}',
        ))
    return _sorted(issues)


def check_cycles(case: AssuranceCase) -> List[StructuralIssue]:
    """Find circular support, ignoring contextual relationships."""
    graph = _support_graph(case, RelationKind.SUPPORTED_BY)
    issues = []
    for component in nx.strongly_connected_components(graph):
        if len(component) < 2:
            handle = next(iter(component))
            if not graph.has_edge(handle, handle):
                continue
        handles = sorted(component)
        labels = [case.element(h).label for h in handles]
        issues.append(StructuralIssue(
            IssueKind.CYCLE,
            labels,
            'circular support among ' + ', '.join(labels),
        ))
    return _sorted(issues)


def check_support(case: AssuranceCase) -> List[StructuralIssue]:
    supporters = {r.src for r in case.relationships if r.kind is RelationKind.SUPPORTED_BY}
    issues = []
    for element in case.elements:
        if element.undeveloped:
            issues.append(StructuralIssue(
                IssueKind.UNDEVELOPED_ELEMENT,
                [element.label],
                f'{element.kind.value} {element.label} is marked undeveloped',
            ))
        elif element.kind in DEVELOPABLE_KINDS and element.handle not in supporters:
            issues.append(StructuralIssue(
                IssueKind.UNSUPPORTED_GOAL,
                [element.label],
                f'{element.kind.value} {element.label} has no supporting element',
            ))
    return _sorted(issues)


def check_references(case: AssuranceCase) -> List[StructuralIssue]:
    issues = []
    for relationship in case.relationships:
        unresolved = relationship.unresolved_labels()
        if unresolved:
            issues.append(StructuralIssue(
                IssueKind.DANGLING_REFERENCE,
                unresolved,
                '{} {} {} refers to an undeclared element'.format(
                    case.endpoint_label(relationship.src),
                    relationship.kind.value,
                    case.endpoint_label(relationship.dst),
                ),
            ))
    graph = _support_graph(case, RelationKind.SUPPORTED_BY, RelationKind.IN_CONTEXT_OF)
    reachable: Set[ElementHandle] = set()
    for root in case.roots():
        reachable.add(root)
        reachable.update(nx.descendants(graph, root))
    for element in case.elements:
        if element.handle not in reachable:
            issues.append(StructuralIssue(
                IssueKind.UNREACHABLE_ELEMENT,
                [element.label],
                f'{element.kind.value} {element.label} is not reachable from any root',
            ))
    return _sorted(issues)


def defeater_handles(case: AssuranceCase) -> Set[ElementHandle]:
    """Get the elements acting as defeaters (challengers, defeating elements or annotated)."""
    handles = {e.handle for e in case.elements if e.defeater is not None}
    for relationship in case.relationships:
        if relationship.kind is RelationKind.CHALLENGES and not isinstance(relationship.src, str):
            handles.add(relationship.src)
        if relationship.kind is RelationKind.DEFEATED and not isinstance(relationship.dst, str):
            handles.add(relationship.dst)
    return handles


def check_roots(case: AssuranceCase) -> List[StructuralIssue]:
    defeaters = defeater_handles(case)
    roots = [h for h in case.roots() if h not in defeaters]
    if len(roots) < 2:
        return []
    labels = [case.element(h).label for h in roots]
    return [StructuralIssue(
        IssueKind.MULTIPLE_ROOTS,
        labels,
        f'case has {len(labels)} top-level claims: ' + ', '.join(labels),
    )]


def check_naming(case: AssuranceCase) -> List[StructuralIssue]:
    issues = []
    for element in case.elements:
        if kind_for_label(element.label) is not element.kind:
            issues.append(StructuralIssue(
                IssueKind.NAMING_VIOLATION,
                [element.label],
                f'{element.kind.value} {element.label} should be labelled with prefix '
                f'"{element.kind.label_prefix}"',
            ))
    return _sorted(issues)


ALL_CHECKS = [check_duplicates, check_cycles, check_support, check_references, check_roots, check_naming]


def analyze(case: AssuranceCase) -> StructuralReport:
    """Run every structural check over a case.

    Returns:
        A report whose issues are ordered by (kind, first label, detail).
    """
    issues = []
    for check in ALL_CHECKS:
        issues.extend(check(case))
    return StructuralReport(case.name, _sorted(issues))


@dataclass(frozen=True)
class DuplicateRecall:
    expected: List[str]
    found: List[str]
    missed: List[str]
    spurious: List[str]

    @property
    def recall(self) -> Optional[float]:
        if not self.expected:
            return None
        return len(self.found) / len(self.expected)


def duplicate_recall(report: StructuralReport, findings: Iterable) -> DuplicateRecall:
    """Compare the duplicate labels found by the analyzer with the duplicate groups of a review.

    Args:
        report: Analyzer report for the reviewed case.
        findings: Findings parsed from an LLM review of the same case.
    """
    expected = {issue.labels[0] for issue in report.of_kind(IssueKind.DUPLICATE_LABEL)}
    reported = set()
    for finding in findings:
        if isinstance(finding, DuplicateGroupF):
            reported.update(label for label, _ in finding.entries)
    return DuplicateRecall(
        expected=sorted(expected),
        found=sorted(expected & reported),
        missed=sorted(expected - reported),
        spurious=sorted(reported - expected),
    )
