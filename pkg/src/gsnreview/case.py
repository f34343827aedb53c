import re
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, NewType, Optional, Sequence, Tuple, Union

from gsnreview.constants import DEFAULT_CASE_KIND

ElementHandle = NewType('ElementHandle', int)
# A relationship endpoint is either a handle or the label text of a reference
# that could not be resolved.
Endpoint = Union[ElementHandle, str]

LABEL_PATTERN = r'[A-Za-z][A-Za-z0-9._-]*'
# A reference may select the n-th declaration of a duplicated label, e.g. "G3[2]".
REF_PATTERN = LABEL_PATTERN + r'(?:\[[1-9][0-9]*\])?'
_LABEL_RE = re.compile(LABEL_PATTERN)
_REF_RE = re.compile(REF_PATTERN)


class ElementKind(Enum):
    GOAL = 'Goal'
    STRATEGY = 'Strategy'
    SOLUTION = 'Solution'
    CONTEXT = 'Context'
    ASSUMPTION = 'Assumption'
    JUSTIFICATION = 'Justification'

    @property
    def label_prefix(self) -> str:
        return LABEL_PREFIXES[self]


LABEL_PREFIXES = {
    ElementKind.GOAL: 'G',
    ElementKind.STRATEGY: 'S',
    ElementKind.SOLUTION: 'Sn',
    ElementKind.CONTEXT: 'C',
    ElementKind.ASSUMPTION: 'A',
    ElementKind.JUSTIFICATION: 'J',
}

# Only these kinds may carry the undeveloped decorator.
DEVELOPABLE_KINDS = frozenset([ElementKind.GOAL, ElementKind.STRATEGY])


class RelationKind(Enum):
    SUPPORTED_BY = 'SupportedBy'
    IN_CONTEXT_OF = 'InContextOf'
    CHALLENGES = 'Challenges'
    DEFEATED = 'Defeated'


class DefeaterKind(Enum):
    REBUTTAL = 'Rebuttal'
    UNDERCUTTING = 'Undercutting'


def kind_for_label(label: str) -> Optional[ElementKind]:
    """Infer the element kind from a label prefix (longest prefix wins, so "Sn" beats "S").

    Returns:
        The inferred kind, or ``None`` if the label has no known prefix.
    """
    best = None
    for kind, prefix in LABEL_PREFIXES.items():
        if label.startswith(prefix) and (best is None or len(prefix) > len(LABEL_PREFIXES[best])):
            best = kind
    return best


@dataclass(frozen=True)
class GsnElement:
    handle: ElementHandle
    label: str
    kind: ElementKind
    text: str
    undeveloped: bool = False
    defeater: Optional[DefeaterKind] = None


@dataclass(frozen=True)
class Relationship:
    src: Endpoint
    dst: Endpoint
    kind: RelationKind

    @property
    def is_resolved(self) -> bool:
        return not isinstance(self.src, str) and not isinstance(self.dst, str)

    def unresolved_labels(self) -> List[str]:
        return [e for e in (self.src, self.dst) if isinstance(e, str)]


class AssuranceCase:
    """A GSN argument graph.

    Labels are not required to be unique and relationships may point at unresolved labels, so
    that structurally defective cases can be represented and then analysed.
    """

    def __init__(self, name: str, case_kind: str = DEFAULT_CASE_KIND, system_name: Optional[str] = None):
        self.name = name
        self.case_kind = case_kind
        self._system_name = system_name
        self._elements: List[GsnElement] = []
        self._relationships: List[Relationship] = []

    def __repr__(self):
        n_elements, n_relationships = self.counts()
        return f'AssuranceCase(name={self.name!r}, elements={n_elements}, relationships={n_relationships})'

    @property
    def system_name(self) -> str:
        return self._system_name if self._system_name is not None else self.name

    @property
    def elements(self) -> Tuple[GsnElement, ...]:
        return tuple(self._elements)

    @property
    def relationships(self) -> Tuple[Relationship, ...]:
        return tuple(self._relationships)

    def add_element(
        self,
        label: str,
        kind: ElementKind,
        text: str,
        undeveloped: bool = False,
        defeater: Optional[DefeaterKind] = None,
    ) -> ElementHandle:
        """Append an element to the case.

        Duplicate labels are accepted silently. Text must not start or end with whitespace.

        Returns:
            The handle of the new element.
        """
        if not label:
            raise ValueError('element label must not be empty')
        if not _LABEL_RE.fullmatch(label):
            raise ValueError(f'invalid element label: {label!r}')
        if not isinstance(kind, ElementKind):
            raise ValueError(f'invalid element kind: {kind!r}')
        if text != text.strip():
            raise ValueError(f'text of {label} must not start or end with whitespace')
        if undeveloped and kind not in DEVELOPABLE_KINDS:
            raise ValueError(f'undeveloped decorator is not allowed on {kind.value} {label}')
        handle = ElementHandle(len(self._elements))
        self._elements.append(GsnElement(handle, label, kind, text, undeveloped, defeater))
        return handle

    def add_relationship(self, src: Endpoint, dst: Endpoint, kind: RelationKind) -> Relationship:
        for endpoint in (src, dst):
            if isinstance(endpoint, str):
                if not endpoint:
                    raise ValueError('unresolved endpoint label must not be empty')
                if not _REF_RE.fullmatch(endpoint):
                    raise ValueError(f'invalid unresolved endpoint label: {endpoint!r}')
            elif not 0 <= endpoint < len(self._elements):
                raise KeyError(endpoint)
        if not isinstance(kind, RelationKind):
            raise ValueError(f'invalid relationship kind: {kind!r}')
        relationship = Relationship(src, dst, kind)
        self._relationships.append(relationship)
        return relationship

    def element(self, handle: ElementHandle) -> GsnElement:
        return self._elements[handle]

    def find(self, label: str) -> List[ElementHandle]:
        """Get the handles of every element declared with `label`, in insertion order."""
        return [e.handle for e in self._elements if e.label == label]

    def endpoint_label(self, endpoint: Endpoint) -> str:
        if isinstance(endpoint, str):
            return endpoint
        return self._elements[endpoint].label

    def edges(self, *kinds: RelationKind) -> List[Tuple[ElementHandle, ElementHandle]]:
        """Get the resolved (src, dst) pairs of relationships of the given kinds."""
        return [
            (r.src, r.dst) for r in self._relationships
            if r.kind in kinds and r.is_resolved
        ]

    def roots(self) -> List[ElementHandle]:
        """Find the top claims of the argument.

        A root has no incoming SupportedBy edge and at least one outgoing SupportedBy edge.
        Goals without any SupportedBy edges are roots too.
        """
        has_parent = set()
        has_child = set()
        for src, dst in self.edges(RelationKind.SUPPORTED_BY):
            has_child.add(src)
            has_parent.add(dst)
        result = []
        for element in self._elements:
            h = element.handle
            if h in has_parent:
                continue
            if h in has_child or element.kind is ElementKind.GOAL:
                result.append(h)
        return result

    def counts(self) -> Tuple[int, int]:
        return len(self._elements), len(self._relationships)

    def decorator_count(self) -> int:
        return sum(1 for e in self._elements if e.undeveloped)

    def occurrence(self, handle: ElementHandle) -> int:
        """Get the 1-based position of an element among the elements sharing its label."""
        label = self._elements[handle].label
        return self.find(label).index(handle) + 1

    def label_histogram(self) -> Dict[str, List[ElementHandle]]:
        histogram: Dict[str, List[ElementHandle]] = {}
        for element in self._elements:
            histogram.setdefault(element.label, []).append(element.handle)
        return histogram


def build_case(
    name: str,
    elements: Sequence[Tuple[str, ElementKind, str]],
    relationships: Sequence[Tuple[str, str, RelationKind]] = (),
) -> AssuranceCase:
    """Build a case with unique labels from plain tuples (mostly useful in tests)."""
    case = AssuranceCase(name)
    handles = {}
    for label, kind, text in elements:
        handles[label] = case.add_element(label, kind, text)
    for src, dst, kind in relationships:
        case.add_relationship(handles.get(src, src), handles.get(dst, dst), kind)
    return case
