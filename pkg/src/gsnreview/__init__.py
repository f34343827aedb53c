from gsnreview.case import (
    AssuranceCase, DefeaterKind, ElementHandle, ElementKind, GsnElement, Relationship,
    RelationKind, kind_for_label,
)
from gsnreview.prose import ParseDiagnostic, Severity, load_prose, parse_prose, serialize_prose

__all__ = [
    'AssuranceCase', 'DefeaterKind', 'ElementHandle', 'ElementKind', 'GsnElement', 'Relationship',
    'RelationKind', 'kind_for_label', 'ParseDiagnostic', 'Severity', 'load_prose', 'parse_prose',
    'serialize_prose',
]
