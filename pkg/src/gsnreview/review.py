"""Tolerant recovery of scores and predicate-notation findings from LLM review text."""

import json
import re
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Tuple, Union

Span = Tuple[int, int]

# Straight and curly double quotes all toggle quoting (models often pair them inconsistently).
QUOTES = frozenset('"“”')

# GSN element labels as they appear in reviews, e.g. G3, Sn6.2, C1.
REVIEW_LABEL_RE = re.compile(r'(?:Sn|G|S|C|A|J)[0-9][A-Za-z0-9._-]*')

_HEAD_RE = re.compile(r'(?<![A-Za-z0-9_])(Issue|Description|Suggest|Structural|Defeaters|Defeater)\(|<\(')

# (quote aware, parenthesis aware), tried in order until quotes and parentheses pair up.
_SPLIT_MODES = [(True, True), (True, False), (False, True), (False, False)]

_SCORE_RES = [
    re.compile(r'\bscore\**\s*[:=]\s*\**\s*([1-5])(?![0-9]|\.[0-9])', re.IGNORECASE),
    re.compile(r'\bscore of\s+\**([1-5])(?![0-9]|\.[0-9])', re.IGNORECASE),
    # Not preceded by a letter, so "G3/5" is a label rather than a score.
    re.compile(r'(?<![0-9.A-Za-z])([1-5])\s*/\s*5(?![0-9]|\.[0-9])'),
    re.compile(r'\brat(?:e|ed|ing)\b[^\n]*?(?<![A-Za-z0-9.])([1-5])(?![0-9A-Za-z]|\.[0-9])', re.IGNORECASE),
]


@dataclass(frozen=True)
class IssueF:
    element_label: str
    text: str

    def render(self) -> str:
        return f'Issue({self.element_label}, {self.text})'


@dataclass(frozen=True)
class DescriptionF:
    issue_no: str
    element_label: str
    text: str

    def render(self) -> str:
        return f'Description({self.issue_no}, {self.element_label}, {self.text})'


@dataclass(frozen=True)
class SuggestionF:
    issue_no: str
    element_label: str
    text: str

    def render(self) -> str:
        return f'Suggest({self.issue_no}, {self.element_label}, {self.text})'


@dataclass(frozen=True)
class DuplicateGroupF:
    entries: Tuple[Tuple[str, str], ...]

    def __post_init__(self):
        if len(self.entries) < 2:
            raise ValueError('duplicate group needs at least two entries')

    @property
    def labels(self) -> List[str]:
        return [label for label, _ in self.entries]

    def render(self) -> str:
        return '<(' + ', '.join(f'{label}, {text}' for label, text in self.entries) + ')>'


@dataclass(frozen=True)
class StructuralF:
    element_label: str
    text: str

    def render(self) -> str:
        return f'Structural({self.element_label}, {self.text})'


@dataclass(frozen=True)
class DefeaterF:
    defeater_no: str
    text: str
    target_label: Optional[str] = None

    def render(self) -> str:
        if self.target_label is None:
            return f'Defeater({self.defeater_no}, {self.text})'
        return f'Defeaters({self.defeater_no}, {self.text}, {self.target_label})'


@dataclass(frozen=True)
class FreeTextF:
    text: str

    def render(self) -> str:
        return self.text


Finding = Union[IssueF, DescriptionF, SuggestionF, DuplicateGroupF, StructuralF, DefeaterF, FreeTextF]

VARIANT_NAMES = {
    IssueF: 'Issue',
    DescriptionF: 'Description',
    SuggestionF: 'Suggestion',
    DuplicateGroupF: 'DuplicateGroup',
    StructuralF: 'Structural',
    DefeaterF: 'Defeater',
    FreeTextF: 'FreeText',
}


def finding_to_json(finding: Finding) -> dict:
    fields = asdict(finding)
    if isinstance(finding, DuplicateGroupF):
        fields['entries'] = [{'label': label, 'text': text} for label, text in finding.entries]
    return {'variant': VARIANT_NAMES[type(finding)], **fields}


@dataclass
class ParsedReview:
    score: Optional[int]
    findings: List[Finding] = field(default_factory=list)
    unparsed_spans: List[Span] = field(default_factory=list)
    consumed_spans: List[Span] = field(default_factory=list)

    def __post_init__(self):
        if self.score is not None and not 1 <= self.score <= 5:
            raise ValueError(f'score out of range: {self.score}')

    def to_json(self) -> dict:
        return {
            'score': self.score,
            'findings': [finding_to_json(f) for f in self.findings],
            'unparsed': [{'start': start, 'end': end} for start, end in self.unparsed_spans],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), ensure_ascii=False)


def _score_match(text: str):
    for regex in _SCORE_RES:
        match = regex.search(text)
        if match:
            return match
    return None


def extract_score(text: str) -> Optional[int]:
    """Find the review score in free text.

    Patterns are tried in a fixed priority order ("Score: N", "score of N", "N/5", "rate ... N")
    and the first pattern matching anywhere in the text wins.

    Returns:
        The score in 1..5, or ``None`` if the text states no score.
    """
    match = _score_match(text)
    if match is None:
        return None
    return int(match.group(1))


def _find_close(text: str, open_index: int, quote_aware: bool) -> Optional[int]:
    depth = 0
    in_quote = False
    for i in range(open_index, len(text)):
        ch = text[i]
        if quote_aware and ch in QUOTES:
            in_quote = not in_quote
        elif in_quote:
            continue
        elif ch == '(':
            depth += 1
        elif ch == ')':
            depth -= 1
            if depth == 0:
                return i
    return None


def _line_close(text: str, head_end: int) -> Optional[int]:
    """Find the last ')' on the line of an unbalanced finding, before the next finding starts."""
    end = text.find('\n', head_end)
    end = len(text) if end < 0 else end
    next_head = _HEAD_RE.search(text, head_end, end)
    if next_head is not None:
        end = next_head.start()
    index = text.rfind(')', head_end, end)
    return index if index >= 0 else None


def split_arguments(args: str) -> List[Span]:
    """Split an argument list at top-level commas.

    Commas nested in parentheses or quotes do not split. If the quotes or parentheses do not pair
    up, the split is redone ignoring them.

    Returns:
        (start, end) offsets of every piece within `args`.
    """
    for quote_aware, paren_aware in _SPLIT_MODES:
        pieces = []
        depth = 0
        in_quote = False
        start = 0
        for i, ch in enumerate(args):
            if quote_aware and ch in QUOTES:
                in_quote = not in_quote
            elif in_quote:
                continue
            elif paren_aware and ch == '(':
                depth += 1
            elif paren_aware and ch == ')':
                depth = max(depth - 1, 0)
            elif ch == ',' and depth == 0:
                pieces.append((start, i))
                start = i + 1
        pieces.append((start, len(args)))
        if not in_quote and depth == 0:
            break
    return pieces


def _piece(args, span):
    return args[span[0]:span[1]].strip()


def _tail(args, span):
    return args[span[0]:].strip()


def _build_finding(head: str, args: str) -> Optional[Finding]:
    pieces = split_arguments(args)
    if head == '<(':
        entries = []
        for span in pieces:
            piece = _piece(args, span)
            if REVIEW_LABEL_RE.fullmatch(piece):
                entries.append([piece, []])
            elif entries:
                entries[-1][1].append(piece)
            else:
                return None
        if len(entries) < 2:
            return None
        return DuplicateGroupF(tuple((label, ', '.join(parts)) for label, parts in entries))
    if head in ('Issue', 'Structural'):
        if len(pieces) < 2:
            return None
        cls = IssueF if head == 'Issue' else StructuralF
        return cls(_piece(args, pieces[0]), _tail(args, pieces[1]))
    if head in ('Description', 'Suggest'):
        if len(pieces) < 3:
            return None
        cls = DescriptionF if head == 'Description' else SuggestionF
        return cls(_piece(args, pieces[0]), _piece(args, pieces[1]), _tail(args, pieces[2]))
    # Only the three-argument "Defeaters" form names a target, taken when the last piece is a label.
    if len(pieces) < 2:
        return None
    target = _piece(args, pieces[-1])
    if head == 'Defeaters' and len(pieces) >= 3 and REVIEW_LABEL_RE.fullmatch(target):
        text = args[pieces[1][0]:pieces[-2][1]].strip()
        return DefeaterF(_piece(args, pieces[0]), text, target)
    return DefeaterF(_piece(args, pieces[0]), _tail(args, pieces[1]))


def parse_findings_with_spans(text: str) -> List[Tuple[Finding, Span]]:
    """Recover findings together with the character span each one was read from."""
    results = []
    pos = 0
    while True:
        match = _HEAD_RE.search(text, pos)
        if match is None:
            break
        head = match.group(1) or '<('
        open_index = match.end() - 1
        close_index = _find_close(text, open_index, quote_aware=True)
        if close_index is None:
            close_index = _find_close(text, open_index, quote_aware=False)
        if close_index is None:
            close_index = _line_close(text, match.end())
        if close_index is None:
            end = text.find('\n', match.start())
            end = len(text) if end < 0 else end
            results.append((FreeTextF(text[match.start():end]), (match.start(), end)))
            pos = max(end, match.end())
            continue
        end = close_index + 1
        if head == '<(' and text.startswith('>', end):
            end += 1
        finding = _build_finding(head, text[open_index + 1:close_index])
        if finding is None:
            finding = FreeTextF(text[match.start():end])
        results.append((finding, (match.start(), end)))
        pos = end
    return results


def parse_findings(text: str) -> List[Finding]:
    return [finding for finding, _ in parse_findings_with_spans(text)]


def _complement(spans: List[Span], length: int) -> List[Span]:
    gaps = []
    pos = 0
    for start, end in spans:
        if start > pos:
            gaps.append((pos, start))
        pos = max(pos, end)
    if pos < length:
        gaps.append((pos, length))
    return gaps


def parse_review(text: str) -> ParsedReview:
    """Parse the score and findings of a review.

    Every character of the input ends up in exactly one consumed or unparsed span.
    """
    located = parse_findings_with_spans(text)
    consumed = [span for _, span in located]
    score = None
    match = _score_match(text)
    if match is not None:
        score = int(match.group(1))
        start, end = match.span()
        if not any(start < s_end and s_start < end for s_start, s_end in consumed):
            consumed.append((start, end))
    consumed.sort()
    return ParsedReview(
        score=score,
        findings=[finding for finding, _ in located],
        unparsed_spans=_complement(consumed, len(text)),
        consumed_spans=consumed,
    )
