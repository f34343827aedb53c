import json
import re
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Dict, List, Optional

from importlib_resources import files

import gsnreview.res
from gsnreview.case import AssuranceCase
from gsnreview.prose import serialize_prose
from gsnreview.util import FSPath, sha256_hex


class Criterion(Enum):
    ARGUMENT_COMPREHENSION = 'ArgumentComprehension'
    WELL_FORMEDNESS = 'WellFormedness'
    EXPRESSIVE_SUFFICIENCY = 'ExpressiveSufficiency'
    ARGUMENT_CRITICISM_AND_DEFEAT = 'ArgumentCriticismAndDefeat'

    @property
    def flag(self) -> str:
        return _CRITERION_FLAGS[self]

    @property
    def display_name(self) -> str:
        return _criterion_table()[self][0]

    @classmethod
    def from_flag(cls, flag: str) -> 'Criterion':
        for criterion, criterion_flag in _CRITERION_FLAGS.items():
            if flag in (criterion_flag, criterion.value):
                return criterion
        raise ValueError(f'unknown criterion: {flag}')


class Strategy(Enum):
    ZERO_SHOT = 'ZeroShot'
    ZERO_SHOT_COT = 'ZeroShotCoT'
    ONE_SHOT_COT = 'OneShotCoT'

    @property
    def flag(self) -> str:
        return _STRATEGY_FLAGS[self]

    @property
    def uses_cot(self) -> bool:
        return self is not Strategy.ZERO_SHOT

    @classmethod
    def from_flag(cls, flag: str) -> 'Strategy':
        for strategy, strategy_flag in _STRATEGY_FLAGS.items():
            if flag in (strategy_flag, strategy.value):
                return strategy
        raise ValueError(f'unknown strategy: {flag}')


_CRITERION_FLAGS = {
    Criterion.ARGUMENT_COMPREHENSION: 'arg-comp',
    Criterion.WELL_FORMEDNESS: 'well-formed',
    Criterion.EXPRESSIVE_SUFFICIENCY: 'expr-suff',
    Criterion.ARGUMENT_CRITICISM_AND_DEFEAT: 'arg-crit',
}
_STRATEGY_FLAGS = {
    Strategy.ZERO_SHOT: 'zs',
    Strategy.ZERO_SHOT_COT: 'zs-cot',
    Strategy.ONE_SHOT_COT: 'os-cot',
}
_COT_RESOURCES = {
    Criterion.ARGUMENT_COMPREHENSION: 'cot_argument_comprehension.txt',
    Criterion.WELL_FORMEDNESS: 'cot_well_formedness.txt',
    Criterion.EXPRESSIVE_SUFFICIENCY: 'cot_expressive_sufficiency.txt',
    Criterion.ARGUMENT_CRITICISM_AND_DEFEAT: 'cot_argument_criticism.txt',
}
_SKELETON_RESOURCES = {
    Strategy.ZERO_SHOT: 'system_zero_shot.txt',
    Strategy.ZERO_SHOT_COT: 'system_zero_shot_cot.txt',
    Strategy.ONE_SHOT_COT: 'system_one_shot_cot.txt',
}
# Placeholder lines of the system prompt skeletons, and the content that replaces them.
_PLACEHOLDERS = {
    'More Context Information on the assurance case to be placed here': 'context',
    'The Assurance Case to be reviewed should be specified here in the structured prose format complying with GSN': 'case',
    'Name of the review criterion to be specified here': 'criterion',
    'Description of the review criterion to be placed here': 'description',
    'Chain of Thought text to be added here': 'cot',
    'Chain of thought text to be added here': 'cot',
    'Example of manually reviewed assurance case to be added here': 'example_case',
    'Outcomes of the manual review done on the example assurance case to be added here': 'example_review',
}
_USER_PROMPT = (
    'Using the {criterion} criterion, review the {case_kind} of the {system_name}. '
    'Once finished display the results accordingly as to how the review should be conducted.'
)
STRICT_OUTPUT_INSTRUCTION = (
    'After the review, state the score on a line of its own in the form “Score: <n>”, '
    'where <n> is the score from 1 to 5.'
)
DELIMITER_RE = re.compile(r'^@([A-Za-z_]+)$', re.MULTILINE)


def read_resource(name: str) -> str:
    return files(gsnreview.res).joinpath(name).read_text(encoding='utf-8')


@lru_cache(maxsize=None)
def _criterion_table():
    table = {}
    headings = {
        'Argument Comprehension': Criterion.ARGUMENT_COMPREHENSION,
        'Well-Formedness (Syntax)': Criterion.WELL_FORMEDNESS,
        'Expressive Sufficiency': Criterion.EXPRESSIVE_SUFFICIENCY,
        'Argument Criticism and Defeat': Criterion.ARGUMENT_CRITICISM_AND_DEFEAT,
    }
    for line in read_resource('criteria.txt').splitlines():
        heading, description = line.split(': ', 1)
        table[headings[heading]] = (heading, description)
    return table


@lru_cache(maxsize=None)
def context_block() -> str:
    """Get the GSN background text supplied to every review prompt."""
    return read_resource('context.txt').rstrip('\n')


def criterion_description(criterion: Criterion) -> str:
    return _criterion_table()[Criterion(criterion)][1]


@lru_cache(maxsize=None)
def cot_block(criterion: Criterion) -> str:
    """Get the chain-of-thought review steps for a criterion, including its notation."""
    return read_resource(_COT_RESOURCES[Criterion(criterion)]).rstrip('\n')


@lru_cache(maxsize=None)
def system_skeleton(strategy: Strategy) -> str:
    return read_resource(_SKELETON_RESOURCES[Strategy(strategy)]).rstrip('\n')


@dataclass(frozen=True)
class OneShotExample:
    example_case_prose: str
    example_review: str

    def __post_init__(self):
        if not self.example_case_prose.strip():
            raise ValueError('one-shot example case must not be empty')
        if not self.example_review.strip():
            raise ValueError('one-shot example review must not be empty')

    @classmethod
    def load(cls, prose_path: FSPath, review_path: Optional[FSPath] = None) -> 'OneShotExample':
        """Load an example case and its manual review.

        Args:
            prose_path: Structured prose of the example case.
            review_path: Manual review of the example. Defaults to the prose path with the
                suffix ``.review.txt``.
        """
        prose_path = Path(prose_path)
        if review_path is None:
            review_path = prose_path.with_suffix('.review.txt')
        return cls(
            Path(prose_path).read_text(encoding='utf-8'),
            Path(review_path).read_text(encoding='utf-8'),
        )


@dataclass(frozen=True)
class PromptBundle:
    system_prompt: str
    user_prompt: str

    @property
    def fingerprint(self) -> str:
        return sha256_hex(self.system_prompt, self.user_prompt)

    def to_json(self) -> dict:
        return {'system': self.system_prompt, 'user': self.user_prompt, 'fingerprint': self.fingerprint}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, ensure_ascii=False)

    @classmethod
    def from_json(cls, obj: dict) -> 'PromptBundle':
        bundle = cls(obj['system'], obj['user'])
        if 'fingerprint' in obj and obj['fingerprint'] != bundle.fingerprint:
            raise ValueError('prompt bundle fingerprint does not match its content')
        return bundle


def _check_example(strategy: Strategy, example: Optional[OneShotExample]):
    if strategy is Strategy.ONE_SHOT_COT and example is None:
        raise ValueError('one-shot strategy requires an example')
    if strategy is not Strategy.ONE_SHOT_COT and example is not None:
        raise ValueError(f'an example cannot be used with the {strategy.value} strategy')


def compile_system_prompt(
    case_prose: str,
    criterion: Criterion,
    strategy: Strategy,
    example: Optional[OneShotExample] = None,
    strict_output: bool = False,
) -> str:
    """Fill in the system prompt template of a prompting strategy.

    Args:
        case_prose: Structured prose of the case under review. It is inserted unescaped.
        criterion: The review criterion.
        strategy: The prompting strategy.
        example: The one-shot example. Required for, and only allowed with, OneShotCoT.
        strict_output: Append an instruction asking for a machine-readable score line.

    Returns:
        The system prompt.
    """
    criterion = Criterion(criterion)
    strategy = Strategy(strategy)
    _check_example(strategy, example)
    content = {
        'context': context_block(),
        'case': case_prose.rstrip('\n'),
        'criterion': criterion.display_name,
        'description': criterion_description(criterion),
        'cot': cot_block(criterion),
    }
    if example is not None:
        content['example_case'] = example.example_case_prose.rstrip('\n')
        content['example_review'] = example.example_review.rstrip('\n')
    lines: List[str] = []
    for line in system_skeleton(strategy).split('\n'):
        key = _PLACEHOLDERS.get(line)
        lines.append(content[key] if key is not None else line)
    prompt = '\n'.join(lines)
    if strict_output:
        prompt += '\n\n' + STRICT_OUTPUT_INSTRUCTION
    return prompt


def compile_user_prompt(case_kind: str, system_name: str, criterion: Criterion) -> str:
    if not case_kind or not system_name:
        raise ValueError('case kind and system name must not be empty')
    return _USER_PROMPT.format(
        criterion=Criterion(criterion).display_name,
        case_kind=case_kind,
        system_name=system_name,
    )


def compile(
    case: AssuranceCase,
    criterion: Criterion,
    strategy: Strategy,
    example: Optional[OneShotExample] = None,
    *,
    strict_output: bool = False,
) -> PromptBundle:
    return PromptBundle(
        compile_system_prompt(serialize_prose(case), criterion, strategy, example, strict_output),
        compile_user_prompt(case.case_kind, case.system_name, criterion),
    )


def delimiters(system_prompt: str) -> List[str]:
    """List the block delimiter lines of a compiled system prompt, in order."""
    return DELIMITER_RE.findall(system_prompt)


def block_contents(system_prompt: str) -> Dict[str, str]:
    """Extract the text between each @X and @End_X delimiter line pair."""
    contents = {}
    for name in delimiters(system_prompt):
        if name.startswith('End_'):
            continue
        match = re.search(
            rf'^@{name}\n(.*?)\n@End_{name}$', system_prompt, re.MULTILINE | re.DOTALL
        )
        if match:
            contents[name] = match.group(1).strip('\n')
    return contents
