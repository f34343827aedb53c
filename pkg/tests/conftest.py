import os
from pathlib import Path

import pytest

from gsnreview.case import ElementKind, RelationKind, build_case
from gsnreview.gateway import Gateway, MockProvider
from gsnreview.prompts import OneShotExample
from gsnreview.prose import load_prose


@pytest.fixture
def corpus_dir(request):
    default_path = Path(request.module.__file__).parent.parent.joinpath('corpus')
    path = Path(os.environ.get('GSNREV_CORPUS_PATH', default_path)).absolute()
    if not path.is_dir():
        pytest.skip('cannot find the fixture corpus (try setting the "GSNREV_CORPUS_PATH" env var)')
    return path


@pytest.fixture
def data_dir(request):
    return Path(request.module.__file__).parent.joinpath('data')


@pytest.fixture
def manifest_path(corpus_dir):
    return corpus_dir.joinpath('manifest.json')


@pytest.fixture
def gpca(corpus_dir):
    case, _ = load_prose(corpus_dir.joinpath('gpca.gsn'), 'gpca', 'safety case',
                         'Generic Patient-Controlled Analgesia pump')
    return case


@pytest.fixture
def im_software(corpus_dir):
    case, _ = load_prose(corpus_dir.joinpath('im_software.gsn'), 'im_software', 'security case',
                         'instant messaging server software')
    return case


@pytest.fixture
def baidu_apollo(corpus_dir):
    case, _ = load_prose(corpus_dir.joinpath('baidu_apollo.gsn'), 'baidu_apollo', 'safety case',
                         'Baidu Apollo autonomous driving platform')
    return case


@pytest.fixture
def example(corpus_dir):
    return OneShotExample.load(corpus_dir.joinpath('level4_ads.gsn'))


@pytest.fixture
def small_case():
    return build_case(
        'small',
        [
            ('G1', ElementKind.GOAL, 'The system is acceptably safe.'),
            ('C1', ElementKind.CONTEXT, 'Operating environment.'),
            ('Sn1', ElementKind.SOLUTION, 'Hazard log.'),
        ],
        [
            ('G1', 'Sn1', RelationKind.SUPPORTED_BY),
            ('G1', 'C1', RelationKind.IN_CONTEXT_OF),
        ],
    )


@pytest.fixture
def mock_gateway():
    return Gateway({'mock': MockProvider()}, sleep=lambda seconds: None)
