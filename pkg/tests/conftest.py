import numpy as np
import pytest

from empgen.corpus import LabelSet, build_vocab, parse_sample
from empgen.fixtures import generate_mini_corpus
from empgen.knowledge import AnalysisCache, EchoLlmClient, TemplateCommonsenseProvider
from empgen.model import Providers
from empgen.selectors import HeuristicCauseDetector, OracleSentimentPredictor, load_lexicon


@pytest.fixture(scope="session")
def labels():
    return LabelSet.default()


@pytest.fixture(scope="session")
def lexicon(labels):
    return load_lexicon(labels=labels)


@pytest.fixture(scope="session")
def mini_records():
    return generate_mini_corpus(seed=7, size=64)


@pytest.fixture(scope="session")
def mini_samples(mini_records, labels):
    return [parse_sample(r, labels) for r in mini_records]


@pytest.fixture(scope="session")
def mini_vocab(mini_samples):
    return build_vocab(mini_samples)


@pytest.fixture()
def providers(labels, lexicon):
    return Providers(
        sentiment=OracleSentimentPredictor(),
        cause=HeuristicCauseDetector(lexicon),
        commonsense=TemplateCommonsenseProvider(),
        llm=EchoLlmClient(),
        analysis_cache=AnalysisCache(),
    )


@pytest.fixture()
def rng():
    return np.random.default_rng(11)
