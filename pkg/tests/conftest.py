import logging

import pytest

from ttpx.logger import TTPXLogger
from ttpx.modeling.stub import HashingEmbedder, StubMaskedLM
from ttpx.taxonomy import Technique, TechniqueRegistry, save_taxonomy

TECHNIQUES = [
    Technique("T1059", "Command and Scripting Interpreter", ("execution",)),
    Technique("T1071", "Application Layer Protocol", ("command-and-control",)),
    Technique("T1547", "Boot or Logon Autostart Execution", ("persistence", "privilege-escalation")),
    Technique("T1566", "Phishing", ("initial-access",)),
]


@pytest.fixture
def logger_mock():
    logger = TTPXLogger("test_logger")
    logger.setLevel(logging.DEBUG)
    logs = []

    class ListHandler(logging.Handler):
        def emit(self, record):
            logs.append(record.getMessage())

    handler = ListHandler()
    logger.addHandler(handler)
    logger._log_history = logs
    return logger


@pytest.fixture
def registry():
    return TechniqueRegistry(tuple(TECHNIQUES), version="test-v1")


@pytest.fixture
def taxonomy_file(tmp_path, registry):
    path = tmp_path / "techniques.jsonl"
    save_taxonomy(registry, path)
    return path


@pytest.fixture
def embedder():
    return HashingEmbedder(dimension=2**14)


@pytest.fixture
def stub_mlm():
    return StubMaskedLM(vocabulary=["attacker", "malware", "loader", "script", "server"])


class KeywordClassifier:
    """Predicts a technique from the first keyword found in the sentence."""

    reference = "keyword-test"

    def __init__(self, keywords: dict[str, tuple[str, float]], default=("T1059", 0.30)):
        self.keywords = keywords
        self.default = default
        self.calls = []

    def predict(self, sentence: str) -> tuple[str, float]:
        self.calls.append(sentence)
        lowered = sentence.lower()
        for keyword, prediction in self.keywords.items():
            if keyword in lowered:
                return prediction
        return self.default


@pytest.fixture
def keyword_classifier():
    return KeywordClassifier(
        {
            "powershell": ("T1059", 0.91),
            "spearphishing": ("T1566", 0.88),
            "run key": ("T1547", 0.75),
            "beacons": ("T1071", 0.70),
        }
    )
