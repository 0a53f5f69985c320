"""Report-level technique extraction: segment, normalize, classify every
sentence, drop sentences whose confidence is below the relevance threshold,
and take the union of what remains."""

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple, Protocol

from ttpx.datasets import ThreatReport, load_report_dataset
from ttpx.errors import ExtractionError, InputNotFoundError, TTPXError, UsageError, ValidationError
from ttpx.logger import TTPXLogger
from ttpx.modeling.backends import thread_safe
from ttpx.modeling.classifier import ClassifierArtifact, classify
from ttpx.preprocess import preprocess_sentence, segment_report
from ttpx.taxonomy import TechniqueRegistry
from ttpx.utils import dumps_canonical, run_ordered

DEFAULT_RELEVANCE_THRESHOLD = 0.644


@dataclass(frozen=True)
class ExtractionConfig:
    relevance_threshold: float = DEFAULT_RELEVANCE_THRESHOLD
    include_attributions: bool = False

    def __post_init__(self):
        if not 0.0 <= self.relevance_threshold <= 1.0:
            raise UsageError(
                f"relevance threshold must be in [0, 1], got {self.relevance_threshold}",
                theta=self.relevance_threshold,
            )


@dataclass(frozen=True)
class SentenceAttribution:
    sentence_index: int
    normalized_text: str
    predicted_label: str
    confidence: float
    kept: bool

    def to_record(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ExtractionResult:
    report_id: str
    techniques: frozenset[str]
    attributions: tuple[SentenceAttribution, ...] = ()
    artifact_reference: str = ""
    config: ExtractionConfig = field(default_factory=ExtractionConfig)

    def to_record(self) -> dict:
        return {
            "report_id": self.report_id,
            "techniques": sorted(self.techniques),
            "attributions": [a.to_record() for a in self.attributions],
            "artifact_reference": self.artifact_reference,
            "config": asdict(self.config),
        }

    def to_json(self) -> str:
        return dumps_canonical(self.to_record(), indent=2)

    @classmethod
    def from_record(cls, record: dict) -> "ExtractionResult":
        try:
            return cls(
                report_id=record["report_id"],
                techniques=frozenset(record["techniques"]),
                attributions=tuple(SentenceAttribution(**a) for a in record.get("attributions", [])),
                artifact_reference=record.get("artifact_reference", ""),
                config=ExtractionConfig(**record.get("config", {})),
            )
        except (KeyError, TypeError) as e:
            raise ValidationError(f"malformed extraction result: {e}")

    @classmethod
    def from_json(cls, document: str) -> "ExtractionResult":
        try:
            return cls.from_record(json.loads(document))
        except json.JSONDecodeError as e:
            raise ValidationError(f"extraction result is not valid JSON: {e.msg}")


class SentenceClassifier(Protocol):
    reference: str

    def predict(self, sentence: str) -> tuple[str, float]: ...


class ArtifactClassifier:
    """Adapts a ClassifierArtifact to (label, confidence) predictions."""

    def __init__(self, artifact: ClassifierArtifact, registry: TechniqueRegistry | None = None):
        if registry is not None:
            artifact.check_registry(registry)
        self.artifact = artifact
        self.reference = artifact.encoder_reference

    def predict(self, sentence: str) -> tuple[str, float]:
        distribution = classify(sentence, self.artifact)
        return self.artifact.label_of(distribution), distribution.confidence

    def serialized(self) -> "ArtifactClassifier":
        if self.artifact.encoder is not None:
            self.artifact.encoder = thread_safe(self.artifact.encoder)
        return self


def _as_classifier(classifier) -> SentenceClassifier:
    if isinstance(classifier, ClassifierArtifact):
        return ArtifactClassifier(classifier)
    return classifier


def extract_ttps(
    report: ThreatReport,
    classifier: ClassifierArtifact | SentenceClassifier,
    config: ExtractionConfig | None = None,
) -> ExtractionResult:
    config = config or ExtractionConfig()
    classifier = _as_classifier(classifier)
    sentences = report.sentences or tuple(segment_report(report.text or ""))

    attributions = []
    last_index = None
    for index, sentence in enumerate(sentences):
        normalized = preprocess_sentence(sentence, sentence_index=index).text
        if not normalized:
            last_index = index
            continue
        try:
            label, confidence = classifier.predict(normalized)
        except Exception as e:
            raise ExtractionError(
                f"classification failed on sentence {index} of report {report.report_id!r}: {e}",
                report_id=report.report_id,
                failed_index=index,
                last_processed_index=last_index,
            ) from e
        attributions.append(
            SentenceAttribution(index, normalized, label, float(confidence), confidence >= config.relevance_threshold)
        )
        last_index = index

    techniques = frozenset(a.predicted_label for a in attributions if a.kept)
    return ExtractionResult(
        report_id=report.report_id,
        techniques=techniques,
        attributions=tuple(attributions) if config.include_attributions else (),
        artifact_reference=getattr(classifier, "reference", ""),
        config=config,
    )


class ExtractionFailure(NamedTuple):
    report_id: str
    position: int
    error: dict


class BatchExtraction(NamedTuple):
    results: list[ExtractionResult]
    failures: list[ExtractionFailure]

    def summary(self) -> dict:
        return {
            "succeeded": len(self.results),
            "failed": len(self.failures),
            "failures": [f._asdict() for f in self.failures],
        }


def batch_extract(
    reports: list[ThreatReport],
    classifier: ClassifierArtifact | SentenceClassifier,
    config: ExtractionConfig | None = None,
    jobs: int = 1,
    logger: TTPXLogger | None = None,
) -> BatchExtraction:
    """Order-preserving `extract_ttps` over many reports. A failing report is
    recorded in `failures` and does not stop the batch."""
    logger = logger or TTPXLogger("ttpx")
    classifier = _as_classifier(classifier)
    if jobs > 1 and hasattr(classifier, "serialized"):
        classifier = classifier.serialized()

    def work(report: ThreatReport):
        try:
            return extract_ttps(report, classifier, config)
        except Exception as e:
            logger.warning(f"Extraction failed for report {report.report_id!r}: {e!r}")
            logger.debug(f"Report {report.report_id} raised", exc_info=True)
            if isinstance(e, TTPXError):
                return e.to_record()
            return {"error": e.__class__.__name__, "message": str(e), "exit_code": 1, "context": {}}

    outcomes = run_ordered(work, reports, jobs=jobs, desc="Extracting" if len(reports) > 1 else None)
    results, failures = [], []
    for position, (report, outcome) in enumerate(zip(reports, outcomes)):
        if isinstance(outcome, ExtractionResult):
            results.append(outcome)
        else:
            failures.append(ExtractionFailure(report.report_id, position, outcome))
    if failures:
        logger.warning(f"{len(failures)} of {len(reports)} reports failed")
    return BatchExtraction(results, failures)


def load_reports(
    path: str | Path, registry: TechniqueRegistry, logger: TTPXLogger | None = None
) -> list[ThreatReport]:
    """Reports from a `.txt` file (raw text, id = file stem), a JSON/JSONL
    report file, or a directory holding any mix of these."""
    path = Path(path)
    if not path.exists():
        raise InputNotFoundError(f"Report path not found: {path}", path=str(path))
    files = sorted(path.iterdir()) if path.is_dir() else [path]
    reports = []
    for file in files:
        if file.suffix == ".txt":
            reports.append(ThreatReport(report_id=file.stem, text=file.read_text(encoding="utf-8")))
        elif file.suffix in (".json", ".jsonl"):
            reports.extend(load_report_dataset(file, registry, logger))
        elif not path.is_dir():
            raise ValidationError(f"unsupported report file type {file.suffix!r}", path=str(file))
    return reports
