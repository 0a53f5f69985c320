"""Sentence-TTP and report-TTP datasets: models, file I/O and splitting."""

import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
import pandas as pd
from sklearn.model_selection import train_test_split

from ttpx.errors import InputNotFoundError, UsageError, ValidationError
from ttpx.logger import TTPXLogger
from ttpx.taxonomy import TechniqueRegistry, validate_id
from ttpx.utils import iter_jsonl, write_jsonl

DATASET_FORMAT_VERSION = 1

# Published sizes of the reference corpora; logged for comparison, never asserted.
REFERENCE_BASE_SIZE = 10_906
REFERENCE_AUGMENTED_SIZE = 39_296
REFERENCE_CLASS_COUNT = 193


class Origin(Enum):
    BASE = "base"
    AUGMENTED = "augmented"


@dataclass(frozen=True)
class LabeledSentence:
    text: str
    label: str
    origin: Origin = Origin.BASE
    source_text: str | None = None

    def __post_init__(self):
        if not isinstance(self.text, str) or not self.text.strip():
            raise ValidationError("sentence text must be non-empty")
        if not validate_id(self.label):
            raise ValidationError(f"malformed technique id {self.label!r}", label=self.label)
        try:
            origin = Origin(self.origin)
        except ValueError:
            raise ValidationError(f"unknown origin {self.origin!r}", origin=str(self.origin))
        object.__setattr__(self, "origin", origin)

    def to_record(self) -> dict:
        record = {"text": self.text, "label": self.label, "origin": self.origin.value}
        if self.source_text is not None:
            record["source_text"] = self.source_text
        return record


@dataclass(frozen=True)
class SentenceDataset:
    entries: tuple[LabeledSentence, ...]
    registry_version: str = ""

    def __post_init__(self):
        if not self.entries:
            raise ValidationError("sentence dataset must contain at least one entry")
        object.__setattr__(self, "entries", tuple(self.entries))

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def labels(self) -> list[str]:
        return [entry.label for entry in self.entries]

    @property
    def texts(self) -> list[str]:
        return [entry.text for entry in self.entries]


@dataclass(frozen=True)
class ThreatReport:
    """One finished report. `sentences` keeps document order; when only raw
    `text` is given, segmentation happens in the extraction pipeline."""

    report_id: str
    sentences: tuple[str, ...] = ()
    true_labels: frozenset[str] = field(default_factory=frozenset)
    text: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "sentences", tuple(self.sentences))
        object.__setattr__(self, "true_labels", frozenset(self.true_labels))

    @property
    def n(self) -> int:
        return len(self.sentences)

    def to_record(self) -> dict:
        record = {"report_id": self.report_id, "true_labels": sorted(self.true_labels)}
        if self.sentences:
            record["sentences"] = list(self.sentences)
        if self.text is not None:
            record["text"] = self.text
        return record


@dataclass(frozen=True)
class DatasetSplit:
    train: SentenceDataset
    test: SentenceDataset | None
    seed: int
    ratio: float


def _header(registry_version: str) -> dict:
    return {"format_version": DATASET_FORMAT_VERSION, "registry_version": registry_version}


def _check_header(record: dict, path: Path, registry: TechniqueRegistry | None, logger):
    if record["format_version"] != DATASET_FORMAT_VERSION:
        raise ValidationError(
            f"{path}: unsupported format_version {record['format_version']!r}"
        )
    version = str(record.get("registry_version") or "")
    if registry is not None and version and version != registry.version:
        logger.warning(
            f"{path} was written against registry {version}, "
            f"active registry is {registry.version}"
        )
    return version


def _validate_labels(rows: list[tuple[int, str]], registry: TechniqueRegistry, path):
    offending = [(row, label) for row, label in rows if label not in registry]
    if offending:
        listed = ", ".join(f"row {row} ({label!r})" for row, label in offending[:20])
        more = f" and {len(offending) - 20} more" if len(offending) > 20 else ""
        raise ValidationError(
            f"{path}: labels not in registry {registry.version}: {listed}{more}",
            rows=[row for row, _ in offending],
        )


def load_sentence_dataset(
    path: str | Path,
    registry: TechniqueRegistry,
    logger: TTPXLogger | None = None,
) -> SentenceDataset:
    logger = logger or TTPXLogger("ttpx")
    path = Path(path)
    if not path.is_file():
        raise InputNotFoundError(f"Dataset file not found: {path}", path=str(path))

    entries = []
    label_rows = []
    row = 0
    try:
        for line_number, record in iter_jsonl(path):
            if "format_version" in record:
                _check_header(record, path, registry, logger)
                continue
            row += 1
            text = record.get("text")
            label = record.get("label")
            if not isinstance(text, str) or not text.strip():
                raise ValidationError(f"{path}: row {row} has empty text", rows=[row])
            origin = record.get("origin", "base")
            if not isinstance(origin, str) or origin not in {o.value for o in Origin}:
                raise ValidationError(f"{path}: row {row} has unknown origin {origin!r}", rows=[row])
            label_rows.append((row, label))
            entries.append(
                (text.strip(), label, origin, record.get("source_text"))
            )
    except ValueError as e:
        raise ValidationError(str(e))

    if not entries:
        raise ValidationError(f"{path}: dataset file is empty", path=str(path))
    _validate_labels(label_rows, registry, path)

    dataset = SentenceDataset(
        tuple(LabeledSentence(*entry) for entry in entries),
        registry_version=registry.version,
    )
    logger.debug(f"Loaded {len(dataset)} sentences from {path}")
    return dataset


def save_sentence_dataset(dataset: SentenceDataset, path: str | Path) -> None:
    write_jsonl(
        path,
        [_header(dataset.registry_version)] + [e.to_record() for e in dataset.entries],
    )


def load_base_csv(
    path: str | Path,
    registry: TechniqueRegistry,
    text_column: str = "sentence",
    label_column: str = "ttp_id",
) -> SentenceDataset:
    """Read the two-column (sentence, technique id) base corpus."""
    path = Path(path)
    if not path.is_file():
        raise InputNotFoundError(f"Dataset file not found: {path}", path=str(path))
    df = pd.read_csv(path, dtype=str).dropna(subset=[text_column, label_column])
    if df.empty:
        raise ValidationError(f"{path}: dataset file is empty", path=str(path))
    labels = [label.strip() for label in df[label_column]]
    _validate_labels(list(enumerate(labels, start=1)), registry, path)
    return SentenceDataset(
        tuple(
            LabeledSentence(text.strip(), label)
            for text, label in zip(df[text_column], labels)
        ),
        registry_version=registry.version,
    )


def split_dataset(dataset: SentenceDataset, ratio: float = 0.8, seed: int = 0) -> DatasetSplit:
    """Per-class stratified split. `ratio` is the train share. Classes with a
    single entry go entirely to train; any class with two or more keeps at
    least one entry on each side."""
    if not 0 < ratio < 1:
        raise UsageError(f"split ratio must lie in (0, 1), got {ratio}")
    if dataset is None or len(dataset) == 0:
        raise ValidationError("cannot split an empty dataset")

    by_class = defaultdict(list)
    for index, entry in enumerate(dataset.entries):
        by_class[entry.label].append(index)

    train_idx, test_idx = [], []
    for label in sorted(by_class):
        indices = by_class[label]
        count = len(indices)
        if count < 2:
            train_idx.extend(indices)
            continue
        n_train = min(max(int(round(ratio * count)), 1), count - 1)
        class_train, class_test = train_test_split(
            indices, train_size=n_train, random_state=seed, shuffle=True
        )
        train_idx.extend(class_train)
        test_idx.extend(class_test)

    def subset(indices):
        if not indices:
            return None
        return SentenceDataset(
            tuple(dataset.entries[i] for i in sorted(indices)),
            registry_version=dataset.registry_version,
        )

    return DatasetSplit(train=subset(train_idx), test=subset(test_idx), seed=seed, ratio=ratio)


def class_distribution(dataset: SentenceDataset) -> dict[str, int]:
    counts = Counter(entry.label for entry in dataset.entries)
    return {label: counts[label] for label in sorted(counts)}


def dataset_statistics(dataset: SentenceDataset) -> dict:
    distribution = class_distribution(dataset)
    counts = np.array(list(distribution.values()))
    labels = list(distribution.keys())
    origins = Counter(entry.origin.value for entry in dataset.entries)
    return {
        "size": int(counts.sum()),
        "class_count": len(labels),
        "max_count": int(counts.max()),
        "max_label": labels[int(counts.argmax())],
        "min_count": int(counts.min()),
        "min_label": labels[int(counts.argmin())],
        "mean_count": float(counts.mean()),
        "base": origins.get(Origin.BASE.value, 0),
        "augmented": origins.get(Origin.AUGMENTED.value, 0),
    }


def log_reference_magnitudes(stats: dict, logger: TTPXLogger) -> None:
    logger.info(
        f"Dataset: {stats['size']} sentences over {stats['class_count']} classes "
        f"({stats['base']} base, {stats['augmented']} augmented); "
        f"max {stats['max_count']} ({stats['max_label']}), "
        f"min {stats['min_count']} ({stats['min_label']}), mean {stats['mean_count']:.1f}. "
        f"Reference corpus: {REFERENCE_BASE_SIZE} base / {REFERENCE_AUGMENTED_SIZE} "
        f"augmented / {REFERENCE_CLASS_COUNT} classes.",
        extra={"dataset_stats": stats},
    )


def _report_from_record(record: dict, where: str, registry: TechniqueRegistry) -> ThreatReport:
    report_id = record.get("report_id")
    if not report_id:
        raise ValidationError(f"{where}: report record is missing `report_id`")
    sentences = record.get("sentences")
    text = record.get("text")
    if sentences is None and text is None:
        raise ValidationError(
            f"{where}: report {report_id!r} needs a `sentences` or `text` field",
            report_id=report_id,
        )
    if sentences is not None and not isinstance(sentences, list):
        raise ValidationError(f"{where}: `sentences` must be a list", report_id=report_id)
    labels = record.get("true_labels") or []
    unknown = sorted(label for label in labels if label not in registry)
    if unknown:
        raise ValidationError(
            f"{where}: report {report_id!r} has labels not in registry: {', '.join(unknown)}",
            report_id=report_id,
            labels=unknown,
        )
    return ThreatReport(
        report_id=str(report_id),
        sentences=tuple(s for s in (sentences or []) if s and s.strip()),
        true_labels=frozenset(labels),
        text=None if sentences else text,
    )


def _read_report_file(path: Path, registry, logger) -> list[ThreatReport]:
    if path.suffix == ".jsonl":
        reports = []
        try:
            for line_number, record in iter_jsonl(path):
                if "format_version" in record:
                    _check_header(record, path, registry, logger)
                    continue
                reports.append(_report_from_record(record, f"{path}:{line_number}", registry))
        except ValueError as e:
            raise ValidationError(str(e))
        return reports

    try:
        with open(path, encoding="utf-8") as reader:
            payload = json.load(reader)
    except json.JSONDecodeError as e:
        raise ValidationError(f"{path}: invalid JSON ({e.msg})")
    if isinstance(payload, dict) and "reports" in payload:
        payload = payload["reports"]
    records = payload if isinstance(payload, list) else [payload]
    return [_report_from_record(r, str(path), registry) for r in records]


def load_report_dataset(
    path: str | Path,
    registry: TechniqueRegistry,
    logger: TTPXLogger | None = None,
) -> list[ThreatReport]:
    """Load reports from a single aggregate file (.jsonl / .json) or a
    directory holding one report per .json file."""
    logger = logger or TTPXLogger("ttpx")
    path = Path(path)
    if path.is_dir():
        reports = []
        for file in sorted(path.glob("*.json")):
            reports.extend(_read_report_file(file, registry, logger))
    elif path.is_file():
        reports = _read_report_file(path, registry, logger)
    else:
        raise InputNotFoundError(f"Report dataset not found: {path}", path=str(path))
    logger.debug(f"Loaded {len(reports)} reports from {path}")
    return reports


def save_report_dataset(
    reports: list[ThreatReport], path: str | Path, registry_version: str = ""
) -> None:
    write_jsonl(path, [_header(registry_version)] + [r.to_record() for r in reports])
