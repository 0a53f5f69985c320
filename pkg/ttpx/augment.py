"""Contextual augmentation of labelled sentences.

Every whitespace-delimited word is masked in turn, the masked-LM proposes
`top_k` replacement words, and a substituted sentence is kept when its
embedding stays within `similarity_threshold` (cosine, inclusive) of the
original.
"""

import json
from collections import Counter
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ttpx.datasets import LabeledSentence, Origin, SentenceDataset
from ttpx.errors import AugmentationError, TTPXError, UsageError, ValidationError
from ttpx.logger import TTPXLogger
from ttpx.modeling.backends import EmbeddingBackend, EmbeddingVector, MaskedLMBackend, thread_safe
from ttpx.utils import dumps_canonical, iter_jsonl, run_ordered, sha256_hex

CHECKPOINT_FILE = "augment_checkpoint.jsonl"

STOPWORDS = frozenset(
    """a an the and or but if of at by for with about to from in on into onto over under
    is are was were be been being has have had do does did it its this that these those
    as than then so such not no nor can could will would shall should may might must
    he she they we you i his her their our your them us him me""".split()
)
_WORD_PUNCTUATION = "\"'`.,;:!?()[]{}<>"


def _fold(word: str) -> str:
    return word.strip(_WORD_PUNCTUATION).casefold()


@dataclass(frozen=True)
class AugmentationConfig:
    top_k: int = 5
    similarity_threshold: float = 0.975
    mask_token: str = "<mask>"
    max_outputs_per_sentence: int | None = None
    best_only: bool = False
    skip_stopwords: bool = False

    def __post_init__(self):
        if not 0.0 <= self.similarity_threshold <= 1.0:
            raise UsageError(
                f"similarity threshold must be in [0, 1], got {self.similarity_threshold}",
                theta=self.similarity_threshold,
            )
        if self.top_k < 1:
            raise UsageError(f"top_k must be >= 1, got {self.top_k}", top_k=self.top_k)
        if self.max_outputs_per_sentence is not None and self.max_outputs_per_sentence < 0:
            raise UsageError("max_outputs_per_sentence must be non-negative")
        if not self.mask_token:
            raise UsageError("mask token must be non-empty")

    def to_record(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class AugmentedSentence:
    text: str
    source_text: str
    masked_position: int
    replacement_word: str
    similarity: float
    candidate_rank: int = 0

    def to_record(self) -> dict:
        return asdict(self)


def _as_array(vector) -> np.ndarray:
    if isinstance(vector, EmbeddingVector):
        return vector.values
    return np.asarray(vector, dtype=np.float64)


def cosine_similarity(a, b) -> float:
    a, b = _as_array(a), _as_array(b)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    norm_a, norm_b = np.linalg.norm(a), np.linalg.norm(b)
    if norm_a == 0 or norm_b == 0:
        raise ValueError("cosine similarity is undefined for a zero vector")
    return float(np.clip(np.dot(a, b) / (norm_a * norm_b), -1.0, 1.0))


def augment_sentence(
    sentence: str,
    config: AugmentationConfig,
    mlm: MaskedLMBackend,
    embedder: EmbeddingBackend,
) -> list[AugmentedSentence]:
    words = sentence.split()
    if not words:
        raise ValidationError("cannot augment an empty sentence")

    try:
        original = embedder.embed(sentence).values
    except TTPXError:
        raise
    except Exception as e:
        raise AugmentationError(f"embedding failed: {e!r}", sentence=sentence) from e

    outputs = []
    for position, word in enumerate(words):
        if config.skip_stopwords and _fold(word) in STOPWORDS:
            continue
        masked = " ".join(words[:position] + [config.mask_token] + words[position + 1 :])
        try:
            predictions = mlm.predict_masked(masked, config.top_k)
        except Exception as e:
            raise AugmentationError(
                f"masked prediction failed at word {position}: {e}",
                sentence=sentence,
                position=position,
            ) from e

        candidates = []
        for rank, prediction in enumerate(predictions):
            replacement = prediction.word.strip()
            # Single-word edits that change the word itself, not its case or punctuation.
            if not _fold(replacement) or _fold(replacement) == _fold(word) or len(replacement.split()) != 1:
                continue
            text = " ".join(words[:position] + [replacement] + words[position + 1 :])
            candidates.append((rank, replacement, text))
        if not candidates:
            continue

        try:
            vectors = embedder.embed_batch([text for _, _, text in candidates])
        except Exception as e:
            raise AugmentationError(
                f"embedding failed at word {position}: {e!r}",
                sentence=sentence,
                position=position,
            ) from e

        kept = []
        for (rank, replacement, text), vector in zip(candidates, vectors):
            similarity = cosine_similarity(original, vector)
            if similarity >= config.similarity_threshold:
                kept.append(AugmentedSentence(text, sentence, position, replacement, similarity, rank))
        if config.best_only and kept:
            kept = [max(kept, key=lambda a: (a.similarity, -a.candidate_rank))]
        outputs.extend(kept)

    outputs.sort(key=lambda a: (a.masked_position, a.candidate_rank))
    seen, unique = {sentence}, []
    for augmented in outputs:
        if augmented.text not in seen:
            seen.add(augmented.text)
            unique.append(augmented)
    if config.max_outputs_per_sentence is not None:
        unique = unique[: config.max_outputs_per_sentence]
    return unique


class _Checkpoint:
    """Per-entry results appended as JSON lines so an interrupted run can
    resume. The first line fingerprints the config and input dataset."""

    def __init__(self, directory: str | Path, fingerprint: str, logger: TTPXLogger):
        self.path = Path(directory) / CHECKPOINT_FILE
        self.fingerprint = fingerprint
        self.logger = logger
        self.done: dict[int, list[AugmentedSentence]] = {}

    def load(self) -> None:
        if not self.path.exists():
            return
        records = [record for _, record in iter_jsonl(self.path)]
        if not records or records[0].get("fingerprint") != self.fingerprint:
            self.logger.warning(f"Ignoring stale augmentation checkpoint {self.path}")
            return
        for record in records[1:]:
            self.done[record["index"]] = [AugmentedSentence(**r) for r in record["outputs"]]
        self.logger.info(f"Resuming augmentation: {len(self.done)} entries already done")

    def start(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if not self.done:
            with open(self.path, "w", encoding="utf-8") as f:
                f.write(dumps_canonical({"fingerprint": self.fingerprint}) + "\n")

    def append(self, index: int, outputs: list[AugmentedSentence]) -> None:
        with open(self.path, "a", encoding="utf-8") as f:
            record = {"index": index, "outputs": [o.to_record() for o in outputs]}
            f.write(dumps_canonical(record) + "\n")

    def clear(self) -> None:
        self.path.unlink(missing_ok=True)


def augment_dataset(
    dataset: SentenceDataset,
    config: AugmentationConfig,
    mlm: MaskedLMBackend,
    embedder: EmbeddingBackend,
    jobs: int = 1,
    checkpoint_dir: str | Path | None = None,
    logger: TTPXLogger | None = None,
) -> SentenceDataset:
    """All input entries, followed by the augmented entries in source order.
    Augmented text that repeats any earlier text in the output is dropped."""
    logger = logger or TTPXLogger("ttpx")
    if jobs > 1:
        mlm, embedder = thread_safe(mlm), thread_safe(embedder)

    sources = [i for i, entry in enumerate(dataset.entries) if entry.origin is Origin.BASE]
    checkpoint = None
    results: dict[int, list[AugmentedSentence]] = {}
    if checkpoint_dir is not None:
        fingerprint = sha256_hex(
            dumps_canonical({"config": config.to_record(), "texts": dataset.texts})
        )
        checkpoint = _Checkpoint(checkpoint_dir, fingerprint, logger)
        checkpoint.load()
        checkpoint.start()
        results.update(checkpoint.done)

    pending = [i for i in sources if i not in results]

    def work(index: int) -> list[AugmentedSentence]:
        return augment_sentence(dataset.entries[index].text, config, mlm, embedder)

    def store(position: int, outputs: list[AugmentedSentence]) -> None:
        results[pending[position]] = outputs
        if checkpoint:
            checkpoint.append(pending[position], outputs)

    try:
        run_ordered(work, pending, jobs=jobs, on_result=store, desc="Augmenting")
    except AugmentationError as e:
        if checkpoint:
            e.context["checkpoint"] = str(checkpoint.path)
        raise

    seen = set(dataset.texts)
    entries = list(dataset.entries)
    dropped = 0
    for index in sources:
        source = dataset.entries[index]
        for augmented in results[index]:
            if augmented.text in seen:
                dropped += 1
                continue
            seen.add(augmented.text)
            entries.append(
                LabeledSentence(augmented.text, source.label, Origin.AUGMENTED, source.text)
            )

    if checkpoint:
        checkpoint.clear()
    augmented_dataset = SentenceDataset(tuple(entries), dataset.registry_version)
    logger.info(
        f"Augmented {len(dataset)} sentences to {len(augmented_dataset)}",
        extra={"before": len(dataset), "after": len(augmented_dataset), "duplicates_dropped": dropped},
    )
    return augmented_dataset


def augmentation_summary(
    before: SentenceDataset, after: SentenceDataset, config: AugmentationConfig | None = None
) -> dict:
    counts_before, counts_after = Counter(before.labels), Counter(after.labels)
    summary = {
        "classes": {
            label: {"before": counts_before.get(label, 0), "after": counts_after[label]}
            for label in sorted(counts_after)
        },
        "total_before": len(before),
        "total_after": len(after),
        "augmented": len(after) - len(before),
    }
    if config is not None:
        summary["config"] = config.to_record()
    return summary


def write_summary(summary: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
