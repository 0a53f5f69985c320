"""ATT&CK technique registry: the classifier's label space."""

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

from ttpx.errors import InputNotFoundError, NotFoundError, TaxonomyError
from ttpx.logger import TTPXLogger
from ttpx.utils import iter_jsonl, sha256_hex, write_jsonl

TAXONOMY_FORMAT_VERSION = 1

TECHNIQUE_ID_PATTERN = re.compile(r"T\d{4}(?:\.\d{3})?")
TECHNIQUE_LEVEL_PATTERN = re.compile(r"T\d{4}")


def validate_id(candidate: str) -> bool:
    """True iff `candidate` is `T` + 4 digits with an optional `.NNN` suffix."""
    return isinstance(candidate, str) and bool(
        TECHNIQUE_ID_PATTERN.fullmatch(candidate)
    )


def is_sub_technique(candidate: str) -> bool:
    return validate_id(candidate) and "." in candidate


@dataclass(frozen=True)
class Technique:
    id: str
    name: str
    tactics: tuple[str, ...] = ()

    def __post_init__(self):
        if not validate_id(self.id):
            raise TaxonomyError(f"Malformed technique id: {self.id!r}", id=self.id)
        if not self.name or not self.name.strip():
            raise TaxonomyError(f"Technique {self.id} has an empty name", id=self.id)
        tactics = tuple(self.tactics)
        if not tactics or not all(isinstance(t, str) and t.strip() for t in tactics):
            raise TaxonomyError(f"Technique {self.id} needs at least one non-empty tactic", id=self.id)
        object.__setattr__(self, "tactics", tactics)

    def to_record(self) -> dict:
        return {"id": self.id, "name": self.name, "tactics": list(self.tactics)}


@dataclass(frozen=True)
class TechniqueRegistry:
    """Immutable, id-sorted collection of techniques. Position `i` in every
    label vector refers to `techniques[i]`."""

    techniques: tuple[Technique, ...]
    version: str = ""
    index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        techniques = tuple(sorted(self.techniques, key=lambda t: t.id))
        if not techniques:
            raise TaxonomyError("taxonomy must contain at least one technique")
        index = {}
        for position, technique in enumerate(techniques):
            if technique.id in index:
                raise TaxonomyError(
                    f"Duplicate technique id: {technique.id}", id=technique.id
                )
            index[technique.id] = position
        object.__setattr__(self, "techniques", techniques)
        object.__setattr__(self, "index", index)
        if not self.version:
            object.__setattr__(self, "version", self.digest_version(index))

    @staticmethod
    def digest_version(ids) -> str:
        return "sha256:" + sha256_hex("\n".join(sorted(ids)))[:12]

    @property
    def class_count(self) -> int:
        return len(self.techniques)

    @property
    def ids(self) -> list[str]:
        return [t.id for t in self.techniques]

    def lookup(self, technique_id: str) -> Technique:
        try:
            return self.techniques[self.index[technique_id]]
        except KeyError:
            raise NotFoundError(technique_id)

    def position(self, technique_id: str) -> int:
        try:
            return self.index[technique_id]
        except KeyError:
            raise NotFoundError(technique_id)

    def __len__(self) -> int:
        return self.class_count

    def __contains__(self, technique_id) -> bool:
        return technique_id in self.index

    def __iter__(self) -> Iterator[Technique]:
        return iter(self.techniques)


def lookup(registry: TechniqueRegistry, technique_id: str) -> Technique:
    return registry.lookup(technique_id)


def load_taxonomy(source: str | Path) -> TechniqueRegistry:
    """Load a taxonomy file: newline-delimited `{id, name, tactics}` records,
    optionally preceded by a `{format_version, registry_version}` header."""
    source = Path(source)
    if not source.is_file():
        raise InputNotFoundError(f"Taxonomy file not found: {source}", path=str(source))

    version = ""
    techniques = []
    seen = {}
    try:
        records = list(iter_jsonl(source))
    except ValueError as e:
        raise TaxonomyError(str(e), path=str(source))

    for line_number, record in records:
        if "format_version" in record:
            if record["format_version"] != TAXONOMY_FORMAT_VERSION:
                raise TaxonomyError(
                    f"Unsupported taxonomy format_version {record['format_version']!r}",
                    line=line_number,
                )
            version = str(record.get("registry_version") or "")
            continue

        technique_id = record.get("id")
        where = f"{source.name}:{line_number}"
        if not validate_id(technique_id):
            raise TaxonomyError(
                f"{where}: malformed technique id {technique_id!r}",
                line=line_number,
                id=technique_id,
            )
        if is_sub_technique(technique_id):
            raise TaxonomyError(
                f"{where}: sub-technique {technique_id} cannot be used as a class label",
                line=line_number,
                id=technique_id,
            )
        if technique_id in seen:
            raise TaxonomyError(
                f"{where}: duplicate technique id {technique_id} "
                f"(first seen on line {seen[technique_id]})",
                line=line_number,
                id=technique_id,
            )
        seen[technique_id] = line_number

        tactics = record.get("tactics") or []
        if not isinstance(tactics, list) or not tactics:
            raise TaxonomyError(
                f"{where}: technique {technique_id} needs a non-empty tactics list",
                line=line_number,
                id=technique_id,
            )
        name = record.get("name") or ""
        if not name.strip():
            raise TaxonomyError(
                f"{where}: technique {technique_id} has an empty name",
                line=line_number,
                id=technique_id,
            )
        techniques.append(Technique(technique_id, name.strip(), tuple(tactics)))

    return TechniqueRegistry(tuple(techniques), version=version)


def save_taxonomy(registry: TechniqueRegistry, path: str | Path) -> None:
    header = {
        "format_version": TAXONOMY_FORMAT_VERSION,
        "registry_version": registry.version,
    }
    write_jsonl(path, [header] + [t.to_record() for t in registry])


def _external_id(attack_pattern) -> str | None:
    for reference in attack_pattern.get("external_references", []):
        if reference.get("source_name") == "mitre-attack":
            return reference.get("external_id")
    return None


def ingest_attack_feed(
    feed_path: str | Path,
    out_path: str | Path,
    logger: TTPXLogger | None = None,
) -> TechniqueRegistry:
    """Convert an ATT&CK enterprise STIX bundle into the taxonomy format.
    Revoked, deprecated and sub-technique attack-patterns are dropped."""
    from stix2 import Filter, MemoryStore

    logger = logger or TTPXLogger("ttpx")
    feed_path = Path(feed_path)
    if not feed_path.is_file():
        raise InputNotFoundError(f"ATT&CK feed not found: {feed_path}", path=str(feed_path))

    with open(feed_path, encoding="utf-8") as reader:
        bundle = json.load(reader)
    src = MemoryStore(stix_data=bundle["objects"], allow_custom=True)

    techniques = []
    skipped = 0
    for pattern in src.query([Filter("type", "=", "attack-pattern")]):
        if pattern.get("revoked", False) or pattern.get("x_mitre_deprecated", False):
            skipped += 1
            continue
        technique_id = _external_id(pattern)
        if not technique_id or not TECHNIQUE_LEVEL_PATTERN.fullmatch(technique_id):
            skipped += 1
            continue
        tactics = sorted(
            {
                phase["phase_name"]
                for phase in pattern.get("kill_chain_phases", [])
                if phase.get("kill_chain_name") == "mitre-attack"
            }
        )
        if not tactics:
            skipped += 1
            continue
        techniques.append(Technique(technique_id, pattern["name"], tuple(tactics)))

    version = ""
    collections = src.query([Filter("type", "=", "x-mitre-collection")])
    if collections and collections[0].get("x_mitre_version"):
        version = f"attack-v{collections[0]['x_mitre_version']}"

    registry = TechniqueRegistry(tuple(techniques), version=version)
    save_taxonomy(registry, out_path)
    logger.info(
        f"Wrote {registry.class_count} techniques to {out_path} "
        f"(registry version {registry.version}, {skipped} attack-patterns skipped)"
    )
    return registry
