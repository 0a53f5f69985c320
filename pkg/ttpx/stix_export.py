"""STIX 2.1 export of extraction results.

Bundle shape: one identity for the producing tool, one report whose
`object_refs` lists the attack-patterns, one attack-pattern per extracted
technique. Object ids are uuid5 names under `STIX_NAMESPACE`, and all
timestamps come from one call to the injected clock, so a fixed clock gives
byte-identical output.
"""

import json
import re
import uuid
from datetime import datetime, timezone
from typing import Callable

from stix2.v21 import AttackPattern, Bundle, ExternalReference, Identity, KillChainPhase, Report

from ttpx.errors import StixError, UsageError
from ttpx.extract import ExtractionResult
from ttpx.taxonomy import TechniqueRegistry
from ttpx.utils import dumps_canonical

STIX_NAMESPACE = uuid.UUID("5b7f6f1e-3c2a-5d8e-9a41-7d1c0e2b6a93")
DEFAULT_PRODUCER = "ttpx"
ATTACK_SOURCE = "mitre-attack"
ATTRIBUTIONS_PROPERTY = "x_ttpx_attributions"

_UUID = r"[0-9a-f]{8}-[0-9a-f]{4}-[0-9a-f]{4}-[0-9a-f]{4}-[0-9a-f]{12}"
_ID_PATTERN = re.compile(rf"^([a-z0-9-]+)--{_UUID}$")
_TIMESTAMP = re.compile(r"^\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}(\.\d+)?Z$")

_COMMON_REQUIRED = ("type", "id", "spec_version", "created", "modified")
_TYPE_REQUIRED = {
    "identity": ("name",),
    "report": ("name", "published", "object_refs"),
    "attack-pattern": ("name", "external_references"),
}


def utc_now() -> datetime:
    return datetime.now(timezone.utc)


def parse_timestamp(value: str | int) -> datetime:
    """Accepts epoch seconds (as in SOURCE_DATE_EPOCH) or an ISO-8601 string.
    Naive timestamps are taken as UTC."""
    text = str(value).strip()
    try:
        if text.isdigit():
            return datetime.fromtimestamp(int(text), tz=timezone.utc)
        parsed = datetime.fromisoformat(text.replace("Z", "+00:00"))
    except (ValueError, OverflowError, OSError):
        raise UsageError(f"invalid timestamp {value!r}, expected epoch seconds or ISO-8601", timestamp=str(value))
    if parsed.tzinfo is None:
        parsed = parsed.replace(tzinfo=timezone.utc)
    return parsed.astimezone(timezone.utc)


def fixed_clock(value: str | int | datetime) -> Callable[[], datetime]:
    if isinstance(value, datetime):
        moment = value if value.tzinfo else value.replace(tzinfo=timezone.utc)
    else:
        moment = parse_timestamp(value)
    return lambda: moment


def stix_id(object_type: str, name: str) -> str:
    return f"{object_type}--{uuid.uuid5(STIX_NAMESPACE, f'{object_type}:{name}')}"


def to_stix_bundle(
    result: ExtractionResult,
    registry: TechniqueRegistry,
    producer_name: str = DEFAULT_PRODUCER,
    clock: Callable[[], datetime] = utc_now,
    include_attributions: bool = False,
) -> Bundle:
    unresolved = sorted(t for t in result.techniques if t not in registry)
    if unresolved:
        raise StixError(
            f"techniques not in taxonomy: {', '.join(unresolved)}",
            report_id=result.report_id,
            techniques=unresolved,
        )
    now = clock()
    identity = Identity(
        id=stix_id("identity", producer_name),
        name=producer_name,
        identity_class="system",
        created=now,
        modified=now,
    )

    attack_patterns = []
    for technique_id in sorted(result.techniques):
        technique = registry.lookup(technique_id)
        attack_patterns.append(
            AttackPattern(
                id=stix_id("attack-pattern", technique_id),
                name=technique.name,
                created=now,
                modified=now,
                created_by_ref=identity.id,
                external_references=[
                    ExternalReference(
                        source_name=ATTACK_SOURCE,
                        external_id=technique_id,
                        url=f"https://attack.mitre.org/techniques/{technique_id}/",
                    )
                ],
                kill_chain_phases=[
                    KillChainPhase(kill_chain_name=ATTACK_SOURCE, phase_name=tactic)
                    for tactic in technique.tactics
                ],
            )
        )

    # A STIX report must reference at least one object; with nothing
    # extracted it references its producer.
    object_refs = [ap.id for ap in attack_patterns] or [identity.id]
    custom = {}
    if include_attributions and result.attributions:
        custom[ATTRIBUTIONS_PROPERTY] = [a.to_record() for a in result.attributions]
    report = Report(
        id=stix_id("report", result.report_id),
        name=f"Techniques extracted from {result.report_id}",
        description=result.report_id,
        report_types=["threat-report"],
        published=now,
        created=now,
        modified=now,
        created_by_ref=identity.id,
        object_refs=object_refs,
        allow_custom=bool(custom),
        **custom,
    )
    bundle_name = "|".join([result.report_id, *sorted(result.techniques)])
    return Bundle(
        identity,
        report,
        *attack_patterns,
        id=stix_id("bundle", bundle_name),
        allow_custom=bool(custom),
    )


def serialize_bundle(bundle: Bundle) -> str:
    return dumps_canonical(json.loads(bundle.serialize()), indent=2)


def bundle_technique_ids(document: str | dict) -> set[str]:
    bundle = json.loads(document) if isinstance(document, str) else document
    return {
        reference["external_id"]
        for obj in bundle.get("objects", [])
        if obj.get("type") == "attack-pattern"
        for reference in obj.get("external_references", [])
        if reference.get("source_name") == ATTACK_SOURCE
    }


def _check_object(obj: dict, position: int) -> list[str]:
    where = f"objects[{position}]"
    if not isinstance(obj, dict):
        return [f"{where}: not a JSON object"]
    violations = []
    object_type = obj.get("type")
    for name in _COMMON_REQUIRED + _TYPE_REQUIRED.get(object_type, ()):
        if name not in obj or obj[name] in (None, "", []):
            violations.append(f"{where} ({object_type}): missing required field `{name}`")

    if "id" in obj:
        match = _ID_PATTERN.match(str(obj["id"]))
        if not match or match.group(1) != object_type:
            violations.append(f"{where}: malformed id {obj['id']!r}")
    if "spec_version" in obj and obj["spec_version"] != "2.1":
        violations.append(f"{where}: spec_version is {obj['spec_version']!r}, expected '2.1'")
    for name in ("created", "modified", "published"):
        if name in obj and not _TIMESTAMP.match(str(obj[name])):
            violations.append(f"{where}: `{name}` is not a STIX timestamp")

    if object_type == "attack-pattern" and obj.get("external_references"):
        if not any(
            r.get("source_name") == ATTACK_SOURCE and r.get("external_id")
            for r in obj["external_references"]
        ):
            violations.append(f"{where}: no {ATTACK_SOURCE} external reference with an external_id")
    return violations


def validate_bundle(document: str | bytes | dict) -> list[str]:
    """Structural check of a serialized bundle. Returns the violations found
    (empty when valid); raises StixError when the document is not JSON."""
    if isinstance(document, dict):
        bundle = document
    else:
        try:
            bundle = json.loads(document)
        except (json.JSONDecodeError, UnicodeDecodeError) as e:
            raise StixError(f"STIX document is not valid JSON: {e}")
    if not isinstance(bundle, dict):
        raise StixError("STIX document must be a JSON object")

    violations = []
    if bundle.get("type") != "bundle":
        violations.append("top level: `type` must be 'bundle'")
    match = _ID_PATTERN.match(str(bundle.get("id", "")))
    if not match or match.group(1) != "bundle":
        violations.append(f"top level: malformed bundle id {bundle.get('id')!r}")
    objects = bundle.get("objects")
    if not isinstance(objects, list):
        violations.append("top level: `objects` must be a list")
        return violations

    ids = set()
    for position, obj in enumerate(objects):
        violations.extend(_check_object(obj, position))
        if isinstance(obj, dict) and "id" in obj:
            if obj["id"] in ids:
                violations.append(f"objects[{position}]: duplicate id {obj['id']}")
            ids.add(obj["id"])

    for position, obj in enumerate(objects):
        if not isinstance(obj, dict):
            continue
        refs = obj.get("object_refs") or []
        for ref in refs:
            if ref not in ids:
                violations.append(f"objects[{position}]: object_ref {ref} does not resolve")
        if len(refs) != len(set(refs)):
            violations.append(f"objects[{position}]: object_refs lists an id more than once")
        created_by = obj.get("created_by_ref")
        if created_by is not None and created_by not in ids:
            violations.append(f"objects[{position}]: created_by_ref {created_by} does not resolve")
    return violations
