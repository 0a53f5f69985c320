import copy
import json
from datetime import datetime, timezone

import pytest

from ttpx.errors import StixError, UsageError
from ttpx.extract import ExtractionConfig, ExtractionResult, SentenceAttribution
from ttpx.stix_export import (
    bundle_technique_ids,
    parse_timestamp,
    serialize_bundle,
    stix_id,
    to_stix_bundle,
    validate_bundle,
)


def fixed_clock():
    return datetime(2024, 5, 1, 12, 0, 0, tzinfo=timezone.utc)


def _result(techniques, attributions=()):
    return ExtractionResult("report-42", frozenset(techniques), tuple(attributions), "stub:hashing-768", ExtractionConfig())


def _objects(document, object_type):
    return [o for o in json.loads(document)["objects"] if o["type"] == object_type]


def test_single_technique_bundle(registry):
    document = serialize_bundle(to_stix_bundle(_result({"T1059"}), registry, clock=fixed_clock))

    (pattern,) = _objects(document, "attack-pattern")
    assert pattern["name"] == "Command and Scripting Interpreter"
    assert pattern["id"] == stix_id("attack-pattern", "T1059")
    reference = pattern["external_references"][0]
    assert reference["source_name"] == "mitre-attack"
    assert reference["external_id"] == "T1059"
    assert reference["url"] == "https://attack.mitre.org/techniques/T1059/"
    assert pattern["kill_chain_phases"] == [{"kill_chain_name": "mitre-attack", "phase_name": "execution"}]

    (report,) = _objects(document, "report")
    assert report["object_refs"] == [pattern["id"]]
    assert report["description"] == "report-42"
    assert report["published"].startswith("2024-05-01T12:00:00")

    (identity,) = _objects(document, "identity")
    assert identity["name"] == "ttpx"
    assert report["created_by_ref"] == identity["id"]

    assert validate_bundle(document) == []
    assert bundle_technique_ids(document) == {"T1059"}


def test_multiple_tactics_and_sorted_patterns(registry):
    document = serialize_bundle(to_stix_bundle(_result({"T1566", "T1547"}), registry, clock=fixed_clock))
    patterns = _objects(document, "attack-pattern")
    assert [p["external_references"][0]["external_id"] for p in patterns] == ["T1547", "T1566"]
    assert [phase["phase_name"] for phase in patterns[0]["kill_chain_phases"]] == ["persistence", "privilege-escalation"]
    assert validate_bundle(document) == []


def test_empty_result_references_the_producer(registry):
    document = serialize_bundle(to_stix_bundle(_result(set()), registry, clock=fixed_clock))
    assert _objects(document, "attack-pattern") == []
    (report,) = _objects(document, "report")
    (identity,) = _objects(document, "identity")
    assert report["object_refs"] == [identity["id"]]
    assert bundle_technique_ids(document) == set()
    assert validate_bundle(document) == []


def test_serialization_is_deterministic(registry):
    first = serialize_bundle(to_stix_bundle(_result({"T1059", "T1071"}), registry, clock=fixed_clock))
    second = serialize_bundle(to_stix_bundle(_result({"T1071", "T1059"}), registry, clock=fixed_clock))
    assert first == second


@pytest.mark.parametrize(
    "value",
    ["2024-05-01T12:00:00Z", "2024-05-01T12:00:00", "2024-05-01T14:00:00+02:00", "1714564800", 1714564800],
)
def test_parse_timestamp(value):
    assert parse_timestamp(value) == fixed_clock()


@pytest.mark.parametrize("value", ["yesterday", "2024-13-01", ""])
def test_parse_timestamp_rejects_garbage(value):
    with pytest.raises(UsageError):
        parse_timestamp(value)


def test_ids_are_stable_across_producers(registry):
    a = json.loads(serialize_bundle(to_stix_bundle(_result({"T1059"}), registry, "tool-a", clock=fixed_clock)))
    b = json.loads(serialize_bundle(to_stix_bundle(_result({"T1059"}), registry, "tool-b", clock=fixed_clock)))
    assert a["id"] == b["id"]
    assert stix_id("identity", "tool-a") != stix_id("identity", "tool-b")


def test_unknown_technique_raises(registry):
    with pytest.raises(StixError) as exc:
        to_stix_bundle(_result({"T1059", "T9999"}), registry, clock=fixed_clock)
    assert exc.value.context["techniques"] == ["T9999"]
    assert exc.value.exit_code == 8


def test_attributions_extension(registry):
    attributions = [SentenceAttribution(0, "Uses PowerShell.", "T1059", 0.91, True)]
    bundle = to_stix_bundle(_result({"T1059"}, attributions), registry, clock=fixed_clock, include_attributions=True)
    (report,) = _objects(serialize_bundle(bundle), "report")
    assert report["x_ttpx_attributions"][0]["predicted_label"] == "T1059"

    plain = to_stix_bundle(_result({"T1059"}, attributions), registry, clock=fixed_clock)
    (report,) = _objects(serialize_bundle(plain), "report")
    assert "x_ttpx_attributions" not in report


@pytest.fixture
def valid_bundle(registry):
    return json.loads(serialize_bundle(to_stix_bundle(_result({"T1059", "T1566"}), registry, clock=fixed_clock)))


def _index(bundle, object_type):
    return next(i for i, o in enumerate(bundle["objects"]) if o["type"] == object_type)


def test_validate_missing_required_field(valid_bundle):
    broken = copy.deepcopy(valid_bundle)
    del broken["objects"][_index(broken, "report")]["published"]
    assert any("`published`" in v for v in validate_bundle(broken))


def test_validate_dangling_object_ref(valid_bundle):
    broken = copy.deepcopy(valid_bundle)
    broken["objects"][_index(broken, "report")]["object_refs"].append(stix_id("attack-pattern", "T0000"))
    assert any("does not resolve" in v for v in validate_bundle(broken))


def test_validate_duplicate_ids(valid_bundle):
    broken = copy.deepcopy(valid_bundle)
    broken["objects"].append(copy.deepcopy(broken["objects"][_index(broken, "attack-pattern")]))
    assert any("duplicate id" in v for v in validate_bundle(broken))


def test_validate_attack_pattern_without_attack_reference(valid_bundle):
    broken = copy.deepcopy(valid_bundle)
    pattern = broken["objects"][_index(broken, "attack-pattern")]
    pattern["external_references"] = [{"source_name": "capec", "external_id": "CAPEC-1"}]
    assert any("mitre-attack" in v for v in validate_bundle(broken))


@pytest.mark.parametrize(
    "field,value,fragment",
    [
        ("spec_version", "2.0", "spec_version"),
        ("created", "yesterday", "not a STIX timestamp"),
        ("id", "report--not-a-uuid", "malformed id"),
    ],
)
def test_validate_field_defects(valid_bundle, field, value, fragment):
    broken = copy.deepcopy(valid_bundle)
    broken["objects"][_index(broken, "report")][field] = value
    assert any(fragment in v for v in validate_bundle(broken))


def test_validate_top_level(valid_bundle):
    broken = copy.deepcopy(valid_bundle)
    broken["type"] = "collection"
    assert validate_bundle(broken) == ["top level: `type` must be 'bundle'"]
    with pytest.raises(StixError):
        validate_bundle("{not json")
    with pytest.raises(StixError):
        validate_bundle("[1, 2]")
