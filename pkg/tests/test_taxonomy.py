import json
from pathlib import Path

import pytest

from ttpx.errors import InputNotFoundError, NotFoundError, TaxonomyError
from ttpx.taxonomy import (
    Technique,
    TechniqueRegistry,
    ingest_attack_feed,
    is_sub_technique,
    load_taxonomy,
    lookup,
    save_taxonomy,
    validate_id,
)


@pytest.mark.parametrize(
    "candidate,expected",
    [
        ("T1059", True),
        ("T1059.001", True),
        ("T105", False),
        ("T10590", False),
        ("t1059", False),
        ("T1059.01", False),
        ("1059", False),
        ("", False),
        (None, False),
    ],
)
def test_validate_id(candidate, expected):
    assert validate_id(candidate) is expected


def test_is_sub_technique():
    assert is_sub_technique("T1059.001")
    assert not is_sub_technique("T1059")


def test_registry_is_sorted_and_positions_are_stable():
    registry = TechniqueRegistry(
        (
            Technique("T1566", "Phishing", ("initial-access",)),
            Technique("T1059", "Command and Scripting Interpreter", ("execution",)),
        )
    )
    assert registry.ids == ["T1059", "T1566"]
    assert registry.position("T1566") == 1
    assert registry.class_count == len(registry) == 2
    assert "T1059" in registry
    assert "T9999" not in registry
    assert registry.version.startswith("sha256:")


def test_lookup(registry):
    technique = lookup(registry, "T1059")
    assert technique.name == "Command and Scripting Interpreter"
    assert technique.tactics == ("execution",)

    with pytest.raises(NotFoundError) as exc:
        lookup(registry, "T9999")
    assert exc.value.key == "T9999"
    assert isinstance(exc.value, KeyError)


def test_registry_rejects_duplicates_and_empty():
    technique = Technique("T1059", "Command and Scripting Interpreter", ("execution",))
    with pytest.raises(TaxonomyError, match="Duplicate"):
        TechniqueRegistry((technique, technique))
    with pytest.raises(TaxonomyError):
        TechniqueRegistry(())


def test_technique_rejects_bad_id_and_empty_name():
    with pytest.raises(TaxonomyError):
        Technique("X1059", "Name")
    with pytest.raises(TaxonomyError):
        Technique("T1059", "  ")


def test_technique_needs_a_tactic():
    with pytest.raises(TaxonomyError, match="tactic"):
        Technique("T1059", "Command and Scripting Interpreter")
    with pytest.raises(TaxonomyError, match="tactic"):
        Technique("T1059", "Command and Scripting Interpreter", ("execution", " "))


def test_save_and_load_taxonomy(tmp_path, registry):
    path = tmp_path / "tax.jsonl"
    save_taxonomy(registry, path)
    loaded = load_taxonomy(path)
    assert loaded.ids == registry.ids
    assert loaded.version == "test-v1"
    assert loaded.lookup("T1547").tactics == ("persistence", "privilege-escalation")


def _write(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records))
    return path


def test_load_taxonomy_without_header_gets_a_digest_version(tmp_path):
    path = _write(tmp_path / "tax.jsonl", [{"id": "T1059", "name": "Cmd", "tactics": ["execution"]}])
    registry = load_taxonomy(path)
    assert registry.version == TechniqueRegistry.digest_version(["T1059"])


@pytest.mark.parametrize(
    "records,message",
    [
        ([{"id": "T1059.001", "name": "PowerShell", "tactics": ["execution"]}], "sub-technique"),
        ([{"id": "T59", "name": "Bad", "tactics": ["execution"]}], "malformed"),
        (
            [
                {"id": "T1059", "name": "Cmd", "tactics": ["execution"]},
                {"id": "T1059", "name": "Cmd again", "tactics": ["execution"]},
            ],
            "duplicate technique id T1059",
        ),
        ([{"id": "T1059", "name": "Cmd", "tactics": []}], "tactics"),
        ([{"id": "T1059", "name": "", "tactics": ["execution"]}], "empty name"),
        ([{"format_version": 2}, {"id": "T1059", "name": "Cmd", "tactics": ["execution"]}], "format_version"),
    ],
)
def test_load_taxonomy_rejects_bad_records(tmp_path, records, message):
    path = _write(tmp_path / "tax.jsonl", records)
    with pytest.raises(TaxonomyError, match=message):
        load_taxonomy(path)


def test_load_taxonomy_reports_line_of_duplicate(tmp_path):
    path = _write(
        tmp_path / "tax.jsonl",
        [
            {"format_version": 1, "registry_version": "v"},
            {"id": "T1059", "name": "Cmd", "tactics": ["execution"]},
            {"id": "T1059", "name": "Cmd", "tactics": ["execution"]},
        ],
    )
    with pytest.raises(TaxonomyError) as exc:
        load_taxonomy(path)
    assert exc.value.context["line"] == 3


def test_load_taxonomy_missing_file(tmp_path):
    with pytest.raises(InputNotFoundError):
        load_taxonomy(tmp_path / "missing.jsonl")


def test_load_taxonomy_invalid_json(tmp_path):
    path = tmp_path / "tax.jsonl"
    path.write_text("{not json\n")
    with pytest.raises(TaxonomyError):
        load_taxonomy(path)


def test_shipped_sample_taxonomy_loads():
    registry = load_taxonomy(Path(__file__).parents[1] / "data" / "taxonomy" / "techniques.jsonl")
    assert registry.version == "attack-sample-31"
    assert registry.class_count == 31
    assert registry.lookup("T1566").name == "Phishing"


def _attack_pattern(external_id, name, tactics, **extra):
    suffix = int(external_id[1:5]) * 1000 + len(external_id)
    return {
        "type": "attack-pattern",
        "spec_version": "2.1",
        "id": f"attack-pattern--00000000-0000-4000-8000-{suffix:012d}",
        "created": "2020-01-01T00:00:00.000Z",
        "modified": "2020-01-01T00:00:00.000Z",
        "name": name,
        "external_references": [{"source_name": "mitre-attack", "external_id": external_id}],
        "kill_chain_phases": [{"kill_chain_name": "mitre-attack", "phase_name": t} for t in tactics],
        **extra,
    }


def test_ingest_attack_feed(tmp_path, logger_mock):
    feed = {
        "type": "bundle",
        "id": "bundle--00000000-0000-4000-8000-000000000000",
        "objects": [
            _attack_pattern("T1566", "Phishing", ["initial-access"]),
            _attack_pattern("T1547", "Boot or Logon Autostart Execution", ["privilege-escalation", "persistence"]),
            _attack_pattern("T1059.001", "PowerShell", ["execution"]),
            _attack_pattern("T1064", "Scripting", ["execution"], revoked=True),
            _attack_pattern("T1108", "Redundant Access", ["persistence"], x_mitre_deprecated=True),
        ],
    }
    feed_path = tmp_path / "enterprise-attack.json"
    feed_path.write_text(json.dumps(feed))
    out = tmp_path / "out" / "techniques.jsonl"

    registry = ingest_attack_feed(feed_path, out, logger_mock)

    assert registry.ids == ["T1547", "T1566"]
    assert registry.lookup("T1547").tactics == ("persistence", "privilege-escalation")
    assert load_taxonomy(out).ids == ["T1547", "T1566"]
    assert "3 attack-patterns skipped" in logger_mock._log_history[-1]


def test_ingest_skips_patterns_outside_the_attack_kill_chain(tmp_path, logger_mock):
    other_chain = [{"kill_chain_name": "lockheed", "phase_name": "delivery"}]
    feed = {
        "type": "bundle",
        "id": "bundle--00000000-0000-4000-8000-000000000000",
        "objects": [
            _attack_pattern("T1566", "Phishing", ["initial-access"]),
            _attack_pattern("T1480", "Execution Guardrails", [], kill_chain_phases=other_chain),
        ],
    }
    feed_path = tmp_path / "enterprise-attack.json"
    feed_path.write_text(json.dumps(feed))

    registry = ingest_attack_feed(feed_path, tmp_path / "techniques.jsonl", logger_mock)

    assert registry.ids == ["T1566"]
    assert "1 attack-patterns skipped" in logger_mock._log_history[-1]


def test_ingest_attack_feed_missing(tmp_path):
    with pytest.raises(InputNotFoundError):
        ingest_attack_feed(tmp_path / "nope.json", tmp_path / "out.jsonl")
