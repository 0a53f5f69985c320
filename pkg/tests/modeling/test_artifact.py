import json

import numpy as np
import pytest

from ttpx.errors import ArtifactError, InputNotFoundError
from ttpx.modeling import ClassifierArtifact, HashingEmbedder, TrainingConfig, classify, load_artifact, save_artifact
from ttpx.modeling.artifact import HEAD_WEIGHTS, MANIFEST, resolve_model_path
from ttpx.taxonomy import Technique, TechniqueRegistry


@pytest.fixture
def artifact(registry):
    rng = np.random.default_rng(3)
    m, dim = registry.class_count, 32
    return ClassifierArtifact(
        encoder_reference="stub:hashing-32",
        backend="stub",
        backend_options={"dimension": dim, "max_tokens": 256},
        head_weights=rng.normal(size=(m, dim)),
        head_bias=rng.normal(size=m),
        registry_version=registry.version,
        label_ids=tuple(registry.ids),
        training_config=TrainingConfig(learning_rate=0.01, epochs=2),
        metrics=[{"epoch": 1, "loss": 1.2, "accuracy": 0.5}],
        encoder=HashingEmbedder(dimension=dim),
    )


def test_save_and_load(tmp_path, artifact, registry, logger_mock):
    save_artifact(artifact, tmp_path / "model", logger_mock)
    loaded = load_artifact(tmp_path / "model", registry)

    np.testing.assert_array_equal(loaded.head_weights, artifact.head_weights)
    np.testing.assert_array_equal(loaded.head_bias, artifact.head_bias)
    assert loaded.label_ids == artifact.label_ids
    assert loaded.training_config == artifact.training_config
    assert loaded.metrics == artifact.metrics
    assert isinstance(loaded.encoder, HashingEmbedder)
    assert loaded.encoder.dimension == 32

    sentence = "The implant runs PowerShell"
    np.testing.assert_allclose(
        classify(sentence, loaded).probabilities, classify(sentence, artifact).probabilities
    )


def test_manifest_contents(tmp_path, artifact, logger_mock):
    save_artifact(artifact, tmp_path, logger_mock)
    manifest = json.loads((tmp_path / MANIFEST).read_text())
    assert manifest["format_version"] == 1
    assert manifest["class_count"] == 4
    assert manifest["dimension"] == 32
    assert manifest["registry_version"] == "test-v1"
    assert manifest["encoder_updated"] is False
    assert (tmp_path / HEAD_WEIGHTS).stat().st_size == 4 * (4 * 32 + 4)


def test_load_without_resolving_encoder(tmp_path, artifact, logger_mock):
    save_artifact(artifact, tmp_path, logger_mock)
    assert load_artifact(tmp_path, resolve_encoder=False).encoder is None


def test_truncated_weights(tmp_path, artifact, logger_mock):
    save_artifact(artifact, tmp_path, logger_mock)
    weights = tmp_path / HEAD_WEIGHTS
    weights.write_bytes(weights.read_bytes()[:-4])
    with pytest.raises(ArtifactError, match="bytes"):
        load_artifact(tmp_path)


def test_checksum_mismatch(tmp_path, artifact, logger_mock):
    save_artifact(artifact, tmp_path, logger_mock)
    weights = tmp_path / HEAD_WEIGHTS
    data = bytearray(weights.read_bytes())
    data[0] ^= 0xFF
    weights.write_bytes(bytes(data))
    with pytest.raises(ArtifactError, match="checksum"):
        load_artifact(tmp_path)


def test_registry_version_mismatch(tmp_path, artifact, logger_mock):
    save_artifact(artifact, tmp_path, logger_mock)
    other = TechniqueRegistry((Technique("T1059", "Command and Scripting Interpreter", ("execution",)),), version="v2")
    with pytest.raises(ArtifactError, match="different taxonomy"):
        load_artifact(tmp_path, other)


@pytest.mark.parametrize("content", ["{broken", json.dumps({"format_version": 99})])
def test_corrupt_manifest(tmp_path, artifact, logger_mock, content):
    save_artifact(artifact, tmp_path, logger_mock)
    (tmp_path / MANIFEST).write_text(content)
    with pytest.raises(ArtifactError):
        load_artifact(tmp_path)


def test_missing_manifest(tmp_path):
    with pytest.raises(ArtifactError):
        load_artifact(tmp_path)


def test_missing_directory(tmp_path):
    with pytest.raises(InputNotFoundError):
        load_artifact(tmp_path / "nope")


def test_model_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.delenv("TTPX_MODEL_DIR", raising=False)
    with pytest.raises(InputNotFoundError):
        resolve_model_path(None)
    monkeypatch.setenv("TTPX_MODEL_DIR", str(tmp_path))
    assert resolve_model_path(None) == tmp_path
    assert resolve_model_path(tmp_path / "explicit") == tmp_path / "explicit"


def test_updated_encoder_needs_saver(tmp_path, artifact, logger_mock):
    artifact.encoder_updated = True
    with pytest.raises(ArtifactError, match="cannot be saved"):
        save_artifact(artifact, tmp_path, logger_mock)


def test_updated_encoder_is_saved_next_to_the_head(tmp_path, artifact, logger_mock):
    class SavingEncoder(HashingEmbedder):
        def save_encoder(self, directory):
            directory.mkdir(parents=True)
            (directory / "weights.bin").write_bytes(b"\x00")

    artifact.encoder = SavingEncoder(dimension=32)
    artifact.encoder_updated = True
    save_artifact(artifact, tmp_path, logger_mock)

    assert (tmp_path / "encoder" / "weights.bin").exists()
    manifest = json.loads((tmp_path / MANIFEST).read_text())
    assert manifest["backend_options"]["checkpoint"] == "encoder"
    loaded = load_artifact(tmp_path, resolve_encoder=False)
    assert loaded.backend_options["checkpoint"] == str(tmp_path / "encoder")
    assert loaded.encoder_updated is True
