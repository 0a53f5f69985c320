"""Classifier artifact directory.

    <dir>/manifest.json     metadata, training config and history, checksum
    <dir>/head_weights.bin  little-endian float32: weights row-major (m x dim),
                            then bias (m)
    <dir>/encoder/          fine-tuned encoder, only when it was updated
"""

import json
import os
from pathlib import Path

import numpy as np

from ttpx.errors import ArtifactError, InputNotFoundError
from ttpx.logger import TTPXLogger
from ttpx.modeling.classifier import ClassifierArtifact
from ttpx.modeling.registry import EMBEDDING, BackendRegistry
from ttpx.modeling.training import TrainingConfig
from ttpx.taxonomy import TechniqueRegistry
from ttpx.utils import dumps_canonical, sha256_hex

ARTIFACT_FORMAT_VERSION = 1
MANIFEST = "manifest.json"
HEAD_WEIGHTS = "head_weights.bin"
ENCODER_DIR = "encoder"
HEAD_DTYPE = np.dtype("<f4")


def resolve_model_path(path: str | Path | None) -> Path:
    path = path or os.environ.get("TTPX_MODEL_DIR")
    if not path:
        raise InputNotFoundError("no model path given and TTPX_MODEL_DIR is not set")
    return Path(path)


def save_artifact(artifact: ClassifierArtifact, path: str | Path, logger: TTPXLogger | None = None) -> None:
    logger = logger or TTPXLogger("ttpx")
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)

    head = np.concatenate(
        [artifact.head_weights.astype(HEAD_DTYPE).ravel(), artifact.head_bias.astype(HEAD_DTYPE)]
    ).tobytes()
    (path / HEAD_WEIGHTS).write_bytes(head)

    backend_options = dict(artifact.backend_options)
    if artifact.encoder_updated:
        if artifact.encoder is None or not hasattr(artifact.encoder, "save_encoder"):
            raise ArtifactError("encoder was updated but cannot be saved")
        artifact.encoder.save_encoder(path / ENCODER_DIR)
        backend_options["checkpoint"] = ENCODER_DIR

    manifest = {
        "format_version": ARTIFACT_FORMAT_VERSION,
        "encoder_reference": artifact.encoder_reference,
        "backend": artifact.backend,
        "backend_options": backend_options,
        "registry_version": artifact.registry_version,
        "label_ids": list(artifact.label_ids),
        "class_count": artifact.class_count,
        "dimension": artifact.dimension,
        "head_layout": "float32-le weights row-major (class_count x dimension), then bias (class_count)",
        "head_sha256": sha256_hex(head),
        "training_config": artifact.training_config.to_record(),
        "metrics": artifact.metrics,
        "encoder_updated": artifact.encoder_updated,
    }
    (path / MANIFEST).write_text(dumps_canonical(manifest, indent=2) + "\n", encoding="utf-8")
    logger.info(f"Saved classifier artifact to {path}", extra={"artifact": str(path)})


def _read_manifest(path: Path) -> dict:
    try:
        manifest = json.loads((path / MANIFEST).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ArtifactError(f"{path} has no {MANIFEST}", artifact=str(path))
    except json.JSONDecodeError as e:
        raise ArtifactError(f"{path / MANIFEST} is corrupt: {e.msg}", artifact=str(path))
    if manifest.get("format_version") != ARTIFACT_FORMAT_VERSION:
        raise ArtifactError(
            f"unsupported artifact format {manifest.get('format_version')!r}",
            artifact=str(path),
        )
    return manifest


def load_artifact(
    path: str | Path | None,
    registry: TechniqueRegistry | None = None,
    resolve_encoder: bool = True,
) -> ClassifierArtifact:
    """Reads an artifact directory. With `registry`, the artifact must have
    been trained against the same taxonomy version."""
    path = resolve_model_path(path)
    if not path.is_dir():
        raise InputNotFoundError(f"model directory {path} does not exist", path=str(path))
    manifest = _read_manifest(path)

    m, dim = manifest["class_count"], manifest["dimension"]
    try:
        head = (path / HEAD_WEIGHTS).read_bytes()
    except FileNotFoundError:
        raise ArtifactError(f"{path} has no {HEAD_WEIGHTS}", artifact=str(path))
    expected_size = HEAD_DTYPE.itemsize * (m * dim + m)
    if len(head) != expected_size:
        raise ArtifactError(
            f"{HEAD_WEIGHTS} has {len(head)} bytes, expected {expected_size}",
            artifact=str(path),
        )
    if sha256_hex(head) != manifest["head_sha256"]:
        raise ArtifactError(f"{HEAD_WEIGHTS} checksum mismatch", artifact=str(path))

    if registry is not None and registry.version != manifest["registry_version"]:
        raise ArtifactError(
            "classifier was trained against a different taxonomy",
            artifact_registry_version=manifest["registry_version"],
            active_registry_version=registry.version,
        )

    values = np.frombuffer(head, dtype=HEAD_DTYPE)
    backend_options = dict(manifest["backend_options"])
    if manifest["encoder_updated"]:
        backend_options["checkpoint"] = str(path / ENCODER_DIR)

    encoder = None
    if resolve_encoder:
        encoder = BackendRegistry.get(manifest["backend"], EMBEDDING, **backend_options)

    artifact = ClassifierArtifact(
        encoder_reference=manifest["encoder_reference"],
        backend=manifest["backend"],
        backend_options=backend_options,
        head_weights=values[: m * dim].reshape(m, dim).copy(),
        head_bias=values[m * dim :].copy(),
        registry_version=manifest["registry_version"],
        label_ids=tuple(manifest["label_ids"]),
        training_config=TrainingConfig.from_record(manifest["training_config"]),
        metrics=manifest["metrics"],
        encoder_updated=manifest["encoder_updated"],
        encoder=encoder,
    )
    if registry is not None:
        artifact.check_registry(registry)
    return artifact
