"""Fine-tuning harness for the linear classification head.

The head starts at zero and is trained with Adam on softmax cross-entropy
over shuffled mini-batches. When the encoder supports gradients and
`update_encoder` is set, the encoder is updated jointly; otherwise its
features are computed once and only the head is trained.
"""

from collections import Counter
from dataclasses import asdict, dataclass

import numpy as np
import torch
from sklearn.utils.class_weight import compute_class_weight

from ttpx.datasets import SentenceDataset
from ttpx.errors import TrainingError, UsageError, ValidationError
from ttpx.logger import TTPXLogger
from ttpx.modeling.backends import EmbeddingBackend
from ttpx.modeling.classifier import ClassifierArtifact, softmax
from ttpx.taxonomy import TechniqueRegistry

CLASS_WEIGHTING = ("none", "balanced")
POOLING = ("cls", "mean")


@dataclass
class TrainingConfig:
    learning_rate: float = 1e-5
    batch_size: int = 64
    epochs: int = 10
    max_tokens: int = 256
    seed: int = 0
    update_encoder: bool = True
    class_weighting: str = "none"
    pooling: str = "cls"
    optimizer: str = "adam"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise UsageError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise UsageError(f"batch_size must be positive, got {self.batch_size}")
        if self.epochs < 0:
            raise UsageError(f"epochs must be non-negative, got {self.epochs}")
        if self.max_tokens < 1:
            raise UsageError(f"max_tokens must be positive, got {self.max_tokens}")
        if self.class_weighting not in CLASS_WEIGHTING:
            raise UsageError(f"class_weighting must be one of {CLASS_WEIGHTING}")
        if self.pooling not in POOLING:
            raise UsageError(f"pooling must be one of {POOLING}")
        if self.optimizer != "adam":
            raise UsageError(f"unsupported optimizer {self.optimizer!r}")

    def to_record(self) -> dict:
        return asdict(self)

    @classmethod
    def from_record(cls, record: dict) -> "TrainingConfig":
        known = cls.__dataclass_fields__.keys()
        return cls(**{k: v for k, v in record.items() if k in known})


def head_loss(weights, bias, features, targets) -> float:
    """Mean softmax cross-entropy of a linear head, in float64."""
    probabilities = softmax(np.asarray(features) @ np.asarray(weights).T + np.asarray(bias))
    picked = probabilities[np.arange(len(targets)), targets]
    return float(-np.mean(np.log(picked)))


def head_loss_and_grad(weights, bias, features, targets):
    """Returns (loss, d_loss/d_weights, d_loss/d_bias) for `head_loss`."""
    features = np.asarray(features, dtype=np.float64)
    targets = np.asarray(targets)
    n, m = len(targets), np.asarray(weights).shape[0]
    probabilities = softmax(features @ np.asarray(weights, dtype=np.float64).T + bias)
    one_hot = np.zeros((n, m))
    one_hot[np.arange(n), targets] = 1.0
    residual = (probabilities - one_hot) / n
    loss = float(-np.mean(np.log(probabilities[np.arange(n), targets])))
    return loss, residual.T @ features, residual.sum(axis=0)


def _class_weights(targets: np.ndarray, m: int, scheme: str):
    if scheme == "none":
        return None
    present = np.unique(targets)
    weights = np.ones(m)
    weights[present] = compute_class_weight("balanced", classes=present, y=targets)
    return torch.tensor(weights, dtype=torch.float32)


def _accuracy(logits: torch.Tensor, targets: torch.Tensor) -> float:
    return float((logits.argmax(dim=1) == targets).float().mean().item())


def fine_tune(
    train: SentenceDataset,
    config: TrainingConfig,
    encoder: EmbeddingBackend,
    registry: TechniqueRegistry,
    validation: SentenceDataset | None = None,
    logger: TTPXLogger | None = None,
) -> ClassifierArtifact:
    logger = logger or TTPXLogger("ttpx")

    unknown = sorted({label for label in train.labels if label not in registry})
    if unknown:
        raise ValidationError(
            f"training labels not in taxonomy: {', '.join(unknown)}", labels=unknown
        )
    counts = Counter(train.labels)
    untrained = [tid for tid in registry.ids if tid not in counts]
    if untrained:
        logger.warning(
            f"{len(untrained)} classes have no training examples and stay untrained",
            extra={"classes": untrained[:20]},
        )

    torch.manual_seed(config.seed)
    generator = torch.Generator().manual_seed(config.seed)
    m = registry.class_count
    dim = encoder.dimension
    targets = torch.tensor([registry.position(label) for label in train.labels])

    update_encoder = bool(config.update_encoder and encoder.supports_gradients and config.epochs > 0)
    device = getattr(encoder, "device", "cpu") if update_encoder else "cpu"

    head = torch.nn.Linear(dim, m)
    torch.nn.init.zeros_(head.weight)
    torch.nn.init.zeros_(head.bias)
    head.to(device)

    parameters = list(head.parameters())
    features = None
    if update_encoder:
        module = encoder.trainable_module()
        module.train()
        parameters += list(module.parameters())
    elif config.epochs > 0:
        logger.info(f"Embedding {len(train)} training sentences")
        features = torch.tensor(encoder.embed_batch(train.texts), dtype=torch.float32)

    val_features, val_targets = None, None
    if validation is not None and config.epochs > 0:
        val_targets = torch.tensor([registry.position(label) for label in validation.labels])
        if not update_encoder:
            val_features = torch.tensor(encoder.embed_batch(validation.texts), dtype=torch.float32)

    weights = _class_weights(targets.numpy(), m, config.class_weighting)
    loss_fn = torch.nn.CrossEntropyLoss(weight=None if weights is None else weights.to(device))
    optimizer = torch.optim.Adam(parameters, lr=config.learning_rate)
    texts = train.texts

    def forward(indices: torch.Tensor) -> torch.Tensor:
        if update_encoder:
            batch_features = encoder.features([texts[i] for i in indices.tolist()]).float()
        else:
            batch_features = features[indices]
        return head(batch_features.to(device))

    def evaluate(eval_targets, eval_features=None, eval_texts=None) -> float:
        head.eval()
        with torch.no_grad():
            if eval_features is None:
                eval_features = torch.tensor(encoder.embed_batch(eval_texts), dtype=torch.float32)
            logits = head(eval_features.to(device))
        head.train()
        return _accuracy(logits.cpu(), eval_targets)

    history = []
    for epoch in range(1, config.epochs + 1):
        order = torch.randperm(len(train), generator=generator)
        epoch_loss, seen = 0.0, 0
        for start in logger.tqdm(range(0, len(order), config.batch_size), desc=f"  [epoch {epoch:>3}]"):
            batch = order[start : start + config.batch_size]
            logits = forward(batch)
            loss = loss_fn(logits, targets[batch].to(device))
            if not torch.isfinite(loss):
                raise TrainingError(
                    "non-finite training loss",
                    epoch=epoch,
                    batch_start=start,
                    loss=str(loss.item()),
                    learning_rate=config.learning_rate,
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_loss += loss.item() * len(batch)
            seen += len(batch)

        if update_encoder:
            encoder.trainable_module().eval()
            accuracy = evaluate(targets, eval_texts=texts)
            val_accuracy = evaluate(val_targets, eval_texts=validation.texts) if val_targets is not None else None
            encoder.trainable_module().train()
        else:
            accuracy = evaluate(targets, eval_features=features)
            val_accuracy = evaluate(val_targets, eval_features=val_features) if val_targets is not None else None

        record = {"epoch": epoch, "loss": epoch_loss / seen, "accuracy": accuracy}
        if val_accuracy is not None:
            record["val_accuracy"] = val_accuracy
        history.append(record)
        logger.info(f"epoch {epoch}/{config.epochs} loss={record['loss']:.4f} acc={accuracy:.4f}", extra=record)

    if update_encoder:
        encoder.trainable_module().eval()

    logger.info(
        "Training finished",
        extra={"encoder_updated": update_encoder, "epochs": config.epochs, "classes": m},
    )
    return ClassifierArtifact(
        encoder_reference=encoder.reference,
        backend=encoder.registered_name,
        backend_options=encoder.options(),
        head_weights=head.weight.detach().cpu().numpy().astype(np.float32),
        head_bias=head.bias.detach().cpu().numpy().astype(np.float32),
        registry_version=registry.version,
        label_ids=tuple(registry.ids),
        training_config=config,
        metrics=history,
        encoder_updated=update_encoder,
        encoder=encoder,
    )
