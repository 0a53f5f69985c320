"""`ttpx` command line.

Option values resolve in this order: explicit flag, the subcommand section
of the `--config` YAML file, its `base` section, then the built-in default.
`-p key=value` (or `-p section.key=value`) edits the loaded config before
resolution.

Exit codes: 0 ok, 1 unexpected error, 2 usage, 3 input not found,
4 validation, 5 backend, 6 artifact, 7 extraction, 8 STIX, 9 training.
Failures print one JSON error record to stderr.
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import yaml

from ttpx.errors import (
    InputNotFoundError,
    NotFoundError,
    StixError,
    TTPXError,
    UsageError,
    ValidationError,
)
from ttpx.logger import TTPXLogger
from ttpx.version import __version__

SUBCOMMANDS = ("taxonomy", "preprocess", "augment", "train", "extract", "eval", "stix")

DEFAULTS = {
    "taxonomy": "data/taxonomy/techniques.jsonl",
    "jobs": 1,
    "seed": 0,
    # augment
    "theta": 0.975,
    "top_k": 5,
    "mask_token": "<mask>",
    "best_only": False,
    "skip_stopwords": False,
    "max_outputs": None,
    "backend": "stub",
    "stub_dim": 768,
    "mlm_table": None,
    "sentence_model": None,
    "checkpoint": None,
    "remote_url": None,
    # train
    "lr": 1e-5,
    "batch_size": 64,
    "epochs": 10,
    "max_tokens": 256,
    "split_ratio": None,
    "update_encoder": True,
    "class_weighting": "none",
    "pooling": "cls",
    # extract
    "relevance_theta": 0.644,
    "format": "json",
    "attributions": False,
    "producer": "ttpx",
    "timestamp": None,
    # eval
    "level": "report",
    "macro_over": "observed",
    "average": "macro",
    "bins": False,
}


@dataclass
class PipelineConfig:
    taxonomy_path: Path | None = None
    model_path: Path | None = None
    backend: str = "stub"
    similarity_threshold: float = 0.975
    relevance_threshold: float = 0.644
    seed: int = 0
    jobs: int = 1
    inputs: tuple[Path, ...] = ()
    output: Path | None = None

    def __post_init__(self):
        for name in ("similarity_threshold", "relevance_threshold"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise UsageError(f"{name} must be in [0, 1], got {value}", **{name: value})
        if self.jobs < 1:
            raise UsageError(f"--jobs must be >= 1, got {self.jobs}")
        for path in (self.taxonomy_path, *self.inputs):
            if path is not None and not Path(path).exists():
                raise InputNotFoundError(f"input not found: {path}", path=str(path))


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        record = UsageError(message).to_record()
        self.print_usage(sys.stderr)
        sys.stderr.write(json.dumps(record, sort_keys=True) + "\n")
        sys.exit(UsageError.exit_code)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file with `base` and per-subcommand sections")
    common.add_argument(
        "-p",
        "--params",
        nargs="+",
        metavar="my.setting=value",
        default=[],
        help="override params of the config file, e.g. -p 'augment.theta=0.9'",
    )
    common.add_argument("--quiet", action="store_true", help="Human-readable warnings only.")
    common.add_argument("--log-dir", help="Also write a log file in this directory.")
    common.add_argument("--taxonomy", help="Taxonomy file (JSONL).")
    common.add_argument("--jobs", type=int, help="Worker threads for batch work.")
    common.add_argument("--seed", type=int)

    parser = _ArgumentParser(prog="ttpx", description="ATT&CK technique extraction from threat reports.")
    parser.add_argument("--version", action="version", version=f"ttpx {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_ArgumentParser)

    p = sub.add_parser("taxonomy", parents=[common], help="Build or inspect the technique registry.")
    p.add_argument("--feed", help="ATT&CK enterprise STIX bundle to convert.")
    p.add_argument("--out", help="Where to write the converted taxonomy.")

    p = sub.add_parser("preprocess", parents=[common], help="Strip citations and normalize IOCs.")
    p.add_argument(
        "--in", dest="input", help="Sentence dataset (.jsonl / .csv) or report text (.txt); stdin when omitted."
    )
    p.add_argument("--out", help="Output JSONL file (default: stdout for report text).")
    p.add_argument("--audit", help="Write the per-sentence normalization reports here.")
    p.add_argument("--rules", help="Alternative IOC rule table (YAML).")
    p.add_argument("--defang", action="store_true", default=None, help="Re-fang hxxp, [.] etc. first.")

    p = sub.add_parser("augment", parents=[common], help="Masked-LM augmentation of a dataset.")
    p.add_argument("--in", dest="input")
    p.add_argument("--out")
    p.add_argument("--theta", type=float, help="Similarity threshold (default 0.975).")
    p.add_argument("--top-k", type=int)
    p.add_argument("--mask-token")
    p.add_argument("--best-only", action="store_true", default=None)
    p.add_argument("--skip-stopwords", action="store_true", default=None)
    p.add_argument("--max-outputs", type=int, help="Cap on augmented sentences per source.")
    p.add_argument("--backend", choices=["stub", "pretrained", "remote"])
    p.add_argument("--stub-dim", type=int)
    p.add_argument("--mlm-table", help="JSON table of fixed masked predictions for the stub MLM.")
    p.add_argument("--checkpoint", help="Masked-LM checkpoint (pretrained backend).")
    p.add_argument("--sentence-model", help="Sentence-embedding model (pretrained backend).")
    p.add_argument("--remote-url")
    p.add_argument("--checkpoint-dir", help="Directory for the resumable progress file.")

    p = sub.add_parser("train", parents=[common], help="Fine-tune the classification head.")
    p.add_argument("--data")
    p.add_argument("--out", help="Model directory (default: $TTPX_MODEL_DIR).")
    p.add_argument("--backend", choices=["stub", "pretrained", "remote"])
    p.add_argument("--stub-dim", type=int)
    p.add_argument("--checkpoint", help="Encoder checkpoint (pretrained backend).")
    p.add_argument("--remote-url")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--max-tokens", type=int)
    p.add_argument("--split-ratio", type=float, help="Hold out 1 - ratio of each class for evaluation.")
    p.add_argument("--no-encoder-update", dest="update_encoder", action="store_false", default=None)
    p.add_argument("--class-weighting", choices=["none", "balanced"])
    p.add_argument("--pooling", choices=["cls", "mean"])

    p = sub.add_parser("extract", parents=[common], help="Extract techniques from reports.")
    p.add_argument("--report", help="Report file (.txt / .json / .jsonl) or directory.")
    p.add_argument("--model", help="Model directory (default: $TTPX_MODEL_DIR).")
    p.add_argument("--theta", dest="relevance_theta", type=float, help="Relevance threshold (default 0.644).")
    p.add_argument("--format", choices=["json", "stix"])
    p.add_argument("--attributions", action="store_true", default=None)
    p.add_argument("--producer")
    p.add_argument(
        "--timestamp",
        help="Fixed STIX created/modified time, ISO-8601 or epoch seconds (default: $SOURCE_DATE_EPOCH, else now).",
    )
    p.add_argument("--out", help="Output file (default: stdout).")

    p = sub.add_parser("eval", parents=[common], help="Score predictions against ground truth.")
    p.add_argument("--truth")
    p.add_argument("--pred")
    p.add_argument("--level", choices=["sentence", "report"])
    p.add_argument("--macro-over", choices=["observed", "all"])
    p.add_argument("--average", choices=["macro", "micro"])
    p.add_argument("--bins", action="store_true", default=None)
    p.add_argument("--csv", help="Per-class metrics CSV.")
    p.add_argument("--out", help="Metrics JSON (default: stdout).")

    p = sub.add_parser("stix", parents=[common], help="Convert saved results to STIX 2.1 or validate a bundle.")
    p.add_argument("--in", dest="input", help="Saved extraction result (JSON).")
    p.add_argument("--validate", help="Validate a STIX bundle file instead.")
    p.add_argument("--producer")
    p.add_argument(
        "--timestamp",
        help="Fixed STIX created/modified time, ISO-8601 or epoch seconds (default: $SOURCE_DATE_EPOCH, else now).",
    )
    p.add_argument("--attributions", action="store_true", default=None)
    p.add_argument("--out")
    return parser


def _apply_params(config: dict, params: list[str], command: str) -> None:
    for param in params:
        if "=" not in param:
            raise UsageError(f"malformed -p override {param!r}, expected key=value")
        fqn_key, value = param.split("=", 1)
        keys = fqn_key.split(".")
        if len(keys) == 1:
            keys = [command, *keys]
        entry_to_change = config
        for k in keys[:-1]:
            entry_to_change = entry_to_change.setdefault(k, {})
        entry_to_change[keys[-1]] = yaml.safe_load(value)


def load_config(args: argparse.Namespace) -> dict:
    config = {}
    if args.config:
        if not Path(args.config).is_file():
            raise InputNotFoundError(f"config file not found: {args.config}", path=args.config)
        with open(args.config) as reader:
            config = yaml.safe_load(reader) or {}
    _apply_params(config, args.params, args.command)
    merged = dict(config.get("base") or {})
    merged.update(config.get(args.command) or {})
    return merged


def resolve(args: argparse.Namespace) -> argparse.Namespace:
    merged = load_config(args)
    for key, value in vars(args).items():
        if value is None:
            value = merged.get(key, DEFAULTS.get(key))
            # YAML reads "1e-5" as a string.
            if isinstance(DEFAULTS.get(key), float) and isinstance(value, (str, int)):
                try:
                    value = float(value)
                except ValueError:
                    raise UsageError(f"{key} must be a number, got {value!r}")
            setattr(args, key, value)
    for key, value in merged.items():
        if not hasattr(args, key):
            setattr(args, key, value)
    return args


def _require(args, *names):
    missing = [f"--{n.replace('_', '-')}" for n in names if getattr(args, n, None) in (None, "")]
    if missing:
        raise UsageError(f"{args.command}: missing required option(s) {', '.join(missing)}")


def _write_output(text: str, out: str | None) -> None:
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text if text.endswith("\n") else text + "\n", encoding="utf-8")
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
        sys.stdout.flush()


def _load_registry(args):
    from ttpx.taxonomy import load_taxonomy

    return load_taxonomy(args.taxonomy)


def _load_sentences(path, registry, logger):
    from ttpx.datasets import load_base_csv, load_sentence_dataset

    if Path(path).suffix == ".csv":
        return load_base_csv(path, registry)
    return load_sentence_dataset(path, registry, logger)


def cmd_taxonomy(args, logger) -> int:
    from ttpx.taxonomy import ingest_attack_feed, load_taxonomy

    if args.feed:
        _require(args, "out")
        PipelineConfig(inputs=(Path(args.feed),))
        registry = ingest_attack_feed(args.feed, args.out, logger)
    else:
        PipelineConfig(taxonomy_path=Path(args.taxonomy))
        registry = load_taxonomy(args.taxonomy)
    summary = {
        "registry_version": registry.version,
        "class_count": registry.class_count,
        "tactics": sorted({tactic for t in registry for tactic in t.tactics}),
    }
    _write_output(json.dumps(summary, sort_keys=True), None)
    return 0


def cmd_preprocess(args, logger) -> int:
    from ttpx.datasets import LabeledSentence, SentenceDataset, save_sentence_dataset
    from ttpx.preprocess import load_ioc_rules, preprocess_sentence, segment_report
    from ttpx.utils import dumps_canonical, write_jsonl

    rules = load_ioc_rules(args.rules) if args.rules else None
    source = Path(args.input) if args.input not in (None, "-") else None
    audit = []

    if source is None or source.suffix == ".txt":
        if source is None:
            text = sys.stdin.read()
        else:
            PipelineConfig(inputs=(source,))
            text = source.read_text(encoding="utf-8")
        records = []
        for index, sentence in enumerate(segment_report(text)):
            normalized = preprocess_sentence(sentence, index, rules, defang=bool(args.defang))
            if normalized.text:
                records.append({"sentence_index": index, "text": normalized.text})
                audit.append({"sentence_index": index, **normalized.report.to_record()})
        if args.out:
            write_jsonl(args.out, records)
        else:
            _write_output("".join(dumps_canonical(r) + "\n" for r in records), None)
        if args.audit:
            write_jsonl(args.audit, audit)
        logger.info(f"Wrote {len(records)} normalized sentences")
        return 0

    _require(args, "out")
    PipelineConfig(taxonomy_path=Path(args.taxonomy), inputs=(source,))
    registry = _load_registry(args)
    dataset = _load_sentences(source, registry, logger)
    entries, replaced, dropped = [], 0, 0
    for index, entry in enumerate(dataset.entries):
        normalized = preprocess_sentence(entry.text, index, rules, defang=bool(args.defang))
        if not normalized.text:
            dropped += 1
            continue
        replaced += normalized.report.count
        audit.append({"sentence_index": index, **normalized.report.to_record()})
        entries.append(LabeledSentence(normalized.text, entry.label, entry.origin, entry.source_text))
    save_sentence_dataset(SentenceDataset(tuple(entries), registry.version), args.out)
    if args.audit:
        write_jsonl(args.audit, audit)
    logger.info(
        f"Preprocessed {len(entries)} sentences ({replaced} IOCs normalized, {dropped} empty dropped)",
        extra={"sentences": len(entries), "iocs": replaced, "dropped": dropped},
    )
    return 0


def _augmentation_backends(args, dataset):
    from ttpx.modeling import EMBEDDING, MLM, BackendRegistry
    from ttpx.modeling.stub import stub_words

    if args.backend == "stub":
        table = None
        if args.mlm_table:
            table = json.loads(Path(args.mlm_table).read_text(encoding="utf-8"))
        vocabulary = sorted({w for text in dataset.texts for w in stub_words(text)})
        mlm = BackendRegistry.get("stub", MLM, table=table, vocabulary=vocabulary, mask_token=args.mask_token)
        embedder = BackendRegistry.get("stub", EMBEDDING, dimension=args.stub_dim)
    elif args.backend == "pretrained":
        mlm = BackendRegistry.get("pretrained", MLM, checkpoint=args.checkpoint, mask_token=args.mask_token)
        embedder = BackendRegistry.get("sentence-transformer", EMBEDDING, model_name=args.sentence_model)
    else:
        mlm = BackendRegistry.get("remote", MLM, base_url=args.remote_url, mask_token=args.mask_token)
        embedder = BackendRegistry.get("remote", EMBEDDING, base_url=args.remote_url)
    return mlm, embedder


def cmd_augment(args, logger) -> int:
    from ttpx.augment import AugmentationConfig, augment_dataset, augmentation_summary, write_summary
    from ttpx.datasets import dataset_statistics, log_reference_magnitudes, save_sentence_dataset

    config = AugmentationConfig(
        top_k=args.top_k,
        similarity_threshold=args.theta,
        mask_token=args.mask_token,
        max_outputs_per_sentence=args.max_outputs,
        best_only=bool(args.best_only),
        skip_stopwords=bool(args.skip_stopwords),
    )
    _require(args, "input", "out")
    PipelineConfig(
        taxonomy_path=Path(args.taxonomy),
        backend=args.backend,
        similarity_threshold=args.theta,
        seed=args.seed,
        jobs=args.jobs,
        inputs=(Path(args.input),),
        output=Path(args.out),
    )
    registry = _load_registry(args)
    dataset = _load_sentences(args.input, registry, logger)
    mlm, embedder = _augmentation_backends(args, dataset)
    augmented = augment_dataset(
        dataset, config, mlm, embedder, jobs=args.jobs, checkpoint_dir=args.checkpoint_dir, logger=logger
    )
    save_sentence_dataset(augmented, args.out)
    summary = augmentation_summary(dataset, augmented, config)
    summary_path = Path(args.out).with_suffix(".summary.json")
    write_summary(summary, summary_path)
    log_reference_magnitudes(dataset_statistics(augmented), logger)
    logger.info(f"Augmented dataset written to {args.out}, summary to {summary_path}")
    return 0


def _training_encoder(args):
    from ttpx.modeling import EMBEDDING, BackendRegistry

    if args.backend == "stub":
        return BackendRegistry.get("stub", EMBEDDING, dimension=args.stub_dim, max_tokens=args.max_tokens)
    if args.backend == "pretrained":
        return BackendRegistry.get(
            "pretrained", EMBEDDING, checkpoint=args.checkpoint, pooling=args.pooling, max_tokens=args.max_tokens
        )
    return BackendRegistry.get("remote", EMBEDDING, base_url=args.remote_url, max_tokens=args.max_tokens)


def cmd_train(args, logger) -> int:
    from ttpx.datasets import dataset_statistics, log_reference_magnitudes, split_dataset
    from ttpx.evaluation import multiclass_sentence_metrics
    from ttpx.extract import ArtifactClassifier
    from ttpx.modeling import TrainingConfig, fine_tune, resolve_model_path, save_artifact

    config = TrainingConfig(
        learning_rate=args.lr,
        batch_size=args.batch_size,
        epochs=args.epochs,
        max_tokens=args.max_tokens,
        seed=args.seed,
        update_encoder=bool(args.update_encoder),
        class_weighting=args.class_weighting,
        pooling=args.pooling,
    )
    _require(args, "data")
    out = resolve_model_path(args.out)
    PipelineConfig(
        taxonomy_path=Path(args.taxonomy),
        model_path=out,
        backend=args.backend,
        seed=args.seed,
        inputs=(Path(args.data),),
    )
    registry = _load_registry(args)
    dataset = _load_sentences(args.data, registry, logger)
    log_reference_magnitudes(dataset_statistics(dataset), logger)

    train, held_out = dataset, None
    if args.split_ratio is not None:
        split = split_dataset(dataset, ratio=args.split_ratio, seed=args.seed)
        train, held_out = split.train, split.test

    encoder = _training_encoder(args)
    artifact = fine_tune(train, config, encoder, registry, validation=held_out, logger=logger)
    if held_out is not None:
        classifier = ArtifactClassifier(artifact)
        predicted = [classifier.predict(text)[0] for text in held_out.texts]
        report = multiclass_sentence_metrics(held_out.labels, predicted, registry)
        artifact.metrics.append(
            {
                "held_out_macro_precision": report.macro_precision,
                "held_out_macro_recall": report.macro_recall,
                "held_out_macro_f1": report.macro_f1,
                "held_out_size": len(held_out),
            }
        )
        logger.info(f"Held-out macro F1 {report.macro_f1:.4f}", extra={"macro_f1": report.macro_f1})
    save_artifact(artifact, out, logger)
    return 0


def _stix_clock(args):
    from ttpx.stix_export import fixed_clock, utc_now

    timestamp = args.timestamp or os.environ.get("SOURCE_DATE_EPOCH")
    return fixed_clock(timestamp) if timestamp else utc_now


def _stix_documents(results, registry, args) -> list[str]:
    from ttpx.stix_export import serialize_bundle, to_stix_bundle

    clock = _stix_clock(args)
    return [
        serialize_bundle(
            to_stix_bundle(r, registry, args.producer, clock=clock, include_attributions=bool(args.attributions))
        )
        for r in results
    ]


def _result_documents(results, registry, args) -> list[str]:
    if args.format == "stix":
        return _stix_documents(results, registry, args)
    return [r.to_json() for r in results]


def _join_documents(documents: list[str]) -> str:
    if len(documents) == 1:
        return documents[0]
    return "[\n" + ",\n".join(documents) + "\n]"


def cmd_extract(args, logger) -> int:
    from ttpx.errors import ExtractionError
    from ttpx.extract import ArtifactClassifier, ExtractionConfig, batch_extract, load_reports
    from ttpx.modeling import load_artifact, resolve_model_path

    config = ExtractionConfig(
        relevance_threshold=args.relevance_theta, include_attributions=bool(args.attributions)
    )
    _require(args, "report")
    model = resolve_model_path(args.model)
    PipelineConfig(
        taxonomy_path=Path(args.taxonomy),
        model_path=model,
        relevance_threshold=args.relevance_theta,
        jobs=args.jobs,
        inputs=(Path(args.report), model),
    )
    registry = _load_registry(args)
    artifact = load_artifact(model, registry)
    reports = load_reports(args.report, registry, logger)
    batch = batch_extract(reports, ArtifactClassifier(artifact, registry), config, jobs=args.jobs, logger=logger)
    if batch.results:
        _write_output(_join_documents(_result_documents(batch.results, registry, args)), args.out)
    if batch.failures:
        raise ExtractionError(
            f"{len(batch.failures)} of {len(reports)} reports failed", **batch.summary()
        )
    return 0


def _read_extraction_results(path: Path):
    from ttpx.extract import ExtractionResult
    from ttpx.utils import iter_jsonl

    if path.suffix == ".jsonl":
        try:
            return [ExtractionResult.from_record(r) for _, r in iter_jsonl(path)]
        except ValueError as e:
            raise ValidationError(str(e))
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ValidationError(f"{path}: invalid JSON ({e.msg})")
    records = payload if isinstance(payload, list) else [payload]
    return [ExtractionResult.from_record(r) for r in records]


def cmd_eval(args, logger) -> int:
    from ttpx.datasets import load_report_dataset
    from ttpx.evaluation import (
        classwise_bins,
        label_vectors,
        multiclass_sentence_metrics,
        multilabel_macro_metrics,
        write_per_class_csv,
    )

    _require(args, "truth", "pred")
    PipelineConfig(taxonomy_path=Path(args.taxonomy), inputs=(Path(args.truth), Path(args.pred)))
    registry = _load_registry(args)
    micro = args.average == "micro"

    if args.level == "sentence":
        truth = _load_sentences(args.truth, registry, logger)
        predicted = _load_sentences(args.pred, registry, logger)
        if truth.texts != predicted.texts:
            raise ValidationError("truth and prediction files must list the same sentences in the same order")
        report = multiclass_sentence_metrics(truth.labels, predicted.labels, registry, args.macro_over, micro)
    else:
        truth_reports = load_report_dataset(args.truth, registry, logger)
        predictions = {r.report_id: r.techniques for r in _read_extraction_results(Path(args.pred))}
        missing = [r.report_id for r in truth_reports if r.report_id not in predictions]
        if missing:
            raise ValidationError(f"no prediction for {len(missing)} reports", reports=missing[:20])
        truth_vectors = label_vectors([r.true_labels for r in truth_reports], registry)
        predicted_vectors = label_vectors([predictions[r.report_id] for r in truth_reports], registry)
        report = multilabel_macro_metrics(truth_vectors, predicted_vectors, registry, args.macro_over, micro)

    document = report.to_record()
    if args.bins:
        document["bins"] = {
            metric: classwise_bins(
                {tid: getattr(m, metric) for tid, m in report.per_class.items()}
            ).to_record()
            for metric in ("precision", "recall", "f1")
        }
    if args.csv:
        write_per_class_csv(report, args.csv)
    _write_output(json.dumps(document, indent=2, sort_keys=True), args.out)
    logger.info(
        f"macro P={report.macro_precision:.4f} R={report.macro_recall:.4f} F1={report.macro_f1:.4f}",
        extra={"evaluated_class_count": report.evaluated_class_count},
    )
    return 0


def cmd_stix(args, logger) -> int:
    from ttpx.stix_export import validate_bundle

    if args.validate:
        PipelineConfig(inputs=(Path(args.validate),))
        violations = validate_bundle(Path(args.validate).read_text(encoding="utf-8"))
        _write_output(json.dumps({"violations": violations}, indent=2), args.out)
        if violations:
            raise StixError(f"{len(violations)} STIX violations", violations=violations)
        return 0

    _require(args, "input")
    PipelineConfig(taxonomy_path=Path(args.taxonomy), inputs=(Path(args.input),))
    registry = _load_registry(args)
    results = _read_extraction_results(Path(args.input))
    _write_output(_join_documents(_stix_documents(results, registry, args)), args.out)
    return 0


COMMANDS = {
    "taxonomy": cmd_taxonomy,
    "preprocess": cmd_preprocess,
    "augment": cmd_augment,
    "train": cmd_train,
    "extract": cmd_extract,
    "eval": cmd_eval,
    "stix": cmd_stix,
}


def _emit_error(record: dict) -> None:
    sys.stderr.write(json.dumps(record, sort_keys=True, default=str) + "\n")
    sys.stderr.flush()


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logger = TTPXLogger(
        "ttpx",
        log_dir=args.log_dir,
        level=logging.WARNING if args.quiet else logging.INFO,
        mode="w",
        structured=not args.quiet,
    )
    try:
        resolve(args)
        return COMMANDS[args.command](args, logger)
    except TTPXError as e:
        logger.debug(f"{args.command} failed", exc_info=True)
        _emit_error(e.to_record())
        return e.exit_code
    except NotFoundError as e:
        _emit_error(ValidationError(str(e), key=e.key).to_record())
        return ValidationError.exit_code
    except KeyboardInterrupt:
        _emit_error({"error": "KeyboardInterrupt", "message": "interrupted", "exit_code": 130, "context": {}})
        return 130
    except Exception as e:
        logger.debug(f"{args.command} raised an unexpected error", exc_info=True)
        _emit_error({"error": e.__class__.__name__, "message": str(e), "exit_code": 1, "context": {}})
        return 1
    finally:
        for handler in list(logger.handlers):
            handler.close()
            logger.removeHandler(handler)


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
