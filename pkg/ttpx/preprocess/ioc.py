import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import NamedTuple

import yaml

from ttpx.errors import ValidationError
from ttpx.utils import sha256_hex

# Characters given back when a match ends on them (sentence punctuation).
TRAILING_PUNCTUATION = ".,;:!?"
# Claimed spans are masked with this character so later rules cannot match
# into or across them. No rule pattern accepts it.
_MASK = "\x00"


@dataclass(frozen=True)
class IOCRule:
    base_name: str
    pattern: str
    priority: int
    extensions: frozenset[str] = frozenset()
    flags: tuple[str, ...] = ()
    regex: re.Pattern = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.base_name or not self.base_name[0].isalpha():
            raise ValidationError(f"IOC rule has an invalid base name: {self.base_name!r}")
        re_flags = 0
        for flag in self.flags:
            try:
                re_flags |= getattr(re, flag)
            except AttributeError:
                raise ValidationError(f"Unknown regex flag {flag!r} in rule {self.base_name!r}")
        try:
            compiled = re.compile(self.pattern, re_flags)
        except re.error as e:
            raise ValidationError(
                f"IOC rule {self.base_name!r} has an invalid pattern: {e}",
                base_name=self.base_name,
            )
        object.__setattr__(self, "extensions", frozenset(e.lower() for e in self.extensions))
        object.__setattr__(self, "flags", tuple(self.flags))
        object.__setattr__(self, "regex", compiled)

    def accepts(self, span_text: str) -> bool:
        if not self.extensions:
            return True
        return span_text.rsplit(".", 1)[-1].lower() in self.extensions


@dataclass(frozen=True)
class Replacement:
    base_name: str
    span: str
    sentence_index: int
    start: int
    end: int


@dataclass
class NormalizationReport:
    replacements: list[Replacement]
    input_hash: str
    output_hash: str

    @property
    def count(self) -> int:
        return len(self.replacements)

    def to_record(self) -> dict:
        return {
            "input_hash": self.input_hash,
            "output_hash": self.output_hash,
            "replacements": [
                {
                    "base_name": r.base_name,
                    "span": r.span,
                    "sentence_index": r.sentence_index,
                }
                for r in self.replacements
            ],
        }


class NormalizedSentence(NamedTuple):
    text: str
    report: NormalizationReport


def load_ioc_rules(path: str | Path | None = None) -> tuple[IOCRule, ...]:
    """Read a rule table. Without a path, the packaged table is used."""
    if path is None:
        raw = resources.files("ttpx.preprocess").joinpath("ioc_rules.yaml").read_text()
    else:
        raw = Path(path).read_text(encoding="utf-8")
    config = yaml.safe_load(raw) or {}
    rules = [
        IOCRule(
            base_name=entry["base_name"],
            pattern=entry["pattern"],
            priority=int(entry["priority"]),
            extensions=frozenset(entry.get("extensions", [])),
            flags=tuple(entry.get("flags", [])),
        )
        for entry in config.get("rules", [])
    ]
    if not rules:
        raise ValidationError("IOC rule table is empty")
    return tuple(sorted(rules, key=lambda r: r.priority))


@lru_cache(maxsize=1)
def default_rules() -> tuple[IOCRule, ...]:
    return load_ioc_rules()


def _trim(text: str, start: int, end: int) -> int:
    while end > start and text[end - 1] in TRAILING_PUNCTUATION:
        end -= 1
    return end


def find_ioc_spans(sentence: str, rules=None) -> list[tuple[int, int, IOCRule]]:
    """Spans claimed by each rule, applying rules in priority order over a
    working copy in which already-claimed spans are masked."""
    rules = default_rules() if rules is None else rules
    working = sentence
    claimed = []
    for rule in rules:
        for match in rule.regex.finditer(working):
            start, end = match.start(), _trim(working, match.start(), match.end())
            if end <= start or _MASK in working[start:end]:
                continue
            if not rule.accepts(working[start:end]):
                continue
            claimed.append((start, end, rule))
        for start, end, _ in claimed:
            working = working[:start] + _MASK * (end - start) + working[end:]
    return sorted(claimed, key=lambda span: span[0])


def normalize_iocs(sentence: str, sentence_index: int = 0, rules=None) -> NormalizedSentence:
    spans = find_ioc_spans(sentence, rules)
    pieces = []
    replacements = []
    cursor = 0
    for start, end, rule in spans:
        pieces.append(sentence[cursor:start])
        pieces.append(rule.base_name)
        replacements.append(
            Replacement(rule.base_name, sentence[start:end], sentence_index, start, end)
        )
        cursor = end
    pieces.append(sentence[cursor:])
    text = "".join(pieces)
    report = NormalizationReport(
        replacements=replacements,
        input_hash=sha256_hex(sentence),
        output_hash=sha256_hex(text),
    )
    return NormalizedSentence(text, report)


_DEFANG = [
    (re.compile(r"\bhxxp(s?)://", re.IGNORECASE), r"http\1://"),
    (re.compile(r"\[\.\]|\(\.\)|\{\.\}|\[dot\]", re.IGNORECASE), "."),
    (re.compile(r"\[@\]|\[at\]", re.IGNORECASE), "@"),
    (re.compile(r"\[:\]"), ":"),
]


def refang(text: str) -> str:
    """Optional pre-pass undoing common defanging (hxxp, [.], [@])."""
    for pattern, replacement in _DEFANG:
        text = pattern.sub(replacement, text)
    return text
