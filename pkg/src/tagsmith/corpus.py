"""Corpus ingestion: entities whose multimodal content is already reduced to text clues."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

logger = logging.getLogger(__name__)

CLUE_NAME_RE = re.compile(r"[a-z][a-z0-9_]*\Z")
STANDARD_CLUES = ("title", "category", "ocr", "asr", "caption", "description")
DEFAULT_BUDGET = 6000

# every C0/C1 control char except newline
_CONTROL_RE = re.compile(r"[\x00-\x09\x0b-\x1f\x7f-\x9f]")


class CorpusError(ValueError):
    """Raised for malformed corpus files or invalid entities."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DuplicateIdError(CorpusError):
    pass


def check_clue_name(name: str) -> str:
    if not isinstance(name, str) or not CLUE_NAME_RE.match(name):
        raise CorpusError(f"invalid clue field name {name!r}; expected [a-z][a-z0-9_]*")
    return name


def clean_clue_value(value: Any) -> str:
    """Coerce a raw record value to clue text with no control characters but newline."""
    if value is None:
        return ""
    if isinstance(value, (list, tuple)):
        value = ", ".join(clean_clue_value(v) for v in value if v is not None)
    elif not isinstance(value, str):
        value = str(value)
    value = value.replace("\r\n", "\n").replace("\r", "\n")
    return _CONTROL_RE.sub(" ", value)


@dataclass(frozen=True)
class Entity:
    """One item: an id, its clue fields in declared order, and optional human tags.

    ``flags`` carries processing notes such as ``"budget_exhausted"``.
    """

    id: str
    clues: Mapping[str, str]
    ground_truth_tags: tuple[str, ...] | None = None
    flags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not isinstance(self.id, str) or not self.id:
            raise CorpusError("entity id must be a non-empty string")
        clues = {check_clue_name(k): clean_clue_value(v) for k, v in self.clues.items()}
        object.__setattr__(self, "clues", clues)
        if self.ground_truth_tags is not None:
            object.__setattr__(self, "ground_truth_tags", tuple(self.ground_truth_tags))

    @property
    def has_content(self) -> bool:
        return any(v for v in self.clues.values())

    def clue(self, name: str) -> str:
        return self.clues.get(name, "")


@dataclass(frozen=True)
class SchemaMap:
    """How source record keys map onto entity fields.

    ``fields`` maps source key -> clue name; ``id_field`` names the record key
    used as entity id; ``hashtag_field`` (optional) is split on '#' into
    ground-truth tags.
    """

    fields: Mapping[str, str]
    id_field: str
    hashtag_field: str | None = None

    def __post_init__(self) -> None:
        if not self.id_field:
            raise CorpusError("schema: id_field must be declared")
        targets = [check_clue_name(t) for t in self.fields.values()]
        dupes = sorted({t for t in targets if targets.count(t) > 1})
        if dupes:
            raise CorpusError(f"schema: clue names mapped more than once: {dupes}")
        object.__setattr__(self, "fields", dict(self.fields))

    @classmethod
    def from_pairs(cls, pairs: Iterable[str], id_field: str, hashtag_field: str | None = None) -> "SchemaMap":
        """Build from ``clue=source`` strings, as given on the command line."""
        fields: dict[str, str] = {}
        for pair in pairs:
            clue, sep, source = pair.partition("=")
            if not sep or not clue or not source:
                raise CorpusError(f"schema: expected clue=source, got {pair!r}")
            fields[source.strip()] = clue.strip()
        return cls(fields=fields, id_field=id_field, hashtag_field=hashtag_field)

    @property
    def clue_names(self) -> list[str]:
        return list(self.fields.values())


def split_hashtags(text: str) -> list[str]:
    """Tags are the '#'-prefixed segments; text before the first '#' is not a tag."""
    if not text:
        return []
    segments = text.split("#")[1:]
    return [s.strip() for s in segments if s.strip()]


def record_to_entity(record: Mapping[str, Any], schema: SchemaMap) -> Entity:
    if not isinstance(record, Mapping):
        raise CorpusError("record is not a JSON object")
    if schema.id_field not in record or record[schema.id_field] in (None, ""):
        raise CorpusError(f"missing id field {schema.id_field!r}")
    ident = str(record[schema.id_field])
    clues = {clue: clean_clue_value(record.get(src)) for src, clue in schema.fields.items()}
    tags = None
    if schema.hashtag_field is not None:
        tags = tuple(split_hashtags(clean_clue_value(record.get(schema.hashtag_field))))
    entity = Entity(id=ident, clues=clues, ground_truth_tags=tags)
    if not entity.has_content:
        raise CorpusError(f"entity {ident!r} has no non-empty clue field")
    return entity


def load_corpus(path: str | Path, schema: SchemaMap, strict: bool = True) -> list[Entity]:
    """Read a JSON-lines corpus into entities, preserving file order.

    In lenient mode malformed lines are skipped with a warning; duplicate ids
    and a missing id field always abort.
    """
    entities: list[Entity] = []
    seen: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                if strict:
                    raise CorpusError(f"malformed JSON ({exc.msg})", line=lineno) from exc
                logger.warning("skipping malformed line %d: %s", lineno, exc.msg)
                continue
            if isinstance(record, Mapping) and record.get(schema.id_field) in (None, ""):
                raise CorpusError(f"missing id field {schema.id_field!r}", line=lineno)
            try:
                entity = record_to_entity(record, schema)
            except CorpusError as exc:
                if strict:
                    raise CorpusError(str(exc), line=lineno) from exc
                logger.warning("skipping line %d: %s", lineno, exc)
                continue
            if entity.id in seen:
                raise DuplicateIdError(
                    f"duplicate id {entity.id!r} (first seen on line {seen[entity.id]})", line=lineno
                )
            seen[entity.id] = lineno
            entities.append(entity)
    return entities


def _priority_order(names: Iterable[str], priority: Sequence[str]) -> list[str]:
    rank = {name: i for i, name in enumerate(priority)}
    listed = [n for n in priority if n in names]
    unlisted = sorted(n for n in names if n not in rank)
    return listed + unlisted


def truncate_clues(entity: Entity, budget: int = DEFAULT_BUDGET, priority: Sequence[str] = STANDARD_CLUES) -> Entity:
    """Fit clue text into ``budget`` characters.

    Fields are kept whole in priority order; the first field that would
    overflow is tail-cut, and every later field is emptied. Returns a new
    entity; the input is left untouched.
    """
    if budget <= 0:
        raise ValueError("budget must be positive")
    total = sum(len(v) for v in entity.clues.values())
    if total <= budget:
        return entity

    remaining = budget
    kept: dict[str, str] = {}
    for name in _priority_order(entity.clues, priority):
        kept[name] = entity.clues[name][:remaining]
        remaining -= len(kept[name])

    flags = entity.flags if "truncated" in entity.flags else entity.flags + ("truncated",)
    if not any(kept.values()):
        flags += ("budget_exhausted",)
    # declared clue order is preserved
    clues = {name: kept[name] for name in entity.clues}
    return replace(entity, clues=clues, flags=flags)


def compose_clue_text(entity: Entity, order: Sequence[str], label_format: str = "{name}: {value}") -> str:
    """Join the non-empty clues named in ``order`` into one newline-separated text."""
    if not order:
        raise ValueError("order must name at least one clue field")
    lines = []
    for name in order:
        value = entity.clues.get(name, "")
        if value:
            lines.append(label_format.format(name=name, value=value))
    return "\n".join(lines)
