"""Instruction templates with ``{slot}`` substitution, and parsing of LLM tag lists."""

from __future__ import annotations

import hashlib
import logging
import re
import string
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

from .corpus import Entity

logger = logging.getLogger(__name__)

SLOT_RE = re.compile(r"[a-z][a-z0-9_]*\Z")
CANDIDATES_SLOT = "candidates"
DELIMITER_CONVENTIONS = ("comma", "ideographic_enum", "mixed")

_CJK_RE = re.compile(r"[㐀-䶿一-鿿豈-﫿]")
_COLONS = (":", "：")
PREAMBLE_WINDOW = 80


class TemplateError(ValueError):
    pass


def _parse_body(body: str) -> list[tuple[str, str | None]]:
    """Split a template body into (literal, slot) pieces, validating every placeholder."""
    try:
        pieces = list(string.Formatter().parse(body))
    except ValueError as exc:
        raise TemplateError(f"malformed placeholder: {exc}") from exc
    out = []
    for literal, name, spec, conversion in pieces:
        if name is not None:
            if conversion or spec or not SLOT_RE.match(name):
                shown = name + (f"!{conversion}" if conversion else "") + (f":{spec}" if spec else "")
                raise TemplateError(f"invalid slot {{{shown}}}; expected {{[a-z][a-z0-9_]*}}")
        out.append((literal, name))
    return out


@dataclass(frozen=True)
class PromptTemplate:
    body: str
    delimiter_convention: str = "comma"
    language_hint: str = ""
    name: str = ""

    def __post_init__(self) -> None:
        if self.delimiter_convention not in DELIMITER_CONVENTIONS:
            raise TemplateError(f"unknown delimiter convention {self.delimiter_convention!r}")
        object.__setattr__(self, "_pieces", tuple(_parse_body(self.body)))

    @property
    def slots(self) -> frozenset[str]:
        return frozenset(name for _, name in self._pieces if name is not None)

    @property
    def template_id(self) -> str:
        digest = hashlib.sha256(self.body.encode("utf-8")).hexdigest()[:12]
        return f"{self.name or 'template'}@{digest}"

    def join(self, tags: Sequence[str]) -> str:
        if self.delimiter_convention == "comma":
            sep = ", "
        elif self.delimiter_convention == "ideographic_enum":
            sep = "、"
        else:
            sep = "、" if any(_CJK_RE.search(t) for t in tags) else ", "
        return sep.join(tags)

    def fill(self, values: dict[str, str]) -> str:
        parts = []
        for literal, name in self._pieces:
            parts.append(literal)
            if name is not None:
                parts.append(values[name])
        return "".join(parts)


@dataclass(frozen=True)
class SelectiveTemplate(PromptTemplate):
    def __post_init__(self) -> None:
        super().__post_init__()
        count = sum(1 for _, name in self._pieces if name == CANDIDATES_SLOT)
        if count != 1:
            raise TemplateError(f"selective template needs exactly one {{candidates}} slot, found {count}")


def load_template(path: str | Path, selective: bool = False, **kwargs) -> PromptTemplate:
    path = Path(path)
    body = path.read_text(encoding="utf-8").rstrip("\n")
    kwargs.setdefault("name", path.stem)
    cls = SelectiveTemplate if selective else PromptTemplate
    return cls(body=body, **kwargs)


def builtin_template(name: str, selective: bool = False, **kwargs) -> PromptTemplate:
    """Load one of the templates shipped in ``tagsmith/templates``."""
    body = resources.files("tagsmith").joinpath("templates").joinpath(f"{name}.txt").read_text(encoding="utf-8")
    kwargs.setdefault("name", name)
    cls = SelectiveTemplate if selective else PromptTemplate
    return cls(body=body.rstrip("\n"), **kwargs)


def _slot_values(template: PromptTemplate, entity: Entity) -> dict[str, str]:
    values = {}
    for slot in template.slots:
        if slot == CANDIDATES_SLOT and isinstance(template, SelectiveTemplate):
            continue
        if slot not in entity.clues:
            logger.warning("entity %s has no clue %r; substituting empty text", entity.id, slot)
        values[slot] = entity.clues.get(slot, "")
    return values


def render(template: PromptTemplate, entity: Entity) -> str:
    """Substitute the entity's clue values into the template's slots."""
    if isinstance(template, SelectiveTemplate):
        raise TemplateError("selective templates are rendered with render_selective")
    return template.fill(_slot_values(template, entity))


def render_selective(template: SelectiveTemplate, entity: Entity, candidates: Sequence[str]) -> str:
    if not candidates:
        raise ValueError("selective tagging requires a non-empty candidate set")
    values = _slot_values(template, entity)
    values[CANDIDATES_SLOT] = template.join(list(candidates))
    return template.fill(values)


@dataclass(frozen=True)
class ParseRules:
    delimiters: tuple[str, ...] = (",", "、", "，")
    min_tag_chars: int = 2
    max_tag_chars: int = 64
    strip_chars: str = " \t\n\r\f\v　\"'“”‘’「」『』《》.。"
    lowercase_fold: bool = False

    def __post_init__(self) -> None:
        if not self.delimiters or any(not d for d in self.delimiters):
            raise ValueError("delimiters must be non-empty strings")
        if not 1 <= self.min_tag_chars <= self.max_tag_chars:
            raise ValueError("need 1 <= min_tag_chars <= max_tag_chars")
        object.__setattr__(self, "delimiters", tuple(self.delimiters))


@dataclass
class ParseResult:
    tags: list[str]
    diagnostics: list[str] = field(default_factory=list)


def strip_preamble(raw: str) -> str:
    """Drop a chat-style lead-in such as ``"The tags are:"``.

    Only a colon inside the first 80 characters counts; the cut is made after
    the last such colon.
    """
    head = raw[:PREAMBLE_WINDOW]
    cut = max(head.rfind(c) for c in _COLONS)
    return raw[cut + 1 :] if cut >= 0 else raw


def parse_tag_list_verbose(raw: str, rules: ParseRules = ParseRules()) -> ParseResult:
    if not isinstance(raw, str):
        return ParseResult([], ["non-text LLM output"])
    diagnostics: list[str] = []
    text = strip_preamble(raw)
    if text is not raw:
        diagnostics.append("stripped preamble")
    pattern = "|".join(re.escape(d) for d in sorted(rules.delimiters, key=len, reverse=True))
    tags: list[str] = []
    seen: set[str] = set()
    for piece in re.split(pattern, text):
        tag = piece.strip(rules.strip_chars)
        if rules.lowercase_fold:
            tag = tag.lower()
        if not tag:
            continue
        if any(c in tag for c in _COLONS):
            # keeps parse(join(parse(s))) == parse(s): a colon could re-trigger preamble stripping
            diagnostics.append(f"dropped tag containing a colon: {tag!r}")
            continue
        if not rules.min_tag_chars <= len(tag) <= rules.max_tag_chars:
            diagnostics.append(f"dropped tag outside length bounds: {tag!r}")
            continue
        if tag in seen:
            continue
        seen.add(tag)
        tags.append(tag)
    if not tags:
        diagnostics.append("no tags parsed")
    return ParseResult(tags, diagnostics)


def parse_tag_list(raw: str, rules: ParseRules = ParseRules()) -> list[str]:
    """Split raw LLM output into an ordered, de-duplicated tag list. Never raises."""
    return parse_tag_list_verbose(raw, rules).tags
