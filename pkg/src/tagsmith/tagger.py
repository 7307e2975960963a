"""Zero-shot tagging against an existing tag system: generative and selective paradigms."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .builder import TagSystem
from .corpus import STANDARD_CLUES, Entity, compose_clue_text
from .embed import Encoder, EmbeddingMatrix, similarity_matrix, top_k
from .llm import CompletionRequest, LLMBackend
from .prompt import ParseRules, PromptTemplate, SelectiveTemplate, parse_tag_list_verbose, render, render_selective

logger = logging.getLogger(__name__)

MODES = ("generative", "selective")
ASSIGNMENTS_VERSION = 1


@dataclass(frozen=True)
class TaggerConfig:
    accept_threshold: float = 0.8
    candidate_k: int = 50
    candidate_floor: float = 0.3
    max_tags_per_item: int = 10
    clue_order: tuple[str, ...] = STANDARD_CLUES
    label_format: str = "{name}: {value}"
    rules: ParseRules = field(default_factory=ParseRules)

    def __post_init__(self) -> None:
        if not 0.0 < self.accept_threshold <= 1.0:
            raise ValueError("accept_threshold must lie in (0, 1]")
        if not 0.0 < self.candidate_floor <= 1.0:
            raise ValueError("candidate_floor must lie in (0, 1]")
        if self.candidate_k < 1 or self.max_tags_per_item < 1:
            raise ValueError("candidate_k and max_tags_per_item must be >= 1")


@dataclass(frozen=True)
class AssignedTag:
    tag: str
    score: float
    source: str
    matched_candidate: str | None = None
    rank: int | None = None

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"tag": self.tag, "score": self.score}
        if self.rank is not None:
            d["rank"] = self.rank
        if self.matched_candidate is not None:
            d["matched_candidate"] = self.matched_candidate
        return d


@dataclass
class TaggingResult:
    entity_id: str
    mode: str
    tags: list[AssignedTag] = field(default_factory=list)
    diagnostics: list[str] = field(default_factory=list)
    error: str | None = None

    @property
    def tag_names(self) -> list[str]:
        return [t.tag for t in self.tags]

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "format_version": ASSIGNMENTS_VERSION,
            "id": self.entity_id,
            "mode": self.mode,
            "tags": [t.to_dict() for t in self.tags],
            "diagnostics": self.diagnostics,
        }
        if self.error is not None:
            d["error"] = self.error
        return d


class TaggingError(RuntimeError):
    pass


def _complete(llm: LLMBackend, prompt: str, entity_id: str) -> str:
    try:
        return llm.complete(CompletionRequest(prompt=prompt, request_tag=entity_id)).text
    except Exception as exc:
        raise TaggingError(f"LLM failed for {entity_id}: {exc}") from exc


def match_candidates(candidates: Sequence[str], cand_vectors: np.ndarray, system: EmbeddingMatrix,
                     cfg: TaggerConfig) -> list[AssignedTag]:
    """Late matching: each candidate proposes its best system tag, kept if the score clears the threshold."""
    if not candidates or len(system) == 0:
        return []
    scores = similarity_matrix(system, cand_vectors)  # N x n
    best: dict[str, AssignedTag] = {}
    for j, cand in enumerate(candidates):
        col = scores[:, j]
        top = float(col.max())
        # ties between system tags go to the smallest string
        i = min(np.flatnonzero(col == top), key=lambda k: system.keys[k])
        if top < cfg.accept_threshold:
            continue
        tag = system.keys[i]
        if tag not in best or top > best[tag].score:
            best[tag] = AssignedTag(tag, top, "generative", matched_candidate=cand)
    ranked = sorted(best.values(), key=lambda a: (-a.score, a.tag))
    return ranked[: cfg.max_tags_per_item]


def tag_generative(entity: Entity, ts: TagSystem, llm: LLMBackend, encoder: Encoder,
                   template: PromptTemplate, cfg: TaggerConfig = TaggerConfig()) -> TaggingResult:
    if len(ts) == 0:
        raise TaggingError("tag system is empty")
    result = TaggingResult(entity.id, "generative")
    raw = _complete(llm, render(template, entity), entity.id)
    parsed = parse_tag_list_verbose(raw, cfg.rules)
    result.diagnostics.extend(parsed.diagnostics)
    if not parsed.tags:
        result.diagnostics.append("zero candidates parsed from LLM output")
        return result
    cand_vectors = encoder.encode_many(parsed.tags)
    result.tags = match_candidates(parsed.tags, cand_vectors, ts.embedding_matrix(encoder), cfg)
    unmatched = len(parsed.tags) - len({a.matched_candidate for a in result.tags})
    if unmatched:
        result.diagnostics.append(f"{unmatched} candidates matched no system tag")
    return result


def selective_candidates(entity: Entity, ts: TagSystem, encoder: Encoder,
                         cfg: TaggerConfig = TaggerConfig()) -> list[tuple[str, float]]:
    """Early matching: system tags nearest to the entity's composed clue text."""
    text = compose_clue_text(entity, cfg.clue_order, cfg.label_format)
    query = encoder.encode(text)
    return top_k(query, ts.embedding_matrix(encoder), cfg.candidate_k, cfg.candidate_floor)


def tag_selective(entity: Entity, ts: TagSystem, llm: LLMBackend, encoder: Encoder,
                  template: SelectiveTemplate, cfg: TaggerConfig = TaggerConfig()) -> TaggingResult:
    if len(ts) == 0:
        raise TaggingError("tag system is empty")
    result = TaggingResult(entity.id, "selective")
    cands = selective_candidates(entity, ts, encoder, cfg)
    if not cands:
        result.diagnostics.append(f"no system tag reached the candidate floor {cfg.candidate_floor}")
        return result
    names = [c for c, _ in cands]
    rank = {c: i + 1 for i, c in enumerate(names)}
    # aliases of a candidate resolve to that candidate; canonical names win over aliases
    surface: dict[str, str] = {}
    by_tag = {r.tag: r for r in ts.records}
    for c in names:
        for a in by_tag[c].aliases:
            surface.setdefault(a, c)
    surface.update({c: c for c in names})

    raw = _complete(llm, render_selective(template, entity, names), entity.id)
    parsed = parse_tag_list_verbose(raw, cfg.rules)
    result.diagnostics.extend(parsed.diagnostics)
    seen: set[str] = set()
    for t in parsed.tags:
        canon = surface.get(t)
        if canon is None:
            result.diagnostics.append(f"dropped off-list tag: {t!r}")
            logger.info("entity %s: dropped off-list tag %r", entity.id, t)
            continue
        if canon in seen:
            continue
        seen.add(canon)
        result.tags.append(AssignedTag(canon, 1.0, "selective", matched_candidate=t if t != canon else None,
                                       rank=rank[canon]))
    result.tags = result.tags[: cfg.max_tags_per_item]
    return result


def tag_batch(entities: Sequence[Entity], ts: TagSystem, mode: str, llm: LLMBackend, encoder: Encoder,
              template: PromptTemplate, cfg: TaggerConfig = TaggerConfig(),
              parallelism: int = 1) -> dict[str, TaggingResult]:
    """Tag every entity; a failing entity yields a result with ``error`` set instead of aborting."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    # fill any missing embeddings up front so workers only read the tag system
    ts.embedding_matrix(encoder)
    fn = tag_generative if mode == "generative" else tag_selective

    def one(entity: Entity) -> TaggingResult:
        try:
            return fn(entity, ts, llm, encoder, template, cfg)
        except Exception as exc:
            return TaggingResult(entity.id, mode, error=f"{type(exc).__name__}: {exc}")

    if parallelism == 1:
        results = [one(e) for e in entities]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(one, entities))
    return {r.entity_id: r for r in results}


def write_assignments(results: dict[str, TaggingResult], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in results.values():
            fh.write(json.dumps(r.to_dict(), ensure_ascii=False) + "\n")


def read_assignments(path: str | Path) -> dict[str, TaggingResult]:
    out: dict[str, TaggingResult] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            d = json.loads(line)
            if d.get("format_version") != ASSIGNMENTS_VERSION or "id" not in d or "tags" not in d:
                raise ValueError(f"{path}: line {lineno} is not an assignments record")
            tags = [
                AssignedTag(t["tag"], float(t["score"]), d["mode"], t.get("matched_candidate"), t.get("rank"))
                for t in d["tags"]
            ]
            out[d["id"]] = TaggingResult(d["id"], d["mode"], tags, list(d.get("diagnostics", [])), d.get("error"))
    return out
