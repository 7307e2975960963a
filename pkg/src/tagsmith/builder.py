"""Tag system construction: LLM candidate generation, frequency band filtering, semantic fusion."""

from __future__ import annotations

import hashlib
import json
import logging
import statistics
import warnings
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .corpus import DEFAULT_BUDGET, STANDARD_CLUES, Entity, truncate_clues
from .embed import Encoder, EmbeddingMatrix, similar_pairs
from .llm import CompletionRequest, LLMBackend, batch_complete
from .prompt import ParseRules, PromptTemplate, parse_tag_list, render

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
FIXED_TIMESTAMP = "1970-01-01T00:00:00Z"


class BuildError(RuntimeError):
    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"[{stage}] {message}")


class TagSystemFormatError(ValueError):
    pass


class ChecksumError(TagSystemFormatError):
    pass


class ProvenanceWarning(UserWarning):
    pass


class UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))
        self.rank = [0] * n

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, x: int, y: int) -> None:
        px, py = self.find(x), self.find(y)
        if px == py:
            return
        if self.rank[px] < self.rank[py]:
            px, py = py, px
        self.parent[py] = px
        if self.rank[px] == self.rank[py]:
            self.rank[px] += 1

    def groups(self) -> list[list[int]]:
        out: dict[int, list[int]] = {}
        for i in range(len(self.parent)):
            out.setdefault(self.find(i), []).append(i)
        return list(out.values())


@dataclass
class RawCounts:
    """Per-entity candidate tags plus bookkeeping.

    ``entity_tags`` keeps entities in corpus order and each entity's tags in
    first-emission order, de-duplicated. A tag's frequency is the number of
    entities that list it; ``emissions`` counts parsed completions naming it,
    so one entity with two templates can contribute twice.
    """

    entity_tags: dict[str, list[str]]
    emissions: dict[str, int] = field(default_factory=dict)
    failures: dict[str, str] = field(default_factory=dict)

    def frequencies(self) -> dict[str, int]:
        freq: Counter[str] = Counter()
        for tags in self.entity_tags.values():
            freq.update(set(tags))
        return dict(freq)

    def entity_sets(self) -> dict[str, set[str]]:
        sets: dict[str, set[str]] = {}
        for eid, tags in self.entity_tags.items():
            for t in tags:
                sets.setdefault(t, set()).add(eid)
        return sets

    def __len__(self) -> int:
        return len(self.frequencies())

    def to_dict(self) -> dict[str, Any]:
        freq = self.frequencies()
        return {
            "format_version": FORMAT_VERSION,
            "frequencies": dict(sorted(freq.items(), key=lambda kv: (-kv[1], kv[0]))),
            "emissions": dict(sorted(self.emissions.items())),
            "entity_tags": self.entity_tags,
            "failures": self.failures,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RawCounts":
        return cls(
            entity_tags={k: list(v) for k, v in data["entity_tags"].items()},
            emissions=dict(data.get("emissions", {})),
            failures=dict(data.get("failures", {})),
        )


def _distribution_summary(freq: dict[str, int]) -> str:
    if not freq:
        return "no tags"
    values = sorted(freq.values())
    return (f"{len(values)} tags; frequency min={values[0]} median={statistics.median(values)} "
            f"max={values[-1]}")


def generate_candidates(
    corpus: Sequence[Entity],
    templates: Sequence[PromptTemplate],
    llm: LLMBackend,
    rules: ParseRules = ParseRules(),
    parallelism: int = 1,
    budget: int = DEFAULT_BUDGET,
    priority: Sequence[str] = STANDARD_CLUES,
    temperature: float = 0.0,
) -> RawCounts:
    """Prompt the LLM with every (entity, template) pair and collect parsed tags.

    An entity's tags are the union over templates. Failed completions are
    recorded in ``failures`` and otherwise skipped.
    """
    if not corpus:
        raise BuildError("generate", "corpus is empty")
    if not templates:
        raise BuildError("generate", "no generation templates given")

    reqs, owners = [], []
    for entity in corpus:
        fitted = truncate_clues(entity, budget, priority)
        for tpl in templates:
            prompt = render(tpl, fitted)
            reqs.append(CompletionRequest(prompt=prompt, temperature=temperature,
                                          request_tag=f"{entity.id}|{tpl.template_id}"))
            owners.append(entity.id)

    results = batch_complete(llm, reqs, parallelism)

    entity_tags: dict[str, list[str]] = {e.id: [] for e in corpus}
    emissions: Counter[str] = Counter()
    failures: dict[str, str] = {}
    n_ok = 0
    for eid, req, res in zip(owners, reqs, results):
        if isinstance(res, Exception):
            failures[req.request_tag] = f"{type(res).__name__}: {res}"
            continue
        n_ok += 1
        tags = parse_tag_list(res.text, rules)
        emissions.update(tags)
        bucket = entity_tags[eid]
        for t in tags:
            if t not in bucket:
                bucket.append(t)

    if n_ok == 0 or not any(entity_tags.values()):
        raise BuildError("generate", f"no candidates generated ({len(failures)} of {len(reqs)} completions failed)")
    return RawCounts(entity_tags=entity_tags, emissions=dict(emissions), failures=failures)


def frequency_truncate(counts: RawCounts, min_freq: int = 2, max_freq: int | None = None) -> RawCounts:
    """Keep tags whose frequency lies in [min_freq, max_freq]; ``None`` means no upper bound."""
    if min_freq < 1:
        raise ValueError("min_freq must be >= 1")
    if max_freq is not None and max_freq < min_freq:
        raise ValueError("max_freq must be >= min_freq")
    freq = counts.frequencies()
    keep = {t for t, f in freq.items() if f >= min_freq and (max_freq is None or f <= max_freq)}
    if not keep:
        raise BuildError("truncate", f"no tag has frequency in [{min_freq}, {max_freq or 'inf'}]; "
                                     f"{_distribution_summary(freq)}")
    return RawCounts(
        entity_tags={eid: [t for t in tags if t in keep] for eid, tags in counts.entity_tags.items()},
        emissions={t: n for t, n in counts.emissions.items() if t in keep},
        failures=dict(counts.failures),
    )


@dataclass
class TagRecord:
    tag: str
    frequency: int
    aliases: tuple[str, ...] = ()
    embedding: np.ndarray | None = None

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TagRecord):
            return NotImplemented
        if (self.tag, self.frequency, self.aliases) != (other.tag, other.frequency, other.aliases):
            return False
        if self.embedding is None or other.embedding is None:
            return self.embedding is None and other.embedding is None
        return bool(np.array_equal(self.embedding, other.embedding))


@dataclass
class TagSystem:
    records: list[TagRecord]
    fusion_threshold: float
    encoder_name: str
    manifest: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.records = sorted(self.records, key=lambda r: (-r.frequency, r.tag))
        tags = [r.tag for r in self.records]
        if len(set(tags)) != len(tags):
            raise ValueError("tag system contains duplicate tags")

    def __len__(self) -> int:
        return len(self.records)

    @property
    def tags(self) -> list[str]:
        return [r.tag for r in self.records]

    def alias_map(self) -> dict[str, str]:
        """Surface form (canonical tags and aliases) -> canonical tag."""
        out = {}
        for r in self.records:
            for a in r.aliases:
                out.setdefault(a, r.tag)
        for r in self.records:
            out[r.tag] = r.tag
        return out

    def embedding_matrix(self, encoder: Encoder | None = None) -> EmbeddingMatrix:
        """Stored embeddings; rows lacking one are encoded with ``encoder``."""
        missing = [i for i, r in enumerate(self.records) if r.embedding is None]
        if missing:
            if encoder is None:
                raise ValueError(f"{len(missing)} records have no embedding and no encoder was given")
            fresh = encoder.encode_many([self.records[i].tag for i in missing])
            for i, v in zip(missing, fresh):
                self.records[i].embedding = v
        if not self.records:
            dim = encoder.dim if encoder is not None else 0
            return EmbeddingMatrix([], np.zeros((0, dim)))
        return EmbeddingMatrix(self.tags, np.vstack([r.embedding for r in self.records]))


def fuse_groups(tags: Sequence[str], vectors: np.ndarray, threshold: float) -> list[list[int]]:
    """Connected components of the graph with an edge wherever cosine >= threshold."""
    uf = UnionFind(len(tags))
    for i, j in similar_pairs(vectors, threshold):
        uf.union(i, j)
    return uf.groups()


def semantic_fuse(counts: RawCounts, encoder: Encoder, threshold: float = 0.8) -> TagSystem:
    """Merge semantically redundant tags.

    Each connected component of the similarity graph becomes one record:
    the most frequent member (ties: smallest string) is canonical, the rest
    are aliases, and the frequency is the number of distinct entities
    carrying any member.
    """
    if not 0.0 < threshold <= 1.0:
        raise ValueError("threshold must lie in (0, 1]")
    freq = counts.frequencies()
    if not freq:
        raise BuildError("fuse", "no tags to fuse")
    tags = sorted(freq)
    try:
        vectors = encoder.encode_many(tags)
    except Exception as exc:
        bad = []
        for t in tags:
            try:
                encoder.encode(t)
            except Exception:
                bad.append(t)
        raise BuildError("fuse", f"encoder failed ({exc}); offending tags: {bad[:20]}") from exc

    entity_sets = counts.entity_sets()
    groups = fuse_groups(tags, vectors, threshold)
    records = []
    for members in groups:
        rep = min(members, key=lambda i: (-freq[tags[i]], tags[i]))
        covered = set().union(*(entity_sets[tags[i]] for i in members))
        aliases = tuple(sorted(tags[i] for i in members if i != rep))
        records.append(TagRecord(tags[rep], len(covered), aliases, vectors[rep].copy()))

    system = TagSystem(records, fusion_threshold=threshold, encoder_name=encoder.name)
    residual = similar_pairs(system.embedding_matrix().vectors, threshold)
    # two canonical tags meeting the threshold would share an edge, hence a component
    assert not residual, f"fusion left {len(residual)} redundant pairs"
    return system


@dataclass
class BuildConfig:
    min_freq: int = 2
    max_freq: int | None = None
    max_freq_ratio: float | None = 0.2
    fusion_threshold: float = 0.8
    parallelism: int = 1
    budget: int = DEFAULT_BUDGET
    priority: tuple[str, ...] = STANDARD_CLUES
    rules: ParseRules = field(default_factory=ParseRules)
    temperature: float = 0.0
    deterministic: bool = False

    def resolve_max_freq(self, corpus_size: int) -> int | None:
        if self.max_freq is not None:
            return self.max_freq
        if self.max_freq_ratio is None:
            return None
        return max(self.min_freq, int(self.max_freq_ratio * corpus_size))


@dataclass
class BuildResult:
    raw: RawCounts
    truncated: RawCounts
    tag_system: TagSystem


def corpus_digest(corpus: Sequence[Entity]) -> str:
    h = hashlib.sha256()
    for e in corpus:
        h.update(json.dumps([e.id, list(e.clues.items())], ensure_ascii=False).encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()


def build_stages(
    corpus: Sequence[Entity],
    templates: Sequence[PromptTemplate],
    llm: LLMBackend,
    encoder: Encoder,
    config: BuildConfig = BuildConfig(),
    corpus_hash: str | None = None,
) -> BuildResult:
    raw = generate_candidates(corpus, templates, llm, config.rules, config.parallelism,
                              config.budget, config.priority, config.temperature)
    max_freq = config.resolve_max_freq(len(corpus))
    truncated = frequency_truncate(raw, config.min_freq, max_freq)
    system = semantic_fuse(truncated, encoder, config.fusion_threshold)
    now = FIXED_TIMESTAMP if config.deterministic else datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
    system.manifest = {
        "corpus_hash": corpus_hash or corpus_digest(corpus),
        "corpus_size": len(corpus),
        "template_ids": [t.template_id for t in templates],
        "llm_backend": llm.name,
        "encoder": encoder.name,
        "min_freq": config.min_freq,
        "max_freq": max_freq,
        "fusion_threshold": config.fusion_threshold,
        "stage_tag_counts": {"raw": len(raw), "truncated": len(truncated), "fused": len(system)},
        "failed_completions": len(raw.failures),
        "created_at": now,
    }
    return BuildResult(raw, truncated, system)


def build_tag_system(corpus, templates, llm, encoder, config: BuildConfig = BuildConfig()) -> TagSystem:
    """generate -> truncate -> fuse, with a manifest describing the run."""
    return build_stages(corpus, templates, llm, encoder, config).tag_system


# ---------------------------------------------------------------------------
# persistence


def _canonical(obj: Any) -> bytes:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True, separators=(",", ":")).encode("utf-8")


def tag_system_to_dict(ts: TagSystem, include_embeddings: bool = True) -> dict[str, Any]:
    header = {
        "format_version": FORMAT_VERSION,
        "fusion_threshold": ts.fusion_threshold,
        "encoder_name": ts.encoder_name,
        "manifest": ts.manifest,
    }
    records = []
    for r in ts.records:
        rec: dict[str, Any] = {"tag": r.tag, "frequency": r.frequency, "aliases": list(r.aliases)}
        if include_embeddings and r.embedding is not None:
            rec["embedding"] = r.embedding.tolist()
        records.append(rec)
    body = {"header": header, "records": records}
    return {**body, "checksum": hashlib.sha256(_canonical(body)).hexdigest()}


def save_tag_system(ts: TagSystem, path: str | Path, include_embeddings: bool = True) -> None:
    doc = tag_system_to_dict(ts, include_embeddings)
    Path(path).write_text(json.dumps(doc, ensure_ascii=False) + "\n", encoding="utf-8")


def load_tag_system(path: str | Path, expected_encoder: str | None = None) -> TagSystem:
    """Read a tag system file, verifying version and checksum.

    Emits a :class:`ProvenanceWarning` when ``expected_encoder`` differs from
    the encoder recorded in the file.
    """
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ChecksumError(f"{path}: file is truncated or corrupt ({exc.msg})") from exc
    if not isinstance(doc, dict) or "header" not in doc or "records" not in doc:
        raise TagSystemFormatError(f"{path}: not a tag system file")
    version = doc["header"].get("format_version")
    if version != FORMAT_VERSION:
        raise TagSystemFormatError(f"{path}: format_version {version}, expected {FORMAT_VERSION}")
    body = {"header": doc["header"], "records": doc["records"]}
    if hashlib.sha256(_canonical(body)).hexdigest() != doc.get("checksum"):
        raise ChecksumError(f"{path}: checksum mismatch")
    header = doc["header"]
    if expected_encoder is not None and expected_encoder != header["encoder_name"]:
        warnings.warn(
            f"embedding provenance mismatch: file built with {header['encoder_name']!r}, "
            f"current encoder is {expected_encoder!r}",
            ProvenanceWarning,
            stacklevel=2,
        )
    records = [
        TagRecord(
            tag=r["tag"],
            frequency=int(r["frequency"]),
            aliases=tuple(r.get("aliases", ())),
            embedding=np.asarray(r["embedding"], dtype=np.float64) if r.get("embedding") is not None else None,
        )
        for r in doc["records"]
    ]
    return TagSystem(records, header["fusion_threshold"], header["encoder_name"], header.get("manifest", {}))


def save_counts(counts: RawCounts, path: str | Path) -> None:
    Path(path).write_text(json.dumps(counts.to_dict(), ensure_ascii=False, indent=1) + "\n", encoding="utf-8")


def load_counts(path: str | Path) -> RawCounts:
    return RawCounts.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
