"""Tag system quality metrics: popularity, least effort, intra-item redundancy, uniformity."""

from __future__ import annotations

import csv
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .builder import TagRecord, TagSystem
from .embed import Encoder, similar_pairs

logger = logging.getLogger(__name__)

REPORT_VERSION = 1
DEFAULT_THRESHOLD = 0.8


@dataclass
class Histogram:
    bins: dict[int, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.bins = {int(k): int(v) for k, v in sorted(self.bins.items())}
        if any(v < 0 for v in self.bins.values()):
            raise ValueError("histogram counts must be non-negative")

    @property
    def total(self) -> int:
        return sum(self.bins.values())

    @classmethod
    def of(cls, values: Iterable[int]) -> "Histogram":
        return cls(dict(Counter(values)))


@dataclass
class MetricsReport:
    popularity: Histogram
    tags_per_item: Histogram
    intra_item_redundancy: float
    uniformity: float
    tag_count: int
    threshold: float
    provenance: dict[str, Any] = field(default_factory=dict)
    diagnostics: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "format_version": REPORT_VERSION,
            "provenance": self.provenance,
            "threshold": self.threshold,
            "tag_count": self.tag_count,
            "uniformity": self.uniformity,
            "intra_item_redundancy": self.intra_item_redundancy,
            "popularity": {"bins": {str(k): v for k, v in self.popularity.bins.items()},
                           "total": self.popularity.total},
            "tags_per_item": {"bins": {str(k): v for k, v in self.tags_per_item.bins.items()},
                              "total": self.tags_per_item.total},
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "MetricsReport":
        if d.get("format_version") != REPORT_VERSION:
            raise ValueError(f"unsupported report format_version {d.get('format_version')}")

        def hist(h):
            return Histogram({int(k): v for k, v in h["bins"].items()})

        return cls(hist(d["popularity"]), hist(d["tags_per_item"]), d["intra_item_redundancy"],
                   d["uniformity"], d["tag_count"], d["threshold"], dict(d["provenance"]),
                   list(d.get("diagnostics", [])))


def popularity_histogram(ts: TagSystem) -> Histogram:
    """Tag frequency -> number of tags with that frequency."""
    return Histogram.of(r.frequency for r in ts.records)


def tags_per_item_histogram(assignments: Mapping[str, Sequence[str]]) -> Histogram:
    """Number of tags on an item -> number of items (zero included)."""
    return Histogram.of(len(tags) for tags in assignments.values())


def pair_redundancy(tags: Sequence[str], encoder: Encoder, threshold: float) -> float:
    """Fraction of unordered tag pairs whose cosine is >= threshold."""
    n = len(tags)
    if n < 2:
        raise ValueError("need at least two tags")
    hits = len(similar_pairs(encoder.encode_many(list(tags)), threshold))
    return hits / (n * (n - 1) / 2)


def intra_item_redundancy(assignments: Mapping[str, Sequence[str]], encoder: Encoder,
                          threshold: float = DEFAULT_THRESHOLD,
                          diagnostics: list[str] | None = None) -> float:
    """Mean over items with two or more tags of their redundant-pair fraction."""
    if not 0.0 < threshold <= 1.0:
        raise ValueError("threshold must lie in (0, 1]")
    ratios = [pair_redundancy(tags, encoder, threshold) for tags in assignments.values() if len(tags) >= 2]
    if not ratios:
        if diagnostics is not None:
            diagnostics.append("intra-item redundancy: no item has two or more tags; reported as 0.0")
        return 0.0
    return sum(ratios) / len(ratios)


def uniformity(ts: TagSystem, encoder: Encoder | None = None, threshold: float = DEFAULT_THRESHOLD,
               diagnostics: list[str] | None = None) -> float:
    """Fraction of all unordered tag pairs in the system with cosine >= threshold.

    Stored embeddings are used when present; ``encoder`` fills the gaps.
    """
    if not 0.0 < threshold <= 1.0:
        raise ValueError("threshold must lie in (0, 1]")
    n = len(ts)
    if n < 2:
        if diagnostics is not None:
            diagnostics.append("uniformity: fewer than two tags; reported as 0.0")
        return 0.0
    hits = len(similar_pairs(ts.embedding_matrix(encoder).vectors, threshold))
    return hits / (n * (n - 1) / 2)


def tag_system_from_assignments(assignments: Mapping[str, Sequence[str]], encoder_name: str = "") -> TagSystem:
    """Collect item-level tags (e.g. human hashtags) into an unfused tag system."""
    freq: Counter[str] = Counter()
    for tags in assignments.values():
        freq.update(set(tags))
    records = [TagRecord(t, f) for t, f in freq.items()]
    return TagSystem(records, fusion_threshold=1.0, encoder_name=encoder_name,
                     manifest={"source": "assignments"})


def compute_report(ts: TagSystem, assignments: Mapping[str, Sequence[str]], encoder: Encoder,
                   threshold: float = DEFAULT_THRESHOLD, provenance: dict[str, Any] | None = None) -> MetricsReport:
    diagnostics: list[str] = []
    return MetricsReport(
        popularity=popularity_histogram(ts),
        tags_per_item=tags_per_item_histogram(assignments),
        intra_item_redundancy=intra_item_redundancy(assignments, encoder, threshold, diagnostics),
        uniformity=uniformity(ts, encoder, threshold, diagnostics),
        tag_count=len(ts),
        threshold=threshold,
        provenance=dict(provenance or {}),
        diagnostics=diagnostics,
    )


def emit_report(report: MetricsReport, path: str | Path, fmt: str = "json") -> list[Path]:
    """Write the report.

    ``json`` writes ``path`` itself. ``csv`` writes one ``bin,count`` file per
    histogram next to ``path``: ``<stem>.popularity.csv`` and
    ``<stem>.tags_per_item.csv``. Returns the paths written.
    """
    path = Path(path)
    if fmt == "json":
        path.write_text(json.dumps(report.to_dict(), ensure_ascii=False, indent=2) + "\n", encoding="utf-8")
        return [path]
    if fmt in ("csv", "csv-histograms"):
        written = []
        for name, hist in (("popularity", report.popularity), ("tags_per_item", report.tags_per_item)):
            out = path.with_name(f"{path.stem}.{name}.csv")
            with open(out, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["bin", "count"])
                w.writerows(hist.bins.items())
            written.append(out)
        return written
    raise ValueError(f"unknown report format {fmt!r}")


def load_report(path: str | Path) -> MetricsReport:
    return MetricsReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def read_histogram_csv(path: str | Path) -> Histogram:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return Histogram({int(r["bin"]): int(r["count"]) for r in rows})
