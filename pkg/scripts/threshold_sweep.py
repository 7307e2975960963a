"""Sweep the fusion threshold and report tag-system size and redundancy at
several evaluation thresholds.

    python3 scripts/threshold_sweep.py --thresholds 0.6 0.7 0.8 0.9 --out runs/sweep.csv
"""

from __future__ import annotations

import argparse
import csv
from dataclasses import dataclass, field
from pathlib import Path

from tagsmith.builder import BuildConfig, build_stages
from tagsmith.corpus import record_to_entity
from tagsmith.embed import HashingEncoder
from tagsmith.llm import MockLLM
from tagsmith.metrics import uniformity
from tagsmith.prompt import builtin_template
from tagsmith.synth import SYNTH_SCHEMA, generate_records


@dataclass
class SweepConfig:
    n: int = 500
    seed: int = 0
    dim: int = 256
    thresholds: list[float] = field(default_factory=lambda: [0.6, 0.7, 0.8, 0.9, 0.95])
    eval_thresholds: list[float] = field(default_factory=lambda: [0.5, 0.8, 0.95])
    out: str = "runs/threshold_sweep.csv"


def sweep(cfg: SweepConfig) -> list[dict]:
    corpus = [record_to_entity(r, SYNTH_SCHEMA) for r in generate_records(cfg.n, cfg.seed)]
    encoder = HashingEncoder(cfg.dim)
    tpl = builtin_template("generic_generate")
    rows = []
    for th in cfg.thresholds:
        ts = build_stages(corpus, [tpl], MockLLM(), encoder,
                          BuildConfig(fusion_threshold=th, deterministic=True)).tag_system
        row = {"fusion_threshold": th, "tags": len(ts),
               "aliases": sum(len(r.aliases) for r in ts.records)}
        for ev in cfg.eval_thresholds:
            row[f"uniformity@{ev}"] = round(uniformity(ts, encoder, ev), 6)
        rows.append(row)
    return rows


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    d = SweepConfig()
    p.add_argument("--n", type=int, default=d.n)
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--dim", type=int, default=d.dim)
    p.add_argument("--thresholds", type=float, nargs="+", default=d.thresholds)
    p.add_argument("--eval-thresholds", type=float, nargs="+", default=d.eval_thresholds)
    p.add_argument("--out", default=d.out)
    cfg = SweepConfig(**vars(p.parse_args()))
    rows = sweep(cfg)
    out = Path(cfg.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    for r in rows:
        print("  ".join(f"{k}={v}" for k, v in r.items()))
    print(f"-> {out}")


if __name__ == "__main__":
    main()
