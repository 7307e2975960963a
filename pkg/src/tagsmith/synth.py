"""Seeded synthetic short-video corpus for offline builds and tests.

Each item belongs to one topic. Its title and speech transcript mix topic
words (drawn with Zipf weights, so a few words dominate) with filler words
that appear everywhere. Some topic words come in spelling variants
("watercolor"/"watercolors") that the trigram encoder scores >= 0.8, so
fusion has work to do. Human hashtags are drawn the same way and sometimes
use both variants, which gives the baseline some redundancy.
"""

from __future__ import annotations

import json
import random
from pathlib import Path
from typing import Iterable

from .corpus import SchemaMap

TOPICS: dict[str, list[str]] = {
    "art": ["watercolor", "watercolors", "painting", "sketchbook", "portrait", "acrylic", "canvas",
            "brushwork", "illustration", "charcoal", "gallery", "palette"],
    "tech": ["smartphone", "smartphones", "unboxing", "unboxings", "battery", "charger", "review",
             "firmware", "keyboard", "headphones", "laptop", "benchmark"],
    "home": ["apartment", "apartments", "renovation", "renovations", "bookshelf", "kitchen", "flooring",
             "furniture", "lighting", "storage", "bedroom", "wallpaper"],
    "food": ["dumpling", "dumplings", "vegetarian", "vegetarians", "noodles", "steamed", "scallion",
             "breakfast", "seasoning", "recipe", "recipes", "dessert"],
    "fitness": ["workout", "workouts", "stretching", "treadmill", "dumbbell", "squats", "cardio",
                "protein", "yoga", "marathon", "tutorial", "tutorials"],
    "outdoors": ["fishing", "camping", "hiking", "riverbank", "lakeside", "backpack", "mountain",
                 "tent", "sunrise", "campfire", "kayaking", "trailhead"],
    "music": ["guitar", "guitars", "melody", "concert", "drumming", "karaoke", "piano", "chorus",
              "lyrics", "violin", "acoustic", "songwriter"],
    "photo": ["photography", "photographs", "camera", "lens", "landscape", "portraiture", "tripod",
              "exposure", "editing", "filter", "sunset", "street"],
}

FILLER = ["the", "and", "so", "you", "this"]
RARE = ["zephyr", "quokka", "xylograph", "fjord", "obelisk", "nebula", "sonnet", "quasar", "mosaic",
        "lantern", "origami", "saffron"]

SYNTH_SCHEMA = SchemaMap(fields={"t": "title", "cat": "category", "sub": "asr"}, id_field="vid",
                         hashtag_field="tags")


def _zipf_weights(n: int, s: float = 1.1) -> list[float]:
    return [1.0 / (r ** s) for r in range(1, n + 1)]


def make_record(rng: random.Random, ident: str) -> dict:
    topic_names = list(TOPICS)
    topic = rng.choices(topic_names, weights=_zipf_weights(len(topic_names), 0.6))[0]
    head, tail = TOPICS[topic][:4], TOPICS[topic][4:]
    rng.shuffle(head)  # variants near the top trade places between items
    words = head + tail
    weights = _zipf_weights(len(words))
    title_words = rng.choices(words, weights=weights, k=3)
    speech: list[str] = []
    for _ in range(rng.randint(8, 14)):
        roll = rng.random()
        if roll < 0.45:
            speech.append(rng.choice(FILLER))
        elif roll < 0.95:
            speech.append(rng.choices(words, weights=weights)[0])
        else:
            speech.append(rng.choice(RARE))
    tags = rng.sample(words[:6], k=rng.randint(1, 3))
    if rng.random() < 0.3:
        tags.append(topic)
    return {
        "vid": ident,
        "t": " ".join(title_words).capitalize(),
        "cat": topic,
        "sub": " ".join(speech),
        "tags": "fun " + " ".join(f"#{t}" for t in tags),
    }


def generate_records(n: int, seed: int = 0, prefix: str = "item") -> list[dict]:
    rng = random.Random(seed)
    return [make_record(rng, f"{prefix}{i:05d}") for i in range(n)]


def write_jsonl(records: Iterable[dict], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, ensure_ascii=False) + "\n")


SYNTH_CONFIG = """\
[corpus]
path = "corpus.jsonl"
id_field = "vid"
hashtag_field = "tags"
map = {{ title = "t", category = "cat", asr = "sub" }}

[templates]
generation = ["builtin:generic_generate"]
selective = "builtin:generic_select"
delimiter = "comma"

[llm]
backend = "mock"
parallelism = 4

[encoder]
backend = "hashing"
dim = 256

[builder]
min_freq = 2
max_freq_ratio = 0.2
fusion_threshold = 0.8

[tagger]
accept_threshold = 0.8
candidate_k = 50
candidate_floor = 0.1
max_tags_per_item = 10
clue_order = ["title", "category", "asr"]

[metrics]
threshold = 0.8

[run]
output_dir = "{output_dir}"
deterministic = true
"""


def write_synthetic_workspace(directory: str | Path, n: int = 500, holdout: int = 200, seed: int = 0,
                              output_dir: str = "out") -> dict[str, Path]:
    """Write ``corpus.jsonl``, ``holdout.jsonl`` and a mock-backend ``config.toml``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = {"corpus": d / "corpus.jsonl", "holdout": d / "holdout.jsonl", "config": d / "config.toml"}
    write_jsonl(generate_records(n, seed), paths["corpus"])
    write_jsonl(generate_records(holdout, seed + 1, prefix="hold"), paths["holdout"])
    paths["config"].write_text(SYNTH_CONFIG.format(output_dir=output_dir), encoding="utf-8")
    return paths
