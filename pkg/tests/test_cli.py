import json

import pytest

from tagsmith import builder, metrics
from tagsmith.cli import main
from tagsmith.config import config_keys, load_config
from tagsmith.corpus import load_corpus

ARTIFACTS = ("raw_counts.json", "truncated_counts.json", "tag_system.json", "manifest.json", "build_log.json")


def run(ws, *argv):
    return main([*argv, "--config", str(ws / "config.toml")])


def test_build_writes_artifacts(workspace, capsys):
    assert run(workspace, "build") == 0
    out = workspace / "out"
    for name in ARTIFACTS:
        assert (out / name).exists(), name
    ts = builder.load_tag_system(out / "tag_system.json")
    log = json.loads((out / "build_log.json").read_text())
    assert [s["stage"] for s in log["stages"]] == ["generate", "truncate", "fuse"]
    assert log["stages"][-1]["tags"] == len(ts)
    assert "built tag system" in capsys.readouterr().out


@pytest.mark.parametrize("parallelism", ["1", "4"])
def test_rebuild_is_byte_identical(workspace, parallelism):
    snapshots = []
    for i in range(2):
        assert run(workspace, "build", "--parallelism", parallelism, "--output-dir", f"o{i}") == 0
        snapshots.append({n: (workspace / f"o{i}" / n).read_bytes() for n in ARTIFACTS})
    assert snapshots[0] == snapshots[1]


def test_missing_template_is_config_error(workspace, capsys):
    code = run(workspace, "build", "--set", 'templates.generation=["nope.txt"]')
    assert code == 2
    err = capsys.readouterr().err
    assert "config validation" in err and "nope.txt" in err


def test_unknown_key_is_config_error(workspace):
    assert run(workspace, "validate", "--set", "builder.bogus=1") == 2


def test_tag_and_eval_flow(workspace, capsys):
    assert run(workspace, "build") == 0
    hold = str(workspace / "holdout.jsonl")
    for mode in ("generative", "selective"):
        assert run(workspace, "tag", "--mode", mode, "--input", hold) == 0
        assignments = workspace / "out" / f"assignments.{mode}.jsonl"
        lines = assignments.read_text().splitlines()
        assert len(lines) == 30
        assert run(workspace, "eval", "--assignments", str(assignments)) == 0
        rep = json.loads((workspace / "out" / f"report.assignments.{mode}.json").read_text())
        assert rep["uniformity"] == 0.0
        assert (workspace / "out" / f"report.assignments.{mode}.popularity.csv").exists()
    assert "tagged 30 entities" in capsys.readouterr().out


def test_unloadable_tag_system(workspace, capsys):
    assert run(workspace, "build") == 0
    p = workspace / "out" / "tag_system.json"
    p.write_text(p.read_text()[:100])
    assert run(workspace, "tag", "--input", str(workspace / "holdout.jsonl")) == 3
    assert "cannot load tag system" in capsys.readouterr().err
    assert run(workspace, "tag", "--tag-system", str(workspace / "missing.json")) == 3


def test_eval_rejects_foreign_tags(workspace, capsys):
    assert run(workspace, "build") == 0
    bad = workspace / "bad.jsonl"
    bad.write_text(json.dumps({"format_version": 1, "id": "x", "mode": "generative",
                               "tags": [{"tag": "not-in-system-zz", "score": 1.0}]}) + "\n")
    assert run(workspace, "eval", "--assignments", str(bad)) == 4
    assert "data mismatch" in capsys.readouterr().err
    bad.write_text("{}\n")
    assert run(workspace, "eval", "--assignments", str(bad)) == 4


def test_eval_ground_truth_equals_library(workspace):
    assert run(workspace, "eval", "--use-ground-truth") == 0
    cfg = load_config(workspace / "config.toml")
    entities = load_corpus(workspace / "corpus.jsonl", cfg.schema())
    items = {e.id: list(e.ground_truth_tags) for e in entities}
    enc = cfg.make_encoder()
    expected = metrics.compute_report(metrics.tag_system_from_assignments(items, enc.name), items, enc, 0.8)
    got = metrics.load_report(workspace / "out" / "report.ground_truth.json")
    assert got.uniformity == pytest.approx(expected.uniformity, abs=1e-12)
    assert got.intra_item_redundancy == pytest.approx(expected.intra_item_redundancy, abs=1e-12)
    assert got.popularity == expected.popularity
    assert got.tags_per_item == expected.tags_per_item


def test_ground_truth_needs_hashtag_field(workspace):
    assert run(workspace, "eval", "--use-ground-truth", "--set", 'corpus.hashtag_field=""') == 4


def test_eval_requires_one_source(workspace):
    assert run(workspace, "eval") == 2


def test_cli_map_flags_override(workspace, tmp_path):
    corpus = tmp_path / "other.jsonl"
    corpus.write_text(json.dumps({"key": "a", "head": "watercolor painting"}) + "\n")
    code = main(["validate", "--config", str(workspace / "config.toml"), "--set",
                 f'corpus.path="{corpus}"', "--set", "corpus.map={}", "--map", "title=head", "--id-field", "key",
                 "--set", 'corpus.hashtag_field=""'])
    assert code == 0


def test_help_lists_every_key(capsys):
    with pytest.raises(SystemExit):
        main(["build", "--help"])
    out = capsys.readouterr().out
    for key, _ in config_keys():
        assert key in out


def test_synth_command(tmp_path):
    assert main(["synth", "--out", str(tmp_path / "w"), "--n", "20", "--holdout", "5"]) == 0
    assert len((tmp_path / "w" / "corpus.jsonl").read_text().splitlines()) == 20
