import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from tagsmith.builder import BuildConfig, build_stages
from tagsmith.corpus import record_to_entity
from tagsmith.embed import HashingEncoder
from tagsmith.llm import MockLLM
from tagsmith.prompt import builtin_template
from tagsmith.synth import SYNTH_SCHEMA, generate_records


@pytest.fixture(scope="session")
def encoder():
    return HashingEncoder(256)


@pytest.fixture(scope="session")
def synth_corpus():
    return [record_to_entity(r, SYNTH_SCHEMA) for r in generate_records(500, seed=0)]


@pytest.fixture(scope="session")
def synth_holdout():
    return [record_to_entity(r, SYNTH_SCHEMA) for r in generate_records(200, seed=1, prefix="hold")]


@pytest.fixture(scope="session")
def gen_template():
    return builtin_template("generic_generate")


@pytest.fixture(scope="session")
def sel_template():
    return builtin_template("generic_select", selective=True)


@pytest.fixture(scope="session")
def built(synth_corpus, gen_template, encoder):
    return build_stages(synth_corpus, [gen_template], MockLLM(), encoder, BuildConfig(deterministic=True))


@pytest.fixture
def workspace(tmp_path):
    from tagsmith.synth import write_synthetic_workspace

    write_synthetic_workspace(tmp_path, n=120, holdout=30, seed=3)
    return tmp_path
