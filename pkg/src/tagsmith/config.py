"""Run configuration: a TOML file with dotted ``section.key=value`` overrides."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .builder import BuildConfig
from .corpus import DEFAULT_BUDGET, STANDARD_CLUES, SchemaMap
from .embed import DEFAULT_DIM, CachedEncoder, HashingEncoder, RemoteEncoder
from .llm import ChatCompletionClient, MockLLM, RateLimiter, RetryPolicy
from .prompt import ParseRules, PromptTemplate, builtin_template, load_template
from .tagger import TaggerConfig

BUILTIN_PREFIX = "builtin:"


class ConfigError(ValueError):
    pass


@dataclass
class CorpusSection:
    path: str = ""
    id_field: str = "id"
    hashtag_field: str = ""
    strict: bool = True
    budget: int = DEFAULT_BUDGET
    priority: list[str] = field(default_factory=lambda: list(STANDARD_CLUES))
    map: dict[str, str] = field(default_factory=dict)  # clue name -> source key


@dataclass
class TemplatesSection:
    generation: list[str] = field(default_factory=lambda: ["builtin:generic_generate"])
    selective: str = "builtin:generic_select"
    delimiter: str = "comma"


@dataclass
class LLMSection:
    backend: str = "mock"
    base_url: str = "https://api.openai.com/v1"
    model_name: str = "gpt-3.5-turbo"
    api_key_env: str = "OPENAI_API_KEY"
    timeout_s: float = 60.0
    parallelism: int = 4
    rate_limit_interval_s: float = 0.25
    max_attempts: int = 4
    temperature: float = 0.0
    mock_top_j: int = 5


@dataclass
class EncoderSection:
    backend: str = "hashing"
    dim: int = DEFAULT_DIM
    base_url: str = "https://api.openai.com/v1"
    model_name: str = "text-embedding-3-small"
    api_key_env: str = "OPENAI_API_KEY"
    timeout_s: float = 60.0
    cache_path: str = ""


@dataclass
class BuilderSection:
    min_freq: int = 2
    max_freq: int = 0  # 0: derive from max_freq_ratio
    max_freq_ratio: float = 0.2
    fusion_threshold: float = 0.8


@dataclass
class TaggerSection:
    accept_threshold: float = 0.8
    candidate_k: int = 50
    candidate_floor: float = 0.3
    max_tags_per_item: int = 10
    clue_order: list[str] = field(default_factory=lambda: list(STANDARD_CLUES))
    label_format: str = "{name}: {value}"


@dataclass
class ParseSection:
    delimiters: list[str] = field(default_factory=lambda: [",", "、", "，"])
    min_tag_chars: int = 2
    max_tag_chars: int = 64
    lowercase_fold: bool = False


@dataclass
class MetricsSection:
    threshold: float = 0.8


@dataclass
class RunSection:
    output_dir: str = "out"
    deterministic: bool = False


@dataclass
class RunConfig:
    corpus: CorpusSection = field(default_factory=CorpusSection)
    templates: TemplatesSection = field(default_factory=TemplatesSection)
    llm: LLMSection = field(default_factory=LLMSection)
    encoder: EncoderSection = field(default_factory=EncoderSection)
    builder: BuilderSection = field(default_factory=BuilderSection)
    tagger: TaggerSection = field(default_factory=TaggerSection)
    parse: ParseSection = field(default_factory=ParseSection)
    metrics: MetricsSection = field(default_factory=MetricsSection)
    run: RunSection = field(default_factory=RunSection)
    base_dir: Path = field(default_factory=Path.cwd)

    # -- derived objects ---------------------------------------------------

    def resolve(self, p: str) -> Path:
        path = Path(p)
        return path if path.is_absolute() else self.base_dir / path

    def schema(self) -> SchemaMap:
        fields = {src: clue for clue, src in self.corpus.map.items()}
        return SchemaMap(fields=fields, id_field=self.corpus.id_field,
                         hashtag_field=self.corpus.hashtag_field or None)

    def parse_rules(self) -> ParseRules:
        p = self.parse
        return ParseRules(tuple(p.delimiters), p.min_tag_chars, p.max_tag_chars, lowercase_fold=p.lowercase_fold)

    def _template(self, ref: str, selective: bool) -> PromptTemplate:
        kwargs = {"delimiter_convention": self.templates.delimiter}
        if ref.startswith(BUILTIN_PREFIX):
            return builtin_template(ref[len(BUILTIN_PREFIX):], selective=selective, **kwargs)
        return load_template(self.resolve(ref), selective=selective, **kwargs)

    def generation_templates(self) -> list[PromptTemplate]:
        return [self._template(ref, False) for ref in self.templates.generation]

    def selective_template(self):
        return self._template(self.templates.selective, True)

    def build_config(self) -> BuildConfig:
        b = self.builder
        return BuildConfig(
            min_freq=b.min_freq,
            max_freq=b.max_freq or None,
            max_freq_ratio=b.max_freq_ratio if b.max_freq_ratio > 0 else None,
            fusion_threshold=b.fusion_threshold,
            parallelism=self.llm.parallelism,
            budget=self.corpus.budget,
            priority=tuple(self.corpus.priority),
            rules=self.parse_rules(),
            temperature=self.llm.temperature,
            deterministic=self.run.deterministic,
        )

    def tagger_config(self) -> TaggerConfig:
        t = self.tagger
        return TaggerConfig(t.accept_threshold, t.candidate_k, t.candidate_floor, t.max_tags_per_item,
                            tuple(t.clue_order), t.label_format, self.parse_rules())

    def make_llm(self, transport=None):
        s = self.llm
        if s.backend == "mock":
            return MockLLM(top_j=s.mock_top_j, delimiter=self.templates.delimiter)
        if s.backend == "openai":
            retry = RetryPolicy(max_attempts=s.max_attempts, deterministic=self.run.deterministic)
            return ChatCompletionClient(s.base_url, s.model_name, api_key_env=s.api_key_env,
                                        timeout_s=s.timeout_s, retry=retry,
                                        rate_limiter=RateLimiter(s.rate_limit_interval_s), transport=transport)
        raise ConfigError(f"llm.backend must be 'mock' or 'openai', got {s.backend!r}")

    def make_encoder(self, transport=None):
        s = self.encoder
        if s.backend == "hashing":
            enc = HashingEncoder(s.dim)
        elif s.backend == "remote":
            retry = RetryPolicy(max_attempts=self.llm.max_attempts, deterministic=self.run.deterministic)
            enc = RemoteEncoder(s.base_url, s.model_name, api_key_env=s.api_key_env, timeout_s=s.timeout_s,
                                retry=retry, rate_limiter=RateLimiter(self.llm.rate_limit_interval_s),
                                transport=transport)
        else:
            raise ConfigError(f"encoder.backend must be 'hashing' or 'remote', got {s.backend!r}")
        if s.cache_path:
            return CachedEncoder(enc, self.resolve(s.cache_path))
        return enc

    # -- validation --------------------------------------------------------

    def validate(self, need_corpus: bool = True) -> None:
        problems = []
        if need_corpus:
            if not self.corpus.path:
                problems.append("corpus.path is not set")
            elif not self.resolve(self.corpus.path).is_file():
                problems.append(f"corpus file not found: {self.resolve(self.corpus.path)}")
            if not self.corpus.map:
                problems.append("corpus.map is empty; map at least one clue field")
        refs = list(self.templates.generation) + [self.templates.selective]
        for ref in refs:
            if not ref.startswith(BUILTIN_PREFIX) and not self.resolve(ref).is_file():
                problems.append(f"template file not found: {self.resolve(ref)}")
        for name, v in [("builder.fusion_threshold", self.builder.fusion_threshold),
                        ("tagger.accept_threshold", self.tagger.accept_threshold),
                        ("tagger.candidate_floor", self.tagger.candidate_floor),
                        ("metrics.threshold", self.metrics.threshold)]:
            if not 0.0 < v <= 1.0:
                problems.append(f"{name} must lie in (0, 1], got {v}")
        if self.builder.min_freq < 1:
            problems.append("builder.min_freq must be >= 1")
        if self.builder.max_freq and self.builder.max_freq < self.builder.min_freq:
            problems.append("builder.max_freq must be >= builder.min_freq (or 0 for ratio)")
        if self.llm.parallelism < 1:
            problems.append("llm.parallelism must be >= 1")
        if self.corpus.budget < 1:
            problems.append("corpus.budget must be >= 1")
        if self.llm.backend not in ("mock", "openai"):
            problems.append(f"llm.backend must be 'mock' or 'openai', got {self.llm.backend!r}")
        if self.encoder.backend not in ("hashing", "remote"):
            problems.append(f"encoder.backend must be 'hashing' or 'remote', got {self.encoder.backend!r}")
        if self.templates.delimiter not in ("comma", "ideographic_enum", "mixed"):
            problems.append(f"templates.delimiter unknown: {self.templates.delimiter!r}")
        if problems:
            raise ConfigError("; ".join(problems))
        try:
            self.generation_templates()
            self.selective_template()
            self.schema()
            self.parse_rules()
            self.tagger_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


SECTIONS = [f.name for f in dataclasses.fields(RunConfig) if f.name != "base_dir"]


def config_keys() -> list[tuple[str, Any]]:
    """Every ``section.key`` override with its default value."""
    defaults = RunConfig()
    out = []
    for sec in SECTIONS:
        obj = getattr(defaults, sec)
        for f in dataclasses.fields(obj):
            out.append((f"{sec}.{f.name}", getattr(obj, f.name)))
    return out


def _coerce(section: Any, key: str, value: Any, where: str) -> Any:
    fields = {f.name: f for f in dataclasses.fields(section)}
    if key not in fields:
        raise ConfigError(f"unknown config key {where}")
    current = getattr(section, key)
    if isinstance(current, bool):
        if isinstance(value, str) and value.lower() in ("true", "false", "1", "0", "yes", "no"):
            return value.lower() in ("true", "1", "yes")
        if not isinstance(value, bool):
            raise ConfigError(f"{where} expects true/false, got {value!r}")
        return value
    try:
        if isinstance(current, int):
            return int(value)
        if isinstance(current, float):
            return float(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where} expects a number, got {value!r}") from exc
    if isinstance(current, list):
        if isinstance(value, str):
            value = [v.strip() for v in value.split(",") if v.strip()]
        if not isinstance(value, list):
            raise ConfigError(f"{where} expects a list, got {value!r}")
        return [str(v) for v in value]
    if isinstance(current, dict):
        if not isinstance(value, dict):
            raise ConfigError(f"{where} expects a table, got {value!r}")
        return {str(k): str(v) for k, v in value.items()}
    return str(value)


def _apply(cfg: RunConfig, data: dict[str, Any]) -> None:
    for sec, values in data.items():
        if sec not in SECTIONS:
            raise ConfigError(f"unknown config section [{sec}]")
        if not isinstance(values, dict):
            raise ConfigError(f"[{sec}] must be a table")
        section = getattr(cfg, sec)
        for key, value in values.items():
            setattr(section, key, _coerce(section, key, value, f"{sec}.{key}"))


def parse_override(text: str) -> tuple[str, str, Any]:
    key, sep, raw = text.partition("=")
    if not sep or "." not in key:
        raise ConfigError(f"override must look like section.key=value, got {text!r}")
    sec, _, name = key.strip().partition(".")
    raw = raw.strip()
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw
    return sec, name, value


def load_config(path: str | Path | None = None, overrides: list[str] = ()) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        path = Path(path)
        try:
            data = tomllib.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
        cfg.base_dir = path.resolve().parent
        _apply(cfg, data)
    for text in overrides:
        sec, name, value = parse_override(text)
        if sec == "corpus" and name.startswith("map."):
            cfg.corpus.map[name[4:]] = str(value)
            continue
        _apply(cfg, {sec: {name: value}})
    return cfg


def _toml_value(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, list):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    if isinstance(v, dict):
        return "{ " + ", ".join(f"{k} = {_toml_value(x)}" for k, x in v.items()) + " }"
    return '"' + str(v).replace("\\", "\\\\").replace('"', '\\"') + '"'


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for sec in SECTIONS:
        lines.append(f"[{sec}]")
        obj = getattr(cfg, sec)
        for f in dataclasses.fields(obj):
            lines.append(f"{f.name} = {_toml_value(getattr(obj, f.name))}")
        lines.append("")
    return "\n".join(lines)

