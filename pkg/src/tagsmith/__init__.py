"""Zero-shot tag system construction and tagging with pluggable LLM and encoder backends."""

from .builder import BuildConfig, TagRecord, TagSystem, build_tag_system, load_tag_system, save_tag_system
from .corpus import Entity, SchemaMap, compose_clue_text, load_corpus, truncate_clues
from .embed import HashingEncoder, cosine, similarity_matrix, top_k
from .llm import CompletionRequest, MockLLM, batch_complete
from .prompt import ParseRules, PromptTemplate, SelectiveTemplate, parse_tag_list, render, render_selective
from .tagger import TaggerConfig, tag_batch, tag_generative, tag_selective

__all__ = [
    "BuildConfig", "TagRecord", "TagSystem", "build_tag_system", "load_tag_system", "save_tag_system",
    "Entity", "SchemaMap", "compose_clue_text", "load_corpus", "truncate_clues",
    "HashingEncoder", "cosine", "similarity_matrix", "top_k",
    "CompletionRequest", "MockLLM", "batch_complete",
    "ParseRules", "PromptTemplate", "SelectiveTemplate", "parse_tag_list", "render", "render_selective",
    "TaggerConfig", "tag_batch", "tag_generative", "tag_selective",
]

__version__ = "0.1.0"
