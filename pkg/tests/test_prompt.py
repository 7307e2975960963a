import pytest
from hypothesis import given
from hypothesis import strategies as st

from tagsmith.corpus import Entity
from tagsmith.prompt import (
    ParseRules,
    PromptTemplate,
    SelectiveTemplate,
    TemplateError,
    builtin_template,
    parse_tag_list,
    parse_tag_list_verbose,
    render,
    render_selective,
)

FOODCOM_TAGS = (
    "time-to-make, course, main-ingredient, preparation, occasion, side-dishes, eggs-dairy, refrigerator, "
    "diabetic, vegetarian, grains, cheese, stove-top, dietary, low-cholesterol, low-calorie, comfort-food, "
    "low-carb, low-in-something, pasta-rice-and-grains, brunch, taste-mood, equipment, presentation, "
    "served-hot, 4-hours-or-less"
)


def test_render_substitutes_slots():
    t = PromptTemplate('T: "{title}", A: "{asr}"')
    assert render(t, Entity("e", {"title": "x", "asr": "y"})) == 'T: "x", A: "y"'
    assert t.slots == {"title", "asr"}


def test_brace_escape():
    t = PromptTemplate("literal {{brace}}")
    assert render(t, Entity("e", {"title": "x"})) == "literal {brace}"
    assert t.slots == frozenset()


@pytest.mark.parametrize("body", ["{Title}", "{a.b}", "{x!r}", "{x:>3}", "{", "oops }", "{1abc}"])
def test_malformed_placeholders_fail_at_construction(body):
    with pytest.raises(TemplateError):
        PromptTemplate(body)


def test_missing_clue_renders_empty(caplog):
    t = PromptTemplate('"{title}" / "{ocr}"')
    assert render(t, Entity("e", {"title": "x"})) == '"x" / ""'
    assert "no clue 'ocr'" in caplog.text


def test_foodcom_template_renders_dish_name():
    t = builtin_template("foodcom_generate")
    assert t.slots == {"name", "caption", "asr"}
    out = render(t, Entity("e", {"name": "Garlic Noodles", "caption": "quick", "asr": "boil water"}))
    assert '"dish name" is "Garlic Noodles"' in out
    assert "{" not in out


def test_kuaishou_template_slots():
    t = builtin_template("kuaishou_generate", delimiter_convention="ideographic_enum")
    assert t.slots == {"title", "category", "ocr", "asr"}
    out = render(t, Entity("e", {"title": "小户型", "category": "房产家居", "ocr": "", "asr": "看"}))
    assert '"标题"为"小户型"' in out


def test_selective_requires_single_candidates_slot():
    with pytest.raises(TemplateError):
        SelectiveTemplate("no slot here {title}")
    with pytest.raises(TemplateError):
        SelectiveTemplate("{candidates} and {candidates}")


def test_render_selective_joins():
    e = Entity("e", {"title": "t"})
    t = SelectiveTemplate("[{candidates}] {title}")
    assert render_selective(t, e, ["a", "b"]) == "[a, b] t"
    ideo = SelectiveTemplate("[{candidates}]", delimiter_convention="ideographic_enum")
    assert render_selective(ideo, e, ["美食"]) == "[美食]"
    assert render_selective(ideo, e, ["美食", "小吃"]) == "[美食、小吃]"
    mixed = SelectiveTemplate("[{candidates}]", delimiter_convention="mixed")
    assert render_selective(mixed, e, ["ab", "cd"]) == "[ab, cd]"
    assert render_selective(mixed, e, ["ab", "美食"]) == "[ab、美食]"
    with pytest.raises(ValueError):
        render_selective(t, e, [])


def test_render_selective_fifty_candidates():
    cands = [f"tag{i:02d}x" for i in range(50)]
    out = render_selective(SelectiveTemplate("<{candidates}>"), Entity("e", {"title": "t"}), cands)
    positions = [out.index(c) for c in cands]
    assert all(out.count(c) == 1 for c in cands)
    assert positions == sorted(positions)


def test_parse_exemplar_outputs():
    assert parse_tag_list("小户型装修、一室一厅装修、装修效果图") == ["小户型装修", "一室一厅装修", "装修效果图"]
    tags = parse_tag_list(FOODCOM_TAGS)
    assert tags[:3] == ["time-to-make", "course", "main-ingredient"]
    assert len(tags) == 26


def test_parse_dedup_and_filters():
    assert parse_tag_list("a、a , b,,", ParseRules(min_tag_chars=1)) == ["a", "b"]
    assert parse_tag_list("x", ParseRules(min_tag_chars=2)) == []
    assert parse_tag_list("ok, " + "z" * 65) == ["ok"]


def test_parse_strips_preamble_and_quotes():
    assert parse_tag_list('The tags are: "cats", dogs.') == ["cats", "dogs"]
    assert parse_tag_list("兴趣标签：钓鱼乐趣、休闲钓鱼。") == ["钓鱼乐趣", "休闲钓鱼"]
    # a colon past the preamble window is not a preamble; that chunk is dropped
    late = "x" * 90 + ": bb, cc"
    assert parse_tag_list(late, ParseRules(max_tag_chars=200)) == ["cc"]


def test_parse_never_raises_and_reports():
    res = parse_tag_list_verbose("")
    assert res.tags == [] and "no tags parsed" in res.diagnostics
    assert parse_tag_list(None) == []  # type: ignore[arg-type]


def test_lowercase_fold():
    assert parse_tag_list("Cats, cats, CATS", ParseRules(lowercase_fold=True)) == ["cats"]


raw_outputs = st.text(alphabet=st.sampled_from(list("ab c,、，:：.\"'\n美食x")), max_size=60)


@given(raw_outputs)
def test_parse_idempotent_under_rejoin(raw):
    rules = ParseRules(min_tag_chars=1)
    first = parse_tag_list(raw, rules)
    assert parse_tag_list(", ".join(first), rules) == first


@given(raw_outputs)
def test_parse_output_is_clean(raw):
    rules = ParseRules(min_tag_chars=1)
    for tag in parse_tag_list(raw, rules):
        assert not any(d in tag for d in rules.delimiters)
        assert tag == tag.strip(rules.strip_chars)
        assert tag


@given(st.lists(st.text(alphabet="abcxyz 12", min_size=1, max_size=8), min_size=2, max_size=2, unique=True))
def test_render_injective_on_quoted_slots(values):
    t = PromptTemplate('"title" is "{title}"')
    a, b = (render(t, Entity("e", {"title": v})) for v in values)
    assert a != b
