import pytest
from hypothesis import given, strategies as st

from agentspec.errors import InvalidName, UnboundPlaceholder, UnclosedPlaceholder
from agentspec.templating import Template, extract_placeholders, render

REQUEST = "You are a great assistant. Please help the user with this request: {{request}}"


@pytest.mark.parametrize("raw, names", [
    (REQUEST, ["request"]),
    ("{{prompt}}", ["prompt"]),
    ("no holes", []),
    ("{{a}} and {{a}}", ["a"]),
    ("{{b}}{{a}}{{b}}", ["b", "a"]),
    ("{{ spaced }}", ["spaced"]),
])
def test_extract(raw, names):
    assert extract_placeholders(raw) == names


@pytest.mark.parametrize("raw, exc", [
    ("{{open", UnclosedPlaceholder),
    ("ok {{a}} then {{", UnclosedPlaceholder),
    ("{{1abc}}", InvalidName),
    ("{{a-b}}", InvalidName),
    ("{{}}", InvalidName),
])
def test_extract_errors(raw, exc):
    with pytest.raises(exc):
        extract_placeholders(raw)


def test_render_examples():
    assert render("{{prompt}}", {"prompt": "hi"}) == "hi"
    expected = REQUEST.replace("{{request}}", "capital of France?")
    assert render(REQUEST, {"request": "capital of France?"}) == expected
    assert render("{{ x }}!", {"x": "y"}) == "y!"


def test_render_non_strings_as_canonical_json():
    assert render("{{v}}", {"v": {"b": 1, "a": [1, 2]}}) == '{"a":[1,2],"b":1}'
    assert render("{{n}}/{{t}}", {"n": 3, "t": True}) == "3/true"


def test_unbound():
    with pytest.raises(UnboundPlaceholder) as info:
        render("{{x}}", {})
    assert info.value.name == "x"


def test_template_object():
    t = Template("{{a}} {{b}} {{a}}")
    assert t.placeholders == ("a", "b")
    assert t.render({"a": 1, "b": "x"}) == "1 x 1"


names = st.from_regex(r"[A-Za-z_][A-Za-z0-9_]{0,6}", fullmatch=True)
plain = st.text(st.characters(blacklist_characters="{}"), max_size=8)


@st.composite
def templates(draw):
    parts = draw(st.lists(st.tuples(plain, names), max_size=5))
    tail = draw(plain)
    return "".join(f"{text}{{{{{name}}}}}" for text, name in parts) + tail, [n for _, n in parts]


@given(templates(), st.text(st.characters(blacklist_characters="{}"), max_size=5))
def test_fully_bound_render_has_no_placeholders(template, value):
    raw, used = template
    assert extract_placeholders(raw) == list(dict.fromkeys(used))
    assert "{{" not in render(raw, {n: value for n in used})


@given(templates())
def test_identity_markers_reconstruct(template):
    raw, _ = template
    assert render(raw, {n: "{{" + n + "}}" for n in extract_placeholders(raw)}) == raw
