import pytest
from hypothesis import given
from hypothesis import strategies as st

from gtcycle.graph_codec import (
    DELIMITERS,
    G2T_TOKEN,
    MAX_TRIPLES,
    RESERVED_SUBSTRINGS,
    T2G_TOKEN,
    CodecError,
    KnowledgeGraph,
    NoTriplesRecoverable,
    Triple,
    linearize_graph,
    parse_graph,
    prefix_task,
)

PALAU = KnowledgeGraph(
    (
        Triple("Palau", "capital", "Ngerulmud"),
        Triple("Palau", "located in", "Pacific Ocean"),
    )
)


def test_markers_and_limit():
    assert DELIMITERS == ("<S>", "<P>", "<O>")
    assert MAX_TRIPLES == 6


def test_task_token_surfaces():
    assert G2T_TOKEN.surface == "generate text:"
    assert T2G_TOKEN.surface == "generate graph:"
    assert G2T_TOKEN.variant == "G2T"
    assert T2G_TOKEN.variant == "T2G"


def test_linearize_single_triple():
    g = KnowledgeGraph((Triple("Palau", "capital", "Ngerulmud"),))
    assert linearize_graph(g) == "<S> Palau <P> capital <O> Ngerulmud"


def test_linearize_multi_triple():
    assert linearize_graph(PALAU) == (
        "<S> Palau <P> capital <O> Ngerulmud "
        "<S> Palau <P> located in <O> Pacific Ocean"
    )


def test_parse_exact_round_trip():
    assert parse_graph(linearize_graph(PALAU)) == PALAU


@pytest.mark.parametrize("bad", ["", " ", "x ", " x", "a\nb", "a\tb"])
def test_field_whitespace_rules(bad):
    with pytest.raises(CodecError):
        Triple(bad, "p", "o")


@pytest.mark.parametrize("reserved", RESERVED_SUBSTRINGS)
def test_fields_reject_reserved_substrings(reserved):
    with pytest.raises(CodecError):
        Triple("s", f"has {reserved} inside", "o")


def test_graph_arity_bounds():
    with pytest.raises(CodecError):
        KnowledgeGraph(())
    seven = tuple(Triple("s", "p", f"o{i}") for i in range(7))
    with pytest.raises(CodecError):
        KnowledgeGraph(seven)
    assert len(KnowledgeGraph(seven[:6])) == 6


def test_graph_items_must_be_triples():
    with pytest.raises(CodecError):
        KnowledgeGraph((("s", "p", "o"),))


def test_parse_drops_trailing_incomplete_block():
    line = "<S> Palau <P> capital <O> Ngerulmud <S> Palau <P> dangling"
    assert parse_graph(line) == KnowledgeGraph(
        (Triple("Palau", "capital", "Ngerulmud"),)
    )


def test_parse_drops_block_with_empty_field():
    line = "<S> Palau <P> <O> Ngerulmud <S> Palau <P> capital <O> Ngerulmud"
    assert parse_graph(line) == KnowledgeGraph(
        (Triple("Palau", "capital", "Ngerulmud"),)
    )


def test_parse_ignores_leading_junk():
    line = "some chatter first <S> Palau <P> capital <O> Ngerulmud"
    assert parse_graph(line) == KnowledgeGraph(
        (Triple("Palau", "capital", "Ngerulmud"),)
    )


def test_parse_truncates_past_sixth_block():
    line = " ".join(f"<S> s <P> p <O> o{i}" for i in range(9))
    parsed = parse_graph(line)
    assert len(parsed) == 6
    assert parsed.triples[-1].object == "o5"


@pytest.mark.parametrize("junk", ["", "no markers at all", "<S> only subject", "<P> x <O> y"])
def test_parse_nothing_recoverable(junk):
    with pytest.raises(NoTriplesRecoverable):
        parse_graph(junk)


def test_no_triples_recoverable_is_codec_error():
    assert issubclass(NoTriplesRecoverable, CodecError)


def test_prefix_task():
    assert prefix_task(G2T_TOKEN, "<S> a <P> b <O> c") == (
        "generate text: <S> a <P> b <O> c"
    )
    assert prefix_task(T2G_TOKEN, "Palau is a country.") == (
        "generate graph: Palau is a country."
    )


def test_prefix_task_refuses_stacking():
    once = prefix_task(T2G_TOKEN, "some text")
    for token in (G2T_TOKEN, T2G_TOKEN):
        with pytest.raises(CodecError):
            prefix_task(token, once)


def _valid_field(value: str) -> bool:
    try:
        _ = Triple(value, "p", "o")
        return True
    except CodecError:
        return False


field_strategy = (
    st.text(
        alphabet=st.sampled_from("abcdefgXYZ0123456789 .,()<>|-"),
        min_size=1,
        max_size=20,
    )
    .map(str.strip)
    .filter(_valid_field)
)

triple_strategy = st.builds(Triple, field_strategy, field_strategy, field_strategy)


@given(st.lists(triple_strategy, min_size=1, max_size=MAX_TRIPLES))
def test_round_trip_property(triples):
    graph = KnowledgeGraph(tuple(triples))
    assert parse_graph(linearize_graph(graph)) == graph


@given(st.lists(triple_strategy, min_size=1, max_size=MAX_TRIPLES))
def test_linearization_is_single_line(triples):
    line = linearize_graph(KnowledgeGraph(tuple(triples)))
    assert "\n" not in line
    assert line.count("<S>") == len(triples)
