"""Graph extraction rules, tree validation and the CoNLL-U round trip."""

import pytest

from univse.semparse import (
    ROOT,
    AnnotatedToken,
    CaptionParseError,
    ConlluFormatError,
    SemanticGraph,
    load_conllu,
    parse_caption,
    validate_tree,
    write_conllu,
)


def tok(surface, pos, head, dep, lemma=None):
    return AnnotatedToken(surface=surface, lemma=lemma or surface, pos=pos, head=head, dep=dep)


def clock_sentence():
    # "a white clock above a wooden table on a wall"
    return [
        tok("a", "DET", 2, "det"),
        tok("white", "ADJ", 2, "amod"),
        tok("clock", "NOUN", ROOT, "root"),
        tok("above", "ADP", 2, "prep"),
        tok("a", "DET", 6, "det"),
        tok("wooden", "ADJ", 6, "amod"),
        tok("table", "NOUN", 3, "pobj"),
        tok("on", "ADP", 2, "prep"),
        tok("a", "DET", 9, "det"),
        tok("wall", "NOUN", 7, "pobj"),
    ]


def test_clock_sentence_graph_exact():
    graph = parse_caption(clock_sentence())
    assert graph.objects == {"clock", "wall", "table"}
    assert graph.attr_pairs == {("white", "clock"), ("wooden", "table")}
    assert set(graph.rel_triples) == {("clock", "above", "table"), ("clock", "on", "wall")}
    assert len(graph.rel_triples) == 2


def test_triples_keep_token_order():
    graph = parse_caption(clock_sentence())
    # "above" precedes "on" in the sentence
    assert graph.rel_triples == [("clock", "above", "table"), ("clock", "on", "wall")]


def test_determiners_never_enter_the_graph():
    graph = parse_caption(clock_sentence())
    for obj in graph.objects:
        assert obj != "a"


def test_verb_rule_pairs_subject_with_object():
    tokens = [
        tok("dog", "NOUN", 1, "nsubj"),
        tok("chases", "VERB", ROOT, "root", lemma="chase"),
        tok("cat", "NOUN", 1, "obj"),
    ]
    graph = parse_caption(tokens)
    assert graph.rel_triples == [("dog", "chase", "cat")]


def test_case_marker_convention_recovered():
    # ADP hanging off the dependent noun instead of heading it
    tokens = [
        tok("cup", "NOUN", ROOT, "root"),
        tok("on", "ADP", 2, "case"),
        tok("shelf", "NOUN", 0, "nmod"),
    ]
    graph = parse_caption(tokens)
    assert graph.rel_triples == [("cup", "on", "shelf")]


def test_adjective_without_noun_head_is_dropped():
    tokens = [
        tok("sky", "NOUN", ROOT, "root"),
        tok("blue", "ADJ", 2, "amod"),
        tok("is", "VERB", 0, "cop"),
    ]
    graph = parse_caption(tokens)
    assert graph.attr_pairs == set()


def test_graph_is_closed(tiny_synth):
    for rec in tiny_synth.corpus.records:
        assert rec.graph.is_closed()


class TestTreeValidation:
    def test_missing_root(self):
        tokens = [tok("a", "DET", 1, "det"), tok("dog", "NOUN", 0, "nmod")]
        with pytest.raises(CaptionParseError, match="no root"):
            validate_tree(tokens)

    def test_two_roots(self):
        tokens = [tok("dog", "NOUN", ROOT, "root"), tok("cat", "NOUN", ROOT, "root")]
        with pytest.raises(CaptionParseError, match="multiple roots"):
            validate_tree(tokens)

    def test_self_loop(self):
        tokens = [tok("dog", "NOUN", ROOT, "root"), tok("odd", "ADJ", 1, "amod")]
        with pytest.raises(CaptionParseError, match="self-loop"):
            validate_tree(tokens)

    def test_cycle(self):
        tokens = [
            tok("dog", "NOUN", ROOT, "root"),
            tok("x", "OTHER", 2, "dep"),
            tok("y", "OTHER", 1, "dep"),
        ]
        with pytest.raises(CaptionParseError, match="cycle"):
            validate_tree(tokens)

    def test_head_out_of_range(self):
        tokens = [tok("dog", "NOUN", ROOT, "root"), tok("big", "ADJ", 9, "amod")]
        with pytest.raises(CaptionParseError, match="out of range"):
            validate_tree(tokens)

    def test_error_names_the_token(self):
        tokens = [tok("dog", "NOUN", ROOT, "root"), tok("big", "ADJ", 9, "amod")]
        with pytest.raises(CaptionParseError) as err:
            validate_tree(tokens)
        assert err.value.token_index == 1


class TestGraphSerialization:
    def test_json_round_trip(self):
        graph = parse_caption(clock_sentence())
        again = SemanticGraph.from_json(graph.to_json())
        assert again.same_content(graph)

    def test_same_content_ignores_triple_order(self):
        a = SemanticGraph(objects={"x", "y"}, rel_triples=[("x", "on", "y"), ("y", "on", "x")])
        b = SemanticGraph(objects={"x", "y"}, rel_triples=[("y", "on", "x"), ("x", "on", "y")])
        assert a.same_content(b)

    def test_same_content_detects_missing_triple(self):
        a = SemanticGraph(objects={"x", "y"}, rel_triples=[("x", "on", "y")])
        b = SemanticGraph(objects={"x", "y"}, rel_triples=[])
        assert not a.same_content(b)


class TestConllu:
    def test_round_trip(self, tmp_path):
        groups = [("cap0", clock_sentence())]
        path = tmp_path / "sents.conllu"
        write_conllu(str(path), groups)
        loaded = load_conllu(str(path))
        assert len(loaded) == 1
        sent_id, tokens = loaded[0]
        assert sent_id == "cap0"
        assert tokens == clock_sentence()

    def test_parse_survives_round_trip(self, tmp_path):
        path = tmp_path / "sents.conllu"
        write_conllu(str(path), [("c", clock_sentence())])
        _, tokens = load_conllu(str(path))[0]
        assert parse_caption(tokens).same_content(parse_caption(clock_sentence()))

    def test_bad_column_count(self, tmp_path):
        path = tmp_path / "bad.conllu"
        path.write_text("1\tdog\tdog\tNOUN\n", encoding="utf-8")
        with pytest.raises(ConlluFormatError, match="columns"):
            load_conllu(str(path))

    def test_non_contiguous_ids(self, tmp_path):
        path = tmp_path / "bad.conllu"
        path.write_text(
            "1\tdog\tdog\tNOUN\t_\t_\t0\troot\t_\t_\n"
            "3\tbig\tbig\tADJ\t_\t_\t1\tamod\t_\t_\n\n",
            encoding="utf-8")
        with pytest.raises(ConlluFormatError, match="non-contiguous"):
            load_conllu(str(path))

    def test_multiword_lines_skipped(self, tmp_path):
        path = tmp_path / "mwt.conllu"
        path.write_text(
            "# sent_id = s1\n"
            "1-2\tdel\t_\t_\t_\t_\t_\t_\t_\t_\n"
            "1\tdog\tdog\tNOUN\t_\t_\t0\troot\t_\t_\n"
            "2\tbig\tbig\tADJ\t_\t_\t1\tamod\t_\t_\n\n",
            encoding="utf-8")
        loaded = load_conllu(str(path))
        assert loaded[0][0] == "s1"
        assert len(loaded[0][1]) == 2

    def test_unknown_pos_maps_to_other(self, tmp_path):
        path = tmp_path / "pos.conllu"
        path.write_text("1\tvery\tvery\tADV\t_\t_\t0\troot\t_\t_\n\n", encoding="utf-8")
        _, tokens = load_conllu(str(path))[0]
        assert tokens[0].pos == "OTHER"
