import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from avfusion.graph import (GraphError, Grammar, Lexicon, build_decode_graph, build_grammar_fst,
                            build_lexicon_fst, read_corpus, read_graph_dir, read_lexicon,
                            write_graph_dir)
from avfusion.hmm import Modality, build_phone_loop, fuse_hmms
from avfusion.viterbi import WfstFusionWeights, viterbi_decode
from avfusion.wfst import compose, identity_fst, linear_fst, shortest_path, write_text

from oracles import language, relation, viterbi_oracle
from toys import one_hot_emissions, random_decode_graph


def words_of(lex, *names):
    return tuple(lex.word_symbols.find(n) for n in names)


def test_single_word_lexicon():
    lex = Lexicon.build([("go", ("g", "o"))], ["g", "o"])
    rel = relation(build_lexicon_fst(lex), 2)
    g, o = lex.phone_symbols.find("g"), lex.phone_symbols.find("o")
    assert rel[((g, o), words_of(lex, "go"))] == 0.0
    assert rel[((), ())] == 0.0
    assert set(rel) == {((), ()), ((g, o), words_of(lex, "go"))}


def test_shared_prefix_lexicon_relation():
    lex = Lexicon.build([("ga", ("g", "a")), ("go", ("g", "o"))], ["a", "g", "o"])
    f = build_lexicon_fst(lex)
    assert len(f.arcs(f.start)) == 1
    prons = {"ga": ("g", "a"), "go": ("g", "o")}
    ph = lex.phone_symbols.find
    expected = {((), ()): 0.0}
    for n in (1, 2):
        for seq in np.ndindex(*(2,) * n):
            names = [("ga", "go")[i] for i in seq]
            il = tuple(ph(p) for w in names for p in prons[w])
            expected[(il, words_of(lex, *names))] = 0.0
    assert relation(f, 4) == expected


def test_lexicon_duplicates_collapse():
    lex = Lexicon.build([("go", ("g", "o")), ("go", ("g", "o"))], ["g", "o"])
    assert lex.entries == (("go", ("g", "o")),)
    f = build_lexicon_fst(lex)
    assert f.num_arcs() == build_lexicon_fst(Lexicon.build([("go", "go")], ["g", "o"])).num_arcs()


def test_lexicon_errors():
    with pytest.raises(GraphError):
        Lexicon.build([("go", ())], ["g"])
    with pytest.raises(GraphError):
        Lexicon.build([("go", ("g", "x"))], ["g"])
    with pytest.raises(GraphError):
        Lexicon.build([("</s>", ("g",))], ["g"])
    with pytest.raises(GraphError):
        read_lexicon("go\n")


def test_lexicon_and_corpus_files():
    assert read_lexicon("go g o\n\nat ae t\n") == [("go", ("g", "o")), ("at", ("ae", "t"))]
    assert read_corpus("a b\n\n c \n") == [("a", "b"), ("c",)]


def test_unigram_add_one_arithmetic():
    # counts a=2, b=2, </s>=2 over 6 events; add-one over {a, b, </s>}
    g = Grammar.estimate(["a b", "a b"], 1)
    p = (2 + 1) / (6 + 3)
    f = g.to_fst()
    assert f.num_states == 1
    for arc in f.arcs(f.start):
        assert arc.weight == pytest.approx(-math.log(p), abs=1e-12)
    assert f.final(f.start) == pytest.approx(-math.log(p), abs=1e-12)


def test_unigram_single_word_corpus():
    g = Grammar.estimate(["w"], 1)
    f = g.to_fst()
    (arc,) = f.arcs(f.start)
    assert arc.weight == pytest.approx(-math.log(2 / 4))
    w = f.isymbols.find("w")
    assert language(f, 3) == {(w,) * k for k in range(4)}


def test_bigram_prefers_corpus_order():
    corpus = ["a b", "a b", "a b", "b a"]
    g = Grammar.estimate(corpus, 2)
    f = g.to_fst()
    syms = f.isymbols

    def path_cost(sentence):
        ids = [syms.find(w) for w in sentence.split()]
        return shortest_path(compose(linear_fst(ids, isymbols=syms), f)).weight

    # hand counts: p(a|<s>) = p(b|a) = p(</s>|b) = 4/7 and the reverse 2/7 each
    assert path_cost("a b") == pytest.approx(-3 * math.log(4 / 7), abs=1e-12)
    assert path_cost("b a") == pytest.approx(-3 * math.log(2 / 7), abs=1e-12)
    assert path_cost("a b") < path_cost("b a")
    assert g.sentence_cost(("a", "b")) == pytest.approx(path_cost("a b"), abs=1e-12)


@given(st.lists(st.lists(st.sampled_from("xyz"), min_size=1, max_size=4), min_size=1,
                max_size=5), st.integers(1, 4))
@settings(max_examples=60, deadline=None)
def test_grammar_states_are_distributions(corpus, order):
    f = build_grammar_fst([" ".join(s) for s in corpus], order)
    for s in f.states():
        total = sum(math.exp(-a.weight) for a in f.arcs(s)) + math.exp(-f.final(s))
        assert abs(total - 1.0) < 1e-9


def test_grammar_backoff_to_seen_suffix():
    g = Grammar.estimate(["a b c"], 3)
    assert g.reduce(("c", "a")) == ("a",)
    assert g.reduce(("x", "y")) == ()
    assert g.start_history == ("<s>", "<s>")


def test_grammar_errors():
    with pytest.raises(GraphError):
        Grammar.estimate([], 2)
    with pytest.raises(GraphError):
        Grammar.estimate(["a"], 6)
    with pytest.raises(GraphError):
        Grammar.estimate(["a q"], 2, ["a"])


def single_word_graph(fused=False):
    lex = Lexicon.build([("w", ("p",))], ["p"])
    h = build_phone_loop(["p"], phone_symbols=lex.phone_symbols)
    if fused:
        h = fuse_hmms(h, build_phone_loop(["p"], modality=Modality.VISUAL))
    g = Grammar.estimate(["w"], 1).to_fst(lex.word_symbols)
    return build_decode_graph(h, build_lexicon_fst(lex), g)


def test_forced_alignment_single_word():
    graph = single_word_graph()
    r = viterbi_decode(graph, one_hot_emissions([1, 2, 3], 3, 0), WfstFusionWeights(1.0))
    assert r.words == ("w",)
    assert r.occupancy == (3, 0)


def test_identity_grammar_keeps_lexicon_relation():
    lex = Lexicon.build([("ga", ("g", "a")), ("o", ("o",))], ["a", "g", "o"])
    l = build_lexicon_fst(lex)
    assert relation(compose(l, identity_fst(lex.word_symbols)), 4) == relation(l, 4)


def two_word_world():
    lex = Lexicon.build([("ab", ("a", "b")), ("ba", ("b", "a"))], ["a", "b"])
    g = Grammar.estimate(["ab ba", "ba"], 2).to_fst(lex.word_symbols)
    lg = build_lexicon_fst(lex)
    audio = build_phone_loop(["a", "b"], phone_symbols=lex.phone_symbols)
    fused = fuse_hmms(audio, build_phone_loop(["a", "b"], modality=Modality.VISUAL))
    return lex, build_decode_graph(audio, lg, g), build_decode_graph(fused, lg, g)


def test_fused_graph_has_pure_modality_paths():
    lex, _, fused = two_word_world()
    t = fused.table
    for word, pron in lex.entries:
        for mod in Modality:
            pdfs = [t.pdf_for(p, pos, mod) for p in pron for pos in (1, 2, 3)]
            obs = one_hot_emissions(pdfs, t.n_audio_pdfs, t.n_visual_pdfs)
            res = viterbi_oracle(fused, obs, 0.5)
            assert res is not None and res[1] == (word,)
            expected = (len(pdfs), 0) if mod is Modality.AUDIO else (0, len(pdfs))
            assert res[2] == expected


def test_output_languages_match_and_cover_corpus():
    lex, audio, fused = two_word_world()
    la = language(audio.fst, 3, side="output")
    assert la == language(fused.fst, 3, side="output")
    for sent in (("ab", "ba"), ("ba",)):
        assert words_of(lex, *sent) in la


@pytest.mark.parametrize("seed", range(15))
def test_random_worlds_cover_corpus(seed):
    from toys import random_corpus, random_lexicon, random_transitions
    rng = np.random.default_rng(seed)
    phones, lex = random_lexicon(rng)
    corpus = random_corpus(rng, lex.words)
    h = build_phone_loop(phones, random_transitions(rng), phone_symbols=lex.phone_symbols)
    v = build_phone_loop(phones, random_transitions(rng), Modality.VISUAL)
    g = Grammar.estimate(corpus, int(rng.integers(1, 3)), lex.words).to_fst(lex.word_symbols)
    l = build_lexicon_fst(lex)
    a_graph = build_decode_graph(h, l, g)
    f_graph = build_decode_graph(fuse_hmms(h, v), l, g)
    la = language(a_graph.fst, 2, side="output")
    assert la == language(f_graph.fst, 2, side="output")
    for sent in corpus:
        assert words_of(lex, *sent) in la


def test_input_labels_are_transition_ids():
    rng = np.random.default_rng(3)
    graph = random_decode_graph(rng, fused=True)
    for s in graph.fst.states():
        for arc in graph.fst.arcs(s):
            assert arc.ilabel == 0 or arc.ilabel in graph.table.entries
            assert arc.olabel == 0 or arc.olabel in range(1, len(graph.word_symbols) + 1)


def test_graph_build_is_deterministic():
    dumps = {write_text(two_word_world()[2].fst) for _ in range(3)}
    assert len(dumps) == 1


def test_graph_dir_round_trip(tmp_path):
    _, _, fused = two_word_world()
    write_graph_dir(fused, tmp_path)
    back = read_graph_dir(tmp_path)
    assert write_text(back.fst) == write_text(fused.fst)
    assert back.table.entries == fused.table.entries
    assert back.word_symbols == fused.word_symbols
    assert back.phone_symbols == fused.phone_symbols
    (tmp_path / "graph.fst").write_text("0 1 x\n")
    with pytest.raises(GraphError):
        read_graph_dir(tmp_path)
