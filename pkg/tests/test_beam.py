import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from avfusion.beam import (CHARS, BeamError, BeamStats, Hypothesis, StepScorer, beam_search,
                           lambda_free_decode, origin_fraction, shallow_fusion_decode)
from avfusion.hmm import Modality

from oracles import beam_oracle
from toys import ToyScorer, beam_case, toy_alphabet


class FixedScorer:
    """Probability one on a fixed token string, then on ``end``."""

    def __init__(self, tokens, n, end):
        self.tokens = tuple(tokens)
        self.num_classes = n
        self.end = end

    def log_probs(self, handle, prefix):
        c = self.tokens[len(prefix)] if len(prefix) < len(self.tokens) else self.end
        out = np.full(self.num_classes, -np.inf)
        out[c] = 0.0
        return out


class UniformScorer:
    def __init__(self, n):
        self.num_classes = n

    def log_probs(self, handle, prefix):
        return np.full(self.num_classes, -math.log(self.num_classes))


def steps(sa, sv, mode, lam):
    def step(prefix):
        la, lv = sa.log_probs(0, prefix), sv.log_probs(0, prefix)
        if mode == "plain":
            return la
        if mode == "shallow":
            return lam * la + (1.0 - lam) * lv
        return np.maximum(la, lv)
    return step


def run(mode, sa, sv, alphabet, width, max_len, lam):
    if mode == "plain":
        return beam_search(sa, 0, width, max_len, alphabet)
    if mode == "shallow":
        return shallow_fusion_decode(sa, sv, 0, 0, lam, width, max_len, alphabet)
    return lambda_free_decode(sa, sv, 0, 0, width, max_len, alphabet)


@pytest.mark.parametrize("mode", ["plain", "shallow", "max"])
@pytest.mark.parametrize("seed", range(40))
def test_full_width_matches_enumeration(seed, mode):
    sa, sv, alphabet, max_len, lam = beam_case(seed)
    n = sa.num_classes
    ref = beam_oracle(steps(sa, sv, mode, lam), n, alphabet.end, max_len, alphabet.start)
    width = n ** max_len
    if ref is None:
        with pytest.raises(BeamError):
            run(mode, sa, sv, alphabet, width, max_len, lam)
        return
    h = run(mode, sa, sv, alphabet, width, max_len, lam)
    assert h.tokens == ref[0]
    assert h.score == ref[1]


def test_three_class_width_two():
    # hand-set distributions over {a, b, </s>}
    table = {(): [0.5, 0.3, 0.2], (0,): [0.1, 0.1, 0.8], (1,): [0.6, 0.35, 0.05],
             (1, 0): [0.05, 0.05, 0.9], (1, 1): [0.2, 0.2, 0.6]}

    class Hand:
        num_classes = 3

        def log_probs(self, handle, prefix):
            return np.log(np.array(table.get(tuple(prefix), [1 / 3] * 3)))

    alphabet = toy_alphabet(3)
    h = beam_search(Hand(), 0, 2, 3, alphabet)
    ref = beam_oracle(lambda p: Hand().log_probs(0, p), 3, 2, 3)
    assert h.tokens == ref[0] == (0, 2)
    assert h.score == pytest.approx(math.log(0.5 * 0.8))


def greedy(s, alphabet, max_len):
    tokens = ()
    for _ in range(max_len):
        scores = np.array(s.log_probs(0, tokens))
        if alphabet.start is not None:
            scores[alphabet.start] = -np.inf
        c = int(np.argmax(scores))
        tokens += (c,)
        if c == alphabet.end:
            break
    return tokens


@pytest.mark.parametrize("seed", range(30))
def test_width_one_is_greedy(seed):
    s = ToyScorer(4, seed, coarse=bool(seed % 2))
    alphabet = toy_alphabet(4, with_start=bool(seed % 3 == 0))
    assert beam_search(s, 0, 1, 6, alphabet).tokens == greedy(s, alphabet, 6)


@pytest.mark.parametrize("width", [1, 2, 5, 29])
def test_fixed_string_scorer(width):
    s = FixedScorer(CHARS.encode("bin blue"), len(CHARS), CHARS.end)
    h = beam_search(s, 0, width, 50)
    assert CHARS.decode(h.tokens) == "bin blue"
    assert h.tokens[-1] == CHARS.end and h.finished and not h.forced
    assert h.score == 0.0


@pytest.mark.parametrize("seed", range(30))
def test_shallow_degenerate_lambdas(seed):
    sa, sv, alphabet, max_len, _ = beam_case(seed)
    for lam, single in ((1.0, sa), (0.0, sv)):
        try:
            ref = beam_search(single, 0, 3, max_len, alphabet)
        except BeamError:
            with pytest.raises(BeamError):
                shallow_fusion_decode(sa, sv, 0, 0, lam, 3, max_len, alphabet)
            continue
        h = shallow_fusion_decode(sa, sv, 0, 0, lam, 3, max_len, alphabet)
        assert h.tokens == ref.tokens and h.score == ref.score


@pytest.mark.parametrize("seed", range(30))
def test_identical_scorers(seed):
    s = ToyScorer(4, seed)
    alphabet = toy_alphabet(4)
    ref = beam_search(s, 0, 3, 5, alphabet)
    for lam in (0.2, 0.5, 0.9):
        assert shallow_fusion_decode(s, s, 0, 0, lam, 3, 5, alphabet).tokens == ref.tokens
    h = lambda_free_decode(s, s, 0, 0, 3, 5, alphabet)
    assert h.tokens == ref.tokens and h.score == ref.score
    assert all(o is Modality.AUDIO for o in h.origins)


def test_uniform_audio_one_hot_visual():
    sv = FixedScorer(CHARS.encode("red now"), len(CHARS), CHARS.end)
    h = lambda_free_decode(UniformScorer(len(CHARS)), sv, 0, 0, 4, 30)
    assert CHARS.decode(h.tokens) == "red now"
    assert set(h.origins) == {Modality.VISUAL}
    assert origin_fraction(h) == 0.0


@given(st.integers(0, 10_000), st.integers(0, 3))
@settings(max_examples=100, deadline=None)
def test_max_fusion_dominance(seed, plen):
    sa, sv = ToyScorer(5, seed), ToyScorer(5, seed + 1, zeros=True)
    prefix = tuple(range(plen))
    la, lv = sa.log_probs(0, prefix), sv.log_probs(0, prefix)
    fused = np.maximum(la, lv)
    assert (fused >= la).all() and (fused >= lv).all()
    tops = {int(np.argmax(la)), int(np.argmax(lv))}
    assert max(fused[c] for c in tops) == fused.max()


@pytest.mark.parametrize("seed", range(20))
def test_modality_top_class_is_expanded(seed):
    # each scorer's top class for the committed prefix is ranked at every step
    sa, sv = ToyScorer(4, seed, zeros=True), ToyScorer(4, seed + 100, zeros=True)
    alphabet = toy_alphabet(4)
    ranked = []

    class Recording:
        num_classes = 4

        def __init__(self, inner):
            self.inner = inner

        def log_probs(self, handle, prefix):
            out = self.inner.log_probs(handle, prefix)
            ranked.append((tuple(prefix), int(np.argmax(out)), out))
            return out

    stats = BeamStats()
    lambda_free_decode(Recording(sa), Recording(sv), 0, 0, 2, 4, alphabet, stats)
    assert stats.expanded_audio + stats.expanded_visual > 0
    for i in range(0, len(ranked), 2):
        (pa, ca, la), (pv, cv, lv) = ranked[i], ranked[i + 1]
        assert pa == pv
        fused = np.maximum(la, lv)
        assert fused[ca] >= la[ca] and fused[cv] >= lv[cv]
        assert np.isfinite(fused[ca]) and np.isfinite(fused[cv])


@pytest.mark.parametrize("decoder", ["shallow", "max"])
@pytest.mark.parametrize("seed", range(10))
def test_shared_prefix_contract(seed, decoder):
    sa, sv = ToyScorer(4, seed), ToyScorer(4, seed + 1)
    alphabet = toy_alphabet(4)
    if decoder == "shallow":
        shallow_fusion_decode(sa, sv, "a", "v", 0.4, 3, 5, alphabet)
    else:
        lambda_free_decode(sa, sv, "a", "v", 3, 5, alphabet)
    assert sa.calls and sa.calls == sv.calls


@pytest.mark.parametrize("seed", range(20))
def test_hypothesis_invariants(seed):
    sa, sv, alphabet, max_len, _ = beam_case(seed)
    try:
        h = lambda_free_decode(sa, sv, 0, 0, 3, max_len, alphabet)
    except BeamError:
        return
    assert len(h.origins) == len(h.tokens)
    score = 0.0
    for i, c in enumerate(h.tokens):
        la, lv = sa.log_probs(0, h.tokens[:i]), sv.log_probs(0, h.tokens[:i])
        score = score + max(la[c], lv[c])
        assert h.origins[i] is (Modality.VISUAL if lv[c] > la[c] else Modality.AUDIO)
    assert h.score == score
    assert alphabet.start not in h.tokens


def test_forced_finish_at_max_len():
    class NoEnd:
        num_classes = 3

        def log_probs(self, handle, prefix):
            return np.log(np.array([0.6, 0.4, 0.0]))

    with np.errstate(divide="ignore"):
        h = beam_search(NoEnd(), 0, 2, 4, toy_alphabet(3))
    assert h.forced and len(h.tokens) == 4 and h.tokens == (0, 0, 0, 0)


def test_stats_count_kept_entries():
    # traced by hand: width 2 keeps (0) V, (1) A; then (0 1) V, (0 0) A;
    # then (0 1 end) V and (0 0 end) V, both finished
    stats = BeamStats()
    sv = FixedScorer((0, 1), 3, 2)
    h = lambda_free_decode(UniformScorer(3), sv, 0, 0, 2, 5, toy_alphabet(3), stats)
    assert h.tokens == (0, 1, 2)
    assert (stats.steps, stats.kept_visual, stats.kept_audio) == (3, 4, 2)
    assert stats.expanded_audio + stats.expanded_visual == 3 + 6 + 6
    assert stats.kept_fraction() == pytest.approx(2 / 6)


def test_errors():
    s4, s3 = ToyScorer(4, 0), ToyScorer(3, 0)
    a4 = toy_alphabet(4)
    with pytest.raises(BeamError):
        beam_search(s4, 0, 0, 4, a4)
    with pytest.raises(BeamError):
        beam_search(s4, 0, 2, 0, a4)
    with pytest.raises(BeamError):
        beam_search(s3, 0, 2, 4, a4)
    with pytest.raises(BeamError):
        shallow_fusion_decode(s4, s3, 0, 0, 0.5, 2, 4, a4)
    with pytest.raises(BeamError):
        lambda_free_decode(s4, s3, 0, 0, 2, 4, a4)
    with pytest.raises(BeamError):
        shallow_fusion_decode(s4, s4, 0, 0, 1.5, 2, 4, a4)

    class Dead:
        num_classes = 4

        def log_probs(self, handle, prefix):
            return np.full(4, -np.inf)

    with pytest.raises(BeamError):
        beam_search(Dead(), 0, 2, 4, a4)


def test_origin_fraction_examples():
    A, V = Modality.AUDIO, Modality.VISUAL
    assert origin_fraction(Hypothesis((1, 2, 3), 0.0, (A, A, A))) == 1.0
    assert origin_fraction(Hypothesis((1, 2, 3, 4), 0.0, (A, V, A, V))) == 0.5
    with pytest.raises(BeamError):
        origin_fraction(Hypothesis((), 0.0, ()))


def test_alphabet():
    assert len(CHARS) == 29
    assert CHARS.decode(CHARS.encode("a z ")) == "a z "
    with pytest.raises(BeamError):
        CHARS.encode("A")
    assert isinstance(ToyScorer(3, 0), StepScorer)
