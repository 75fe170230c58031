"""Synthetic stand-ins for trained audio and visual models.

A :class:`SyntheticWorld` fixes phones, lexicon and sentences. Utterances are
sampled as state-level alignments; emission matrices (for the WFST decoder)
and character scorers (for beam search) are then derived from the truth and
an SNR-controlled corruption level ``alpha(snr) = 1 / (1 + exp(snr / 4))``.

Corruption has two effects. Each frame (or character) is replaced by a
random one with probability ``confusion * alpha``, and the remaining
evidence is flattened toward uniform by weight ``alpha``. The visual side
uses the fixed level ``1 - visual_accuracy`` and its own random stream, so
it never depends on the SNR. Random draws are shared across SNR values
for a given utterance seed, so raising the SNR only ever removes
corruption.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Hashable, Optional, Sequence

import numpy as np

from .beam import CHARS, BeamError
from .graph import DecodeGraph, Grammar, Lexicon, build_decode_graph, build_lexicon_fst
from .hmm import (DEFAULT_TRANSITIONS, HmmGraph, Modality, TransitionTable, build_phone_loop,
                  fuse_hmms)
from .viterbi import EmissionSequence

DEFAULT_SHARPNESS = 0.3
DEFAULT_CONFUSION = 1.0
DEFAULT_CHAR_CONFUSION = 0.25
# probability mass a misread character takes from the clean distribution
MISREAD_WEIGHT = 0.6
DEFAULT_VISUAL_ACCURACY = 0.8
VISUAL_FRAME_RATIO = 4
MAX_DWELL = 6

# streams drawn from one utterance seed
_SENTENCE, _AUDIO, _VISUAL, _AUDIO_TEXT, _VISUAL_TEXT = range(5)


def snr_alpha(snr_db: float) -> float:
    """Corruption weight, strictly decreasing in SNR with ``alpha(0) = 0.5``."""
    x = snr_db / 4.0
    if x >= 0:
        e = math.exp(-x)
        return e / (1.0 + e)
    return 1.0 / (1.0 + math.exp(x))


@dataclass(frozen=True)
class SnrModel:
    snr_db: float
    visual_accuracy: float = DEFAULT_VISUAL_ACCURACY

    def __post_init__(self):
        if not 0.0 < self.visual_accuracy < 1.0:
            raise ValueError("visual_accuracy must lie in (0, 1)")

    @property
    def alpha(self) -> float:
        return snr_alpha(self.snr_db)

    @property
    def visual_alpha(self) -> float:
        return 1.0 - self.visual_accuracy


_GRID_SLOTS = (
    {"bin": "b ih n", "lay": "l ey", "place": "p l ey s", "set": "s eh t"},
    {"blue": "b l uw", "green": "g r iy n", "red": "r eh d", "white": "w ay t"},
    {"at": "ae t", "by": "b ay", "in": "ih n", "with": "w ih th"},
    {"now": "n aw", "soon": "s uw n", "again": "ax g eh n", "please": "p l iy z"},
)


@dataclass
class SyntheticWorld:
    """Phones, lexicon and sentences that fully determine a simulation.

    ``corpus`` trains the word grammar and the character bigram;
    ``eval_sentences`` are what utterances are sampled from.
    """

    phones: tuple[str, ...]
    lexicon: Lexicon
    corpus: tuple[tuple[str, ...], ...]
    eval_sentences: tuple[tuple[str, ...], ...]
    seed: int = 0
    order: int = 2
    transition_probs: tuple = DEFAULT_TRANSITIONS

    def __post_init__(self):
        vocab = set(self.lexicon.words)
        for s in itertools.chain(self.corpus, self.eval_sentences):
            missing = set(s) - vocab
            if missing:
                raise ValueError(f"sentence words missing from lexicon: {sorted(missing)}")
        if not self.eval_sentences:
            raise ValueError("world has no sentences to sample utterances from")

    @classmethod
    def default(cls, seed: int = 0, order: int = 2, heldout: float = 0.2,
                lm_includes_eval: bool = False) -> "SyntheticWorld":
        """Four-slot command grammar (command, colour, preposition, adverb).

        A seeded ``heldout`` fraction of the 256 sentences is kept out of the
        grammar corpus and used for evaluation.
        """
        prons = {w: tuple(p.split()) for slot in _GRID_SLOTS for w, p in slot.items()}
        phones = tuple(sorted({p for pron in prons.values() for p in pron}))
        sentences = list(itertools.product(*(sorted(slot) for slot in _GRID_SLOTS)))
        order_idx = np.random.default_rng([seed, 99]).permutation(len(sentences))
        n_eval = max(1, int(round(heldout * len(sentences))))
        eval_s = tuple(sentences[i] for i in sorted(order_idx[:n_eval]))
        train = tuple(sentences[i] for i in sorted(order_idx[n_eval:]))
        corpus = tuple(sentences) if lm_includes_eval else train
        lex = Lexicon.build(prons.items(), phones)
        return cls(phones, lex, corpus, eval_s, seed, order)

    @cached_property
    def audio_hmm(self) -> HmmGraph:
        return build_phone_loop(self.phones, self.transition_probs, Modality.AUDIO,
                                self.lexicon.phone_symbols)

    @cached_property
    def visual_hmm(self) -> HmmGraph:
        return build_phone_loop(self.phones, self.transition_probs, Modality.VISUAL,
                                self.lexicon.phone_symbols)

    @cached_property
    def fused_hmm(self) -> HmmGraph:
        return fuse_hmms(self.audio_hmm, self.visual_hmm)

    @cached_property
    def grammar(self) -> Grammar:
        return Grammar.estimate(self.corpus, self.order, self.lexicon.words)

    @cached_property
    def lexicon_fst(self):
        return build_lexicon_fst(self.lexicon)

    @cached_property
    def grammar_fst(self):
        return self.grammar.to_fst(self.lexicon.word_symbols)

    def decode_graph(self, kind: str) -> DecodeGraph:
        """``kind`` is ``audio``, ``visual`` or ``fused``."""
        cache = self.__dict__.setdefault("_graphs", {})
        if kind not in cache:
            h = {"audio": self.audio_hmm, "visual": self.visual_hmm, "fused": self.fused_hmm}[kind]
            cache[kind] = build_decode_graph(h, self.lexicon_fst, self.grammar_fst)
        return cache[kind]

    @cached_property
    def char_bigram(self) -> "CharBigram":
        return CharBigram.estimate(" ".join(s) for s in self.corpus)


@dataclass
class Alignment:
    words: tuple[str, ...]
    segments: tuple[tuple[str, int, int], ...]
    pdf_ids: np.ndarray
    key: tuple[int, ...] = field(repr=False)

    @property
    def T(self) -> int:
        return len(self.pdf_ids)

    @property
    def text(self) -> str:
        return " ".join(self.words)


def sample_utterance(world: SyntheticWorld, seed: int) -> Alignment:
    """Draw an evaluation sentence and geometric state dwell times.

    Dwell times have mean 2 frames and are capped at ``MAX_DWELL``.
    """
    key = (int(world.seed), int(seed))
    rng = np.random.default_rng([*key, _SENTENCE])
    words = world.eval_sentences[int(rng.integers(len(world.eval_sentences)))]
    table = world.audio_hmm.table
    pdf = table.pdf_map()
    segments = []
    frames = []
    for w in words:
        prons = world.lexicon.pronunciations(w)
        pron = prons[int(rng.integers(len(prons)))] if len(prons) > 1 else prons[0]
        for phone in pron:
            for pos in (1, 2, 3):
                dwell = int(min(rng.geometric(0.5), MAX_DWELL))
                segments.append((phone, pos, dwell))
                frames.extend([pdf[(phone, pos, Modality.AUDIO)]] * dwell)
    return Alignment(tuple(words), tuple(segments), np.array(frames, dtype=np.int64), key)


def _evidence_block(index: np.ndarray, n: int, alpha: float, sharpness: float) -> np.ndarray:
    """Rows of ``(1 - alpha) * softmax(sharpness * onehot) + alpha / n`` in log space."""
    if n == 0:
        return np.zeros((len(index), 0))
    e = math.exp(-sharpness) if sharpness < math.inf else 0.0
    z = 1.0 + (n - 1) * e
    hi = (1.0 - alpha) / z + alpha / n
    lo = (1.0 - alpha) * e / z + alpha / n
    rows = np.full((len(index), n), lo)
    rows[np.arange(len(index)), index] = hi
    with np.errstate(divide="ignore"):
        return np.log(rows)


def emit_observations(a: Alignment, snr: SnrModel, table: TransitionTable,
                      sharpness: float = DEFAULT_SHARPNESS, *,
                      confusion: float = DEFAULT_CONFUSION,
                      visual_ratio: int = VISUAL_FRAME_RATIO) -> EmissionSequence:
    """Concatenated audio and visual log-posterior rows for one utterance.

    The visual block is regenerated every ``visual_ratio`` frames and
    repeated in between (``visual_ratio=1`` disables this).
    """
    if sharpness <= 0:
        raise ValueError("sharpness must be positive")
    if not 0.0 <= confusion <= 1.0:
        raise ValueError("confusion must lie in [0, 1]")
    n, m = table.n_audio_pdfs, table.n_visual_pdfs
    T = a.T
    if T and (a.pdf_ids.min() < 1 or a.pdf_ids.max() > n):
        raise ValueError("alignment pdf ids fall outside the audio block of the table")

    ra = np.random.default_rng([*a.key, _AUDIO])
    u, repl = ra.random(T), ra.integers(0, max(n, 1), T)
    alpha = snr.alpha
    evidence = np.where(u < confusion * alpha, repl, a.pdf_ids - 1)
    blocks = [_evidence_block(evidence, n, alpha, sharpness)]

    if m:
        if m != n:
            raise ValueError(f"visual block has {m} pdfs, audio block {n}")
        pdfs = table.pdf_map()
        info = {i.pdf_id: i for i in table.entries.values()}
        to_visual = np.zeros(n + 1, dtype=np.int64)
        for p in range(1, n + 1):
            to_visual[p] = pdfs[(info[p].phone, info[p].position, Modality.VISUAL)] - n - 1
        rv = np.random.default_rng([*a.key, _VISUAL])
        uv, replv = rv.random(T), rv.integers(0, m, T)
        va = snr.visual_alpha
        vis = np.where(uv < confusion * va, replv, to_visual[a.pdf_ids])
        held = (np.arange(T) // visual_ratio) * visual_ratio
        blocks.append(_evidence_block(vis[held], m, va, sharpness))
    return EmissionSequence(np.hstack(blocks) if T else np.zeros((0, n + m)), n, m)


class CharBigram:
    """Add-one character bigram over the emittable classes (not ``<s>``)."""

    def __init__(self, counts: np.ndarray):
        self.counts = counts
        emittable = np.ones(len(CHARS), dtype=bool)
        emittable[CHARS.start] = False
        smoothed = (counts + 1.0) * emittable
        self.probs = smoothed / smoothed.sum(axis=1, keepdims=True)
        open_ = smoothed.copy()
        open_[:, CHARS.end] = 0.0
        # same rows with end-of-sentence removed, for unfinished transcripts
        self.open_probs = open_ / open_.sum(axis=1, keepdims=True)

    @classmethod
    def estimate(cls, texts) -> "CharBigram":
        n = len(CHARS)
        counts = np.zeros((n, n))
        for text in texts:
            tokens = (CHARS.start,) + CHARS.encode(text) + (CHARS.end,)
            for prev, cur in zip(tokens, tokens[1:]):
                counts[prev, cur] += 1
        return cls(counts)

    def prob(self, char: int, prev: int) -> float:
        return float(self.probs[prev, char])


class CharScorer:
    """One-hot on the expected next character mixed with a character bigram.

    The expected character is the one at the prefix's length in the
    scorer's transcript, or end-of-sentence once the transcript is
    exhausted. Mixture weight ``fidelity`` goes to the one-hot; until the
    transcript is exhausted the bigram part excludes end-of-sentence.

    ``transcript`` is what the scorer perceived and ``truth`` what was said.
    The one-hot sits on the true character; where the two differ (a
    misread) the misread character additionally takes ``MISREAD_WEIGHT`` of
    the mass, so it wins the position while the truth keeps some support.
    """

    num_classes = len(CHARS)

    def __init__(self, transcript: Sequence[int], fidelity: float, bigram: CharBigram,
                 truth: Optional[Sequence[int]] = None):
        if not 0.0 <= fidelity <= 1.0:
            raise ValueError("fidelity must lie in [0, 1]")
        self.transcript = tuple(transcript)
        self.truth = self.transcript if truth is None else tuple(truth)
        if len(self.truth) != len(self.transcript):
            raise ValueError("truth and transcript must have equal length")
        self.fidelity = fidelity
        self.bigram = bigram
        self._cache: dict[tuple[int, int], np.ndarray] = {}

    def probs(self, prefix: tuple[int, ...]) -> np.ndarray:
        pos = min(len(prefix), len(self.transcript))
        prev = prefix[-1] if prefix else CHARS.start
        if pos == len(self.transcript):
            p = (1.0 - self.fidelity) * self.bigram.probs[prev]
            p[CHARS.end] += self.fidelity
            return p
        p = (1.0 - self.fidelity) * self.bigram.open_probs[prev]
        p[self.truth[pos]] += self.fidelity
        if self.transcript[pos] != self.truth[pos]:
            p *= 1.0 - MISREAD_WEIGHT
            p[self.transcript[pos]] += MISREAD_WEIGHT
        return p

    def log_probs(self, handle: Hashable, prefix: tuple[int, ...]) -> np.ndarray:
        pos = min(len(prefix), len(self.transcript))
        key = (pos, prefix[-1] if prefix else CHARS.start)
        out = self._cache.get(key)
        if out is None:
            with np.errstate(divide="ignore"):
                out = self._cache[key] = np.log(self.probs(prefix))
        return out.copy()


def build_char_scorer(world: SyntheticWorld, transcript: str, fidelity: float,
                      truth: Optional[str] = None) -> CharScorer:
    def encode(text):
        try:
            tokens = CHARS.encode(text)
        except BeamError as e:
            raise ValueError(str(e)) from None
        if CHARS.start in tokens or CHARS.end in tokens:
            raise ValueError("transcript may not contain start or end tokens")
        return tokens

    return CharScorer(encode(transcript), fidelity, world.char_bigram,
                      None if truth is None else encode(truth))


def perceive_text(truth: str, error_rate: float, key: Sequence[int],
                  bigram: Optional[CharBigram] = None) -> str:
    """Replace characters of ``truth`` at ``error_rate``.

    Replacements are uniform over letters and space, or drawn from
    ``bigram`` given the previous true character (never the true one) when
    a bigram is supplied. The draws depend only on ``key``, so lower rates
    corrupt a subset of the positions corrupted at higher rates.
    """
    rng = np.random.default_rng(list(key))
    u = rng.random(len(truth))
    v = rng.random(len(truth))
    pool = CHARS.symbols[:27]
    out = []
    prev = CHARS.start
    for ch, x, y in zip(truth, u, v):
        cur = CHARS.index(ch)
        if x < error_rate:
            if bigram is None:
                w = np.ones(27)
            else:
                w = bigram.open_probs[prev, :27].copy()
            w[cur] = 0.0
            cdf = np.cumsum(w / w.sum())
            out.append(pool[min(int(np.searchsorted(cdf, y, side="right")), 26)])
        else:
            out.append(ch)
        prev = cur
    return "".join(out)


def modality_scorers(world: SyntheticWorld, a: Alignment, snr: SnrModel,
                     confusion: float = DEFAULT_CHAR_CONFUSION) -> tuple[CharScorer, CharScorer]:
    """Audio and visual character scorers for one utterance at one SNR.

    Audio fidelity is ``1 - alpha(snr)``; visual fidelity is the fixed
    visual accuracy. Each side misreads characters at ``confusion`` times
    its corruption level.
    """
    truth = a.text
    bg = world.char_bigram
    heard = perceive_text(truth, confusion * snr.alpha, [*a.key, _AUDIO_TEXT], bg)
    seen = perceive_text(truth, confusion * snr.visual_alpha, [*a.key, _VISUAL_TEXT], bg)
    return (build_char_scorer(world, heard, 1.0 - snr.alpha, truth),
            build_char_scorer(world, seen, snr.visual_accuracy, truth))
